#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "podnn/tensor.hpp"

namespace podnn {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One trainable tensor plus its Adam moment accumulators.
template <class S>
struct ParamT {
    TensorT<S> value;
    TensorT<S> m;
    TensorT<S> v;

    explicit ParamT(TensorT<S> init = TensorT<S>())
        : value(std::move(init)), m(value.shape), v(value.shape) {}

    void reset_moments() {
        m = TensorT<S>(value.shape);
        v = TensorT<S>(value.shape);
    }
};

// Moment accumulators live inside each parameter; the state shared across a
// network's parameters is the step counter.
struct AdamState {
    int64_t step = 0;
};

// Standard Adam update with bias correction. `grads` align 1:1 with `params`;
// the step counter advances exactly once per call.
template <class S>
void adam_step(std::vector<ParamT<S>*>& params, const std::vector<TensorT<S>>& grads,
               AdamState& state, const AdamConfig& cfg) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
    }
    state.step += 1;
    const double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t p = 0; p < params.size(); ++p) {
        ParamT<S>& pr = *params[p];
        const TensorT<S>& g = grads[p];
        if (g.shape != pr.value.shape) {
            throw std::invalid_argument("adam_step: gradient shape " + g.shape_str() +
                                        " does not match parameter " + pr.value.shape_str());
        }
        for (int64_t i = 0; i < pr.value.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = cfg.beta1 * static_cast<double>(pr.m[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * static_cast<double>(pr.v[i]) + (1.0 - cfg.beta2) * gi * gi;
            pr.m[i] = static_cast<S>(mi);
            pr.v[i] = static_cast<S>(vi);
            const double mhat = mi / b1t;
            const double vhat = vi / b2t;
            pr.value[i] -= static_cast<S>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

} // namespace podnn
