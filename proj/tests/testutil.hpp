#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "podnn/tensor.hpp"

// Shared helpers for the test suites: finite-difference gradients and naive
// reference kernels, all written independently of the production op path.

namespace testutil {

using podnn::Tensor;

// Central finite differences of a scalar functional with respect to one
// tensor argument. `eval` must rebuild the computation from scratch.
inline Tensor fd_grad(const std::function<double(const Tensor&)>& eval, const Tensor& at,
                      double h = 1e-5) {
    Tensor g(at.shape);
    Tensor x = at;
    for (int64_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double fp = eval(x);
        x[i] = keep - h;
        const double fm = eval(x);
        x[i] = keep;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline double max_rel_err(const Tensor& got, const Tensor& want, double floor = 1e-6) {
    double worst = 0.0;
    for (int64_t i = 0; i < got.size(); ++i) {
        const double denom = std::max(std::abs(want[i]), floor);
        const double e = std::abs(got[i] - want[i]) / denom;
        if (e > worst) worst = e;
    }
    return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

// Direct sliding-window convolution, 3x3, stride 1, zero padding.
inline Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int F = w.dim(0);
    Tensor y({N, F, H, W});
    for (int n = 0; n < N; ++n)
        for (int f = 0; f < F; ++f)
            for (int yy = 0; yy < H; ++yy)
                for (int xx = 0; xx < W; ++xx) {
                    double acc = b[f];
                    for (int c = 0; c < C; ++c)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                const int sy = yy + ky - 1;
                                const int sx = xx + kx - 1;
                                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                                acc += w[((static_cast<int64_t>(f) * C + c) * 3 + ky) * 3 + kx] *
                                       x[((static_cast<int64_t>(n) * C + c) * H + sy) * W + sx];
                            }
                    y[((static_cast<int64_t>(n) * F + f) * H + yy) * W + xx] = acc;
                }
    return y;
}

inline Tensor naive_avgpool2d(const Tensor& x) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = (H + 1) / 2, Wo = (W + 1) / 2;
    Tensor y({N, C, Ho, Wo});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    double acc = 0.0;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const int sy = std::min(2 * oy + dy, H - 1);
                            const int sx = std::min(2 * ox + dx, W - 1);
                            acc += x[((static_cast<int64_t>(n) * C + c) * H + sy) * W + sx];
                        }
                    y[((static_cast<int64_t>(n) * C + c) * Ho + oy) * Wo + ox] = acc / 4.0;
                }
    return y;
}

inline Tensor naive_dense(const Tensor& x, const Tensor& w, const Tensor& b) {
    const int N = x.dim(0), D = x.dim(1), K = w.dim(1);
    Tensor y({N, K});
    for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k) {
            double acc = b[k];
            for (int d = 0; d < D; ++d) acc += x[n * D + d] * w[d * K + k];
            y[n * K + k] = acc;
        }
    return y;
}

} // namespace testutil
