#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "podnn/adam.hpp"
#include "podnn/ops.hpp"
#include "podnn/rng.hpp"
#include "podnn/tape.hpp"

namespace podnn {

template <class S>
using Id = typename TapeT<S>::Id;

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

template <class S>
struct ConvLayer {
    ParamT<S> w, b;
    Id<S> wid = -1, bid = -1;

    void init(Rng& rng, int in_ch, int out_ch) {
        TensorT<S> wt({out_ch, in_ch, 3, 3});
        const double bound = std::sqrt(6.0 / (in_ch * 9));
        for (int64_t i = 0; i < wt.size(); ++i) wt[i] = static_cast<S>(rng.uniform(-bound, bound));
        w = ParamT<S>(std::move(wt));
        b = ParamT<S>(TensorT<S>({out_ch}));
    }

    void bind(TapeT<S>& t, bool trainable) {
        wid = t.leaf(w.value, trainable);
        bid = t.leaf(b.value, trainable);
    }

    Id<S> forward(TapeT<S>& t, Id<S> x) const { return ops::conv2d(t, x, wid, bid); }
};

template <class S>
struct BnLayer {
    ParamT<S> gamma, beta;
    ops::BnRunningStats<S> running;
    S momentum = S(0.9);
    S eps = S(1e-5);
    Id<S> gid = -1, bid = -1;

    void init(int channels) {
        gamma = ParamT<S>(TensorT<S>::full({channels}, S(1)));
        beta = ParamT<S>(TensorT<S>({channels}));
        running.mean = TensorT<S>({channels});
        running.var = TensorT<S>::full({channels}, S(1));
    }

    void bind(TapeT<S>& t, bool trainable) {
        gid = t.leaf(gamma.value, trainable);
        bid = t.leaf(beta.value, trainable);
    }

    Id<S> forward(TapeT<S>& t, Id<S> x, bool training) {
        if (training) return ops::batchnorm_train(t, x, gid, bid, running, momentum, eps);
        return ops::batchnorm_infer(t, x, gid, bid, running, eps);
    }
};

template <class S>
struct DenseLayer {
    ParamT<S> w, b;
    Id<S> wid = -1, bid = -1;

    void init(Rng& rng, int in_dim, int out_dim) {
        TensorT<S> wt({in_dim, out_dim});
        const double bound = std::sqrt(6.0 / in_dim);
        for (int64_t i = 0; i < wt.size(); ++i) wt[i] = static_cast<S>(rng.uniform(-bound, bound));
        w = ParamT<S>(std::move(wt));
        b = ParamT<S>(TensorT<S>({out_dim}));
    }

    void bind(TapeT<S>& t, bool trainable) {
        wid = t.leaf(w.value, trainable);
        bid = t.leaf(b.value, trainable);
    }

    Id<S> forward(TapeT<S>& t, Id<S> x) const { return ops::dense(t, x, wid, bid); }
};

// ---------------------------------------------------------------------------
// expert: conv(ch,3x3,BN,ELU) x4, then conv(1,3x3,sigmoid)
// ---------------------------------------------------------------------------

// The cross-expert orthogonalization splices in after the fourth conv block,
// so the forward pass is split at that point ("layer P").
template <class S>
class ExpertNet {
public:
    ExpertNet() = default;

    ExpertNet(Rng rng, int channels) : channels_(channels) {
        conv_[0].init(rng, 1, channels_);
        for (int i = 1; i < 4; ++i) conv_[i].init(rng, channels_, channels_);
        for (int i = 0; i < 4; ++i) bn_[i].init(channels_);
        conv_[4].init(rng, channels_, 1);
    }

    int channels() const { return channels_; }

    void bind(TapeT<S>& t, bool trainable) {
        for (auto& c : conv_) c.bind(t, trainable);
        for (auto& b : bn_) b.bind(t, trainable);
    }

    // Input image batch -> features at layer P.
    Id<S> forward_to_p(TapeT<S>& t, Id<S> x, bool training) {
        Id<S> h = x;
        for (int i = 0; i < 4; ++i) {
            h = conv_[i].forward(t, h);
            h = bn_[i].forward(t, h, training);
            h = ops::elu(t, h);
        }
        return h;
    }

    // Features at layer P (possibly orthogonalized) -> output image in (0,1).
    Id<S> forward_from_p(TapeT<S>& t, Id<S> v) const {
        return ops::sigmoid(t, conv_[4].forward(t, v));
    }

    Id<S> forward(TapeT<S>& t, Id<S> x, bool training) {
        return forward_from_p(t, forward_to_p(t, x, training));
    }

    std::vector<ParamT<S>*> params() {
        std::vector<ParamT<S>*> out;
        for (int i = 0; i < 5; ++i) {
            out.push_back(&conv_[i].w);
            out.push_back(&conv_[i].b);
            if (i < 4) {
                out.push_back(&bn_[i].gamma);
                out.push_back(&bn_[i].beta);
            }
        }
        return out;
    }

    std::vector<Id<S>> param_ids() const {
        std::vector<Id<S>> out;
        for (int i = 0; i < 5; ++i) {
            out.push_back(conv_[i].wid);
            out.push_back(conv_[i].bid);
            if (i < 4) {
                out.push_back(bn_[i].gid);
                out.push_back(bn_[i].bid);
            }
        }
        return out;
    }

    std::vector<std::string> param_names() const {
        std::vector<std::string> out;
        for (int i = 0; i < 5; ++i) {
            const std::string p = "conv" + std::to_string(i + 1);
            out.push_back(p + ".w");
            out.push_back(p + ".b");
            if (i < 4) {
                const std::string q = "bn" + std::to_string(i + 1);
                out.push_back(q + ".gamma");
                out.push_back(q + ".beta");
            }
        }
        return out;
    }

    // Running statistics are persisted alongside parameters in checkpoints.
    std::vector<std::pair<std::string, TensorT<S>*>> state_tensors() {
        std::vector<std::pair<std::string, TensorT<S>*>> out;
        for (int i = 0; i < 4; ++i) {
            const std::string q = "bn" + std::to_string(i + 1);
            out.emplace_back(q + ".running_mean", &bn_[i].running.mean);
            out.emplace_back(q + ".running_var", &bn_[i].running.var);
        }
        return out;
    }

    AdamState adam;

private:
    int channels_ = 16;
    ConvLayer<S> conv_[5];
    BnLayer<S> bn_[4];
};

// ---------------------------------------------------------------------------
// discriminator: [conv16, pool] [conv32, pool] [conv64, pool] dense128 dense1
// ---------------------------------------------------------------------------

template <class S>
struct DiscOut {
    Id<S> score;   // [N], sigmoid output
    Id<S> hidden;  // [N,128], post-ELU activation of the dense-128 layer
};

template <class S>
class DiscriminatorNet {
public:
    static constexpr int kHiddenDim = 128;

    DiscriminatorNet() = default;

    DiscriminatorNet(Rng rng, int height, int width) : height_(height), width_(width) {
        conv_[0].init(rng, 1, 16);
        conv_[1].init(rng, 16, 32);
        conv_[2].init(rng, 32, 64);
        int h = height, w = width;
        for (int i = 0; i < 3; ++i) {
            h = (h + 1) / 2;
            w = (w + 1) / 2;
        }
        flat_dim_ = 64 * h * w;
        dense1_.init(rng, flat_dim_, kHiddenDim);
        dense2_.init(rng, kHiddenDim, 1);
    }

    int height() const { return height_; }
    int width() const { return width_; }

    void bind(TapeT<S>& t, bool trainable) {
        for (auto& c : conv_) c.bind(t, trainable);
        dense1_.bind(t, trainable);
        dense2_.bind(t, trainable);
    }

    DiscOut<S> forward(TapeT<S>& t, Id<S> x) const {
        Id<S> h = x;
        for (int i = 0; i < 3; ++i) {
            h = conv_[i].forward(t, h);
            h = ops::elu(t, h);
            h = ops::avgpool2d(t, h);
        }
        h = ops::flatten_rows(t, h);
        const Id<S> hidden = ops::elu(t, dense1_.forward(t, h));
        const Id<S> score2d = ops::sigmoid(t, dense2_.forward(t, hidden));
        const int n = t.val(score2d).dim(0);
        return {ops::reshape(t, score2d, {n}), hidden};
    }

    // Head-only pass, used to cross-check that score and hidden are consistent.
    Id<S> head_forward(TapeT<S>& t, Id<S> hidden) const {
        const Id<S> s = ops::sigmoid(t, dense2_.forward(t, hidden));
        return ops::reshape(t, s, {t.val(s).dim(0)});
    }

    std::vector<ParamT<S>*> params() {
        std::vector<ParamT<S>*> out;
        for (int i = 0; i < 3; ++i) {
            out.push_back(&conv_[i].w);
            out.push_back(&conv_[i].b);
        }
        out.push_back(&dense1_.w);
        out.push_back(&dense1_.b);
        out.push_back(&dense2_.w);
        out.push_back(&dense2_.b);
        return out;
    }

    std::vector<Id<S>> param_ids() const {
        std::vector<Id<S>> out;
        for (int i = 0; i < 3; ++i) {
            out.push_back(conv_[i].wid);
            out.push_back(conv_[i].bid);
        }
        out.push_back(dense1_.wid);
        out.push_back(dense1_.bid);
        out.push_back(dense2_.wid);
        out.push_back(dense2_.bid);
        return out;
    }

    std::vector<std::string> param_names() const {
        std::vector<std::string> out;
        for (int i = 0; i < 3; ++i) {
            const std::string p = "conv" + std::to_string(i + 1);
            out.push_back(p + ".w");
            out.push_back(p + ".b");
        }
        out.insert(out.end(), {"dense1.w", "dense1.b", "dense2.w", "dense2.b"});
        return out;
    }

    std::vector<std::pair<std::string, TensorT<S>*>> state_tensors() { return {}; }

    AdamState adam;

private:
    int height_ = 0, width_ = 0;
    int flat_dim_ = 0;
    ConvLayer<S> conv_[3];
    DenseLayer<S> dense1_, dense2_;
};

// ---------------------------------------------------------------------------
// cross-expert Gram-Schmidt orthogonalization
// ---------------------------------------------------------------------------

template <class S>
struct OrthResult {
    std::vector<Id<S>> v;     // same shapes as the inputs
    int64_t degenerate_skips = 0;  // projection terms dropped on near-zero norms
};

// v_k = u_k - sum_{i<k} (<v_i,u_k>/<v_i,v_i>) v_i, applied per sample on the
// flattened feature vector. The first expert passes through untouched. With
// `block_cross` set, earlier experts' v_i are treated as constants, which cuts
// the gradient paths into other experts while leaving each expert's own
// gradient unchanged (expert parameter sets are disjoint).
template <class S>
OrthResult<S> orthogonalize(TapeT<S>& t, const std::vector<Id<S>>& u, bool block_cross,
                            S degenerate_eps = S(1e-12)) {
    OrthResult<S> out;
    if (u.empty()) throw std::invalid_argument("orthogonalize: no inputs");
    const std::vector<int> shape = t.val(u[0]).shape;
    for (Id<S> ui : u) {
        if (t.val(ui).shape != shape) {
            throw std::invalid_argument("orthogonalize: experts disagree on feature shape");
        }
    }
    const int k = static_cast<int>(u.size());
    std::vector<Id<S>> flat(u.size());
    for (int i = 0; i < k; ++i) flat[i] = ops::flatten_rows(t, u[i]);
    const int n = t.val(flat[0]).dim(0);

    std::vector<Id<S>> vflat(u.size());
    vflat[0] = flat[0];
    for (int i = 1; i < k; ++i) {
        // Projection coefficients are taken against the original u_k (classical
        // Gram-Schmidt), matching the recurrence this layer is defined by.
        Id<S> w = flat[i];
        for (int j = 0; j < i; ++j) {
            const Id<S> vj = block_cross ? ops::detach(t, vflat[j]) : vflat[j];
            const Id<S> den = ops::row_dot(t, vj, vj);
            std::vector<uint8_t> mask(n, 1);
            const TensorT<S>& dv = t.val(den);
            for (int s = 0; s < n; ++s) {
                if (!(dv[s] >= degenerate_eps)) {
                    mask[s] = 0;
                    out.degenerate_skips += 1;
                }
            }
            const Id<S> num = ops::row_dot(t, vj, flat[i]);
            const Id<S> coef = ops::masked_ratio(t, num, den, std::move(mask));
            w = ops::sub(t, w, ops::row_scale(t, coef, vj));
        }
        vflat[i] = w;
    }

    out.v.resize(u.size());
    out.v[0] = u[0];
    for (int i = 1; i < k; ++i) out.v[i] = ops::reshape(t, vflat[i], shape);
    return out;
}

// Largest normalized pairwise inner product across samples and expert pairs,
// ignoring pairs where either vector's squared norm falls below the
// degenerate threshold. Forward values only; no tape traffic.
template <class S>
double orthogonality_residual(const TapeT<S>& t, const std::vector<Id<S>>& v,
                              double degenerate_eps = 1e-12) {
    if (v.size() < 2) return 0.0;
    const int n = t.val(v[0]).dim(0);
    const int64_t d = t.val(v[0]).size() / n;
    double worst = 0.0;
    for (size_t a = 0; a + 1 < v.size(); ++a) {
        for (size_t b = a + 1; b < v.size(); ++b) {
            const TensorT<S>& va = t.val(v[a]);
            const TensorT<S>& vb = t.val(v[b]);
            for (int s = 0; s < n; ++s) {
                const S* pa = va.data() + s * d;
                const S* pb = vb.data() + s * d;
                double dot = 0.0, na = 0.0, nb = 0.0;
                for (int64_t i = 0; i < d; ++i) {
                    dot += static_cast<double>(pa[i]) * static_cast<double>(pb[i]);
                    na += static_cast<double>(pa[i]) * static_cast<double>(pa[i]);
                    nb += static_cast<double>(pb[i]) * static_cast<double>(pb[i]);
                }
                if (na < degenerate_eps || nb < degenerate_eps) continue;
                const double r = std::abs(dot) / std::sqrt(na * nb);
                if (r > worst) worst = r;
            }
        }
    }
    return worst;
}

// ---------------------------------------------------------------------------
// expert ensemble (PODNN)
// ---------------------------------------------------------------------------

template <class S>
struct EnsembleOut {
    std::vector<Id<S>> outputs;   // per-expert reconstructed images
    std::vector<Id<S>> layer_p;   // per-expert features entering conv5 (v_i)
    double orth_residual = 0.0;
    int64_t degenerate_skips = 0;
};

// Fixed expert ordering; the Gram-Schmidt recurrence follows construction
// order. With orthogonalization off every expert runs independently.
template <class S>
class PodnnEnsemble {
public:
    PodnnEnsemble() = default;

    PodnnEnsemble(uint64_t seed, int n_experts, int channels, bool orthogonalization)
        : orthogonalization_(orthogonalization) {
        experts_.reserve(n_experts);
        for (int i = 0; i < n_experts; ++i) {
            experts_.emplace_back(Rng::stream(seed, 0x45585045 + static_cast<uint64_t>(i)), channels);
        }
    }

    int size() const { return static_cast<int>(experts_.size()); }
    bool orthogonalization() const { return orthogonalization_; }
    ExpertNet<S>& expert(int i) { return experts_[i]; }
    const ExpertNet<S>& expert(int i) const { return experts_[i]; }

    void bind(TapeT<S>& t, bool trainable) {
        for (auto& e : experts_) e.bind(t, trainable);
    }

    EnsembleOut<S> forward_all(TapeT<S>& t, Id<S> x, bool training, bool block_cross) {
        EnsembleOut<S> out;
        std::vector<Id<S>> u(experts_.size());
        for (size_t i = 0; i < experts_.size(); ++i) {
            u[i] = experts_[i].forward_to_p(t, x, training);
        }
        if (orthogonalization_ && experts_.size() > 1) {
            OrthResult<S> orth = orthogonalize(t, u, block_cross);
            out.layer_p = orth.v;
            out.degenerate_skips = orth.degenerate_skips;
            out.orth_residual = orthogonality_residual(t, orth.v);
        } else {
            out.layer_p = u;
        }
        out.outputs.resize(experts_.size());
        for (size_t i = 0; i < experts_.size(); ++i) {
            out.outputs[i] = experts_[i].forward_from_p(t, out.layer_p[i]);
        }
        return out;
    }

private:
    std::vector<ExpertNet<S>> experts_;
    bool orthogonalization_ = true;
};

} // namespace podnn
