#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "podnn/tape.hpp"
#include "podnn/tensor.hpp"

// Differentiable primitives. Each op validates shapes, computes the forward
// value eagerly and records a backward closure on the tape. Kernels are
// written as contiguous row operations so the compiler can vectorize them;
// arithmetic stays plain IEEE (no fast-math assumptions anywhere).

namespace podnn {
namespace ops {

template <class S>
using Id = typename TapeT<S>::Id;

namespace detail {

inline void fail_dim(const char* op, const char* what, int got, int expect) {
    throw std::invalid_argument(std::string(op) + ": " + what + " mismatch, got " +
                                std::to_string(got) + ", expected " + std::to_string(expect));
}

template <class S>
inline void require_ndim(const char* op, const TensorT<S>& t, int nd) {
    if (t.ndim() != nd) {
        throw std::invalid_argument(std::string(op) + ": expected " + std::to_string(nd) +
                                    "-d tensor, got shape " + t.shape_str());
    }
}

template <class S>
inline void require_same_shape(const char* op, const TensorT<S>& a, const TensorT<S>& b) {
    if (a.shape != b.shape) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// convolution: 3x3 kernel, stride 1, zero-padded "same"
// ---------------------------------------------------------------------------

namespace detail {

// Zero-padded copy (one-pixel border) of a [N,C,H,W] tensor. The padding
// turns every 3x3 tap into a contiguous row read, which keeps the hot loops
// below vectorizable.
template <class S>
std::shared_ptr<TensorT<S>> pad_one(const TensorT<S>& x) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    auto out = std::make_shared<TensorT<S>>(std::vector<int>{N, C, H + 2, W + 2});
    const int Wp = W + 2;
    for (int nc = 0; nc < N * C; ++nc) {
        const S* src = x.data() + static_cast<int64_t>(nc) * H * W;
        S* dst = out->data() + static_cast<int64_t>(nc) * (H + 2) * Wp;
        for (int yy = 0; yy < H; ++yy) {
            S* row = dst + (yy + 1) * Wp + 1;
            const S* srow = src + yy * W;
            for (int xx = 0; xx < W; ++xx) row[xx] = srow[xx];
        }
    }
    return out;
}

// y[n,f] row += 9-tap stencil over the padded input rows.
template <class S>
void conv3x3_rows(const S* __restrict pad, int Wp, const S* __restrict w9, S* __restrict out_row,
                  int width) {
    const S* __restrict r0 = pad;
    const S* __restrict r1 = pad + Wp;
    const S* __restrict r2 = pad + 2 * Wp;
    const S w00 = w9[0], w01 = w9[1], w02 = w9[2];
    const S w10 = w9[3], w11 = w9[4], w12 = w9[5];
    const S w20 = w9[6], w21 = w9[7], w22 = w9[8];
    for (int xx = 0; xx < width; ++xx) {
        out_row[xx] += w00 * r0[xx] + w01 * r0[xx + 1] + w02 * r0[xx + 2] +
                       w10 * r1[xx] + w11 * r1[xx + 1] + w12 * r1[xx + 2] +
                       w20 * r2[xx] + w21 * r2[xx + 1] + w22 * r2[xx + 2];
    }
}

// Per-tap accumulation for the weight gradient, kept in SIMD-friendly lane
// arrays; callers reduce the lanes afterwards.
template <class S, int kLanes = 16>
struct TapLanes {
    S lane[9][kLanes] = {};

    void accumulate(const S* __restrict g, const S* __restrict r0, const S* __restrict r1,
                    const S* __restrict r2, int width) {
        int xx = 0;
        for (; xx + kLanes <= width; xx += kLanes) {
            for (int l = 0; l < kLanes; ++l) {
                const S gv = g[xx + l];
                lane[0][l] += gv * r0[xx + l];
                lane[1][l] += gv * r0[xx + l + 1];
                lane[2][l] += gv * r0[xx + l + 2];
                lane[3][l] += gv * r1[xx + l];
                lane[4][l] += gv * r1[xx + l + 1];
                lane[5][l] += gv * r1[xx + l + 2];
                lane[6][l] += gv * r2[xx + l];
                lane[7][l] += gv * r2[xx + l + 1];
                lane[8][l] += gv * r2[xx + l + 2];
            }
        }
        for (; xx < width; ++xx) {
            const S gv = g[xx];
            lane[0][0] += gv * r0[xx];
            lane[1][0] += gv * r0[xx + 1];
            lane[2][0] += gv * r0[xx + 2];
            lane[3][0] += gv * r1[xx];
            lane[4][0] += gv * r1[xx + 1];
            lane[5][0] += gv * r1[xx + 2];
            lane[6][0] += gv * r2[xx];
            lane[7][0] += gv * r2[xx + 1];
            lane[8][0] += gv * r2[xx + 2];
        }
    }

    void reduce_into(S* __restrict gw9) const {
        for (int tap = 0; tap < 9; ++tap) {
            S acc = S(0);
            for (int l = 0; l < kLanes; ++l) acc += lane[tap][l];
            gw9[tap] += acc;
        }
    }
};

} // namespace detail

template <class S>
Id<S> conv2d(TapeT<S>& t, Id<S> x, Id<S> w, Id<S> b) {
    const TensorT<S>& xv = t.val(x);
    const TensorT<S>& wv = t.val(w);
    const TensorT<S>& bv = t.val(b);
    detail::require_ndim("conv2d", xv, 4);
    detail::require_ndim("conv2d", wv, 4);
    detail::require_ndim("conv2d", bv, 1);
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int F = wv.dim(0);
    if (wv.dim(1) != C) detail::fail_dim("conv2d", "input channels", wv.dim(1), C);
    if (wv.dim(2) != 3 || wv.dim(3) != 3) {
        throw std::invalid_argument("conv2d: kernel must be 3x3, got " + wv.shape_str());
    }
    if (bv.dim(0) != F) detail::fail_dim("conv2d", "bias filters", bv.dim(0), F);

    const int64_t plane = static_cast<int64_t>(H) * W;
    const int Wp = W + 2;
    const int64_t pplane = static_cast<int64_t>(H + 2) * Wp;
    const auto xpad = detail::pad_one(xv);

    TensorT<S> y({N, F, H, W});
    for (int n = 0; n < N; ++n) {
        for (int f = 0; f < F; ++f) {
            S* yp = y.data() + (static_cast<int64_t>(n) * F + f) * plane;
            const S bias = bv[f];
            for (int64_t i = 0; i < plane; ++i) yp[i] = bias;
            for (int c = 0; c < C; ++c) {
                const S* pp = xpad->data() + (static_cast<int64_t>(n) * C + c) * pplane;
                const S* w9 = wv.data() + (static_cast<int64_t>(f) * C + c) * 9;
                for (int yy = 0; yy < H; ++yy) {
                    detail::conv3x3_rows(pp + yy * Wp, Wp, w9, yp + yy * W, W);
                }
            }
        }
    }

    const bool ng = t.needs(x) || t.needs(w) || t.needs(b);
    const Id<S> self = static_cast<Id<S>>(t.size());
    return t.record(std::move(y), ng, [=](TapeT<S>& tp) {
        const TensorT<S>& gy = tp.grad_acc(self);
        const TensorT<S>& wvv = tp.val(w);
        const bool nx = tp.needs(x), nw = tp.needs(w), nb = tp.needs(b);
        if (nb) {
            TensorT<S>& gb = tp.grad_acc(b);
            for (int n = 0; n < N; ++n) {
                for (int f = 0; f < F; ++f) {
                    const S* gp = gy.data() + (static_cast<int64_t>(n) * F + f) * plane;
                    S acc = S(0);
                    for (int64_t i = 0; i < plane; ++i) acc += gp[i];
                    gb[f] += acc;
                }
            }
        }
        if (nx || nw) {
            const auto gpad = detail::pad_one(gy);
            if (nx) {
                // input gradient is the correlation with the flipped kernel
                TensorT<S>& gx = tp.grad_acc(x);
                for (int n = 0; n < N; ++n) {
                    for (int c = 0; c < C; ++c) {
                        S* gxp = gx.data() + (static_cast<int64_t>(n) * C + c) * plane;
                        for (int f = 0; f < F; ++f) {
                            const S* gpp =
                                gpad->data() + (static_cast<int64_t>(n) * F + f) * pplane;
                            const S* w9 = wvv.data() + (static_cast<int64_t>(f) * C + c) * 9;
                            const S wr[9] = {w9[8], w9[7], w9[6], w9[5], w9[4],
                                             w9[3], w9[2], w9[1], w9[0]};
                            for (int yy = 0; yy < H; ++yy) {
                                detail::conv3x3_rows(gpp + yy * Wp, Wp, wr, gxp + yy * W, W);
                            }
                        }
                    }
                }
            }
            if (nw) {
                TensorT<S>& gw = tp.grad_acc(w);
                auto grad_weights = [&](auto lanes_tag) {
                    using Lanes = decltype(lanes_tag);
                    for (int f = 0; f < F; ++f) {
                        for (int c = 0; c < C; ++c) {
                            Lanes lanes;
                            for (int n = 0; n < N; ++n) {
                                const S* gp =
                                    gy.data() + (static_cast<int64_t>(n) * F + f) * plane;
                                const S* pp =
                                    xpad->data() + (static_cast<int64_t>(n) * C + c) * pplane;
                                for (int yy = 0; yy < H; ++yy) {
                                    const S* r0 = pp + yy * Wp;
                                    lanes.accumulate(gp + yy * W, r0, r0 + Wp, r0 + 2 * Wp, W);
                                }
                            }
                            lanes.reduce_into(gw.data() + (static_cast<int64_t>(f) * C + c) * 9);
                        }
                    }
                };
                // lane count matched to the plane width so small feature maps
                // still fill the vector unit
                if (W % 16 == 0) {
                    grad_weights(detail::TapLanes<S, 16>{});
                } else if (W % 8 == 0) {
                    grad_weights(detail::TapLanes<S, 8>{});
                } else if (W % 4 == 0) {
                    grad_weights(detail::TapLanes<S, 4>{});
                } else {
                    grad_weights(detail::TapLanes<S, 1>{});
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// average pooling: 2x2 window, stride 2, edge replication when H or W is odd
// ---------------------------------------------------------------------------

template <class S>
Id<S> avgpool2d(TapeT<S>& t, Id<S> x) {
    const TensorT<S>& xv = t.val(x);
    detail::require_ndim("avgpool2d", xv, 4);
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int Ho = (H + 1) / 2, Wo = (W + 1) / 2;
    const int64_t plane = static_cast<int64_t>(H) * W;
    const int64_t oplane = static_cast<int64_t>(Ho) * Wo;

    TensorT<S> y({N, C, Ho, Wo});
    for (int nc = 0; nc < N * C; ++nc) {
        const S* xp = xv.data() + nc * plane;
        S* yp = y.data() + nc * oplane;
        for (int oy = 0; oy < Ho; ++oy) {
            const int y0 = 2 * oy;
            const int y1 = y0 + 1 < H ? y0 + 1 : H - 1;
            for (int ox = 0; ox < Wo; ++ox) {
                const int x0 = 2 * ox;
                const int x1 = x0 + 1 < W ? x0 + 1 : W - 1;
                yp[oy * Wo + ox] =
                    (xp[y0 * W + x0] + xp[y0 * W + x1] + xp[y1 * W + x0] + xp[y1 * W + x1]) / S(4);
            }
        }
    }

    const Id<S> self = static_cast<Id<S>>(t.size());
    return t.record(std::move(y), t.needs(x), [=](TapeT<S>& tp) {
        if (!tp.needs(x)) return;
        const TensorT<S>& gy = tp.grad_acc(self);
        TensorT<S>& gx = tp.grad_acc(x);
        for (int nc = 0; nc < N * C; ++nc) {
            const S* gp = gy.data() + nc * oplane;
            S* gxp = gx.data() + nc * plane;
            for (int oy = 0; oy < Ho; ++oy) {
                const int y0 = 2 * oy;
                const int y1 = y0 + 1 < H ? y0 + 1 : H - 1;
                for (int ox = 0; ox < Wo; ++ox) {
                    const int x0 = 2 * ox;
                    const int x1 = x0 + 1 < W ? x0 + 1 : W - 1;
                    const S g = gp[oy * Wo + ox] / S(4);
                    gxp[y0 * W + x0] += g;
                    gxp[y0 * W + x1] += g;
                    gxp[y1 * W + x0] += g;
                    gxp[y1 * W + x1] += g;
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// dense (affine) layer: x[N,D] * w[D,K] + b[K]
// ---------------------------------------------------------------------------

template <class S>
Id<S> dense(TapeT<S>& t, Id<S> x, Id<S> w, Id<S> b) {
    const TensorT<S>& xv = t.val(x);
    const TensorT<S>& wv = t.val(w);
    const TensorT<S>& bv = t.val(b);
    detail::require_ndim("dense", xv, 2);
    detail::require_ndim("dense", wv, 2);
    detail::require_ndim("dense", bv, 1);
    const int N = xv.dim(0), D = xv.dim(1), K = wv.dim(1);
    if (wv.dim(0) != D) detail::fail_dim("dense", "input features", wv.dim(0), D);
    if (bv.dim(0) != K) detail::fail_dim("dense", "bias units", bv.dim(0), K);

    TensorT<S> y({N, K});
    for (int n = 0; n < N; ++n) {
        S* yr = y.data() + static_cast<int64_t>(n) * K;
        for (int k = 0; k < K; ++k) yr[k] = bv[k];
        const S* xr = xv.data() + static_cast<int64_t>(n) * D;
        for (int d = 0; d < D; ++d) {
            const S xd = xr[d];
            const S* wr = wv.data() + static_cast<int64_t>(d) * K;
            for (int k = 0; k < K; ++k) yr[k] += xd * wr[k];
        }
    }

    const bool ng = t.needs(x) || t.needs(w) || t.needs(b);
    const Id<S> self = static_cast<Id<S>>(t.size());
    return t.record(std::move(y), ng, [=](TapeT<S>& tp) {
        const TensorT<S>& gy = tp.grad_acc(self);
        const TensorT<S>& xvv = tp.val(x);
        const TensorT<S>& wvv = tp.val(w);
        if (tp.needs(b)) {
            TensorT<S>& gb = tp.grad_acc(b);
            for (int n = 0; n < N; ++n) {
                const S* gr = gy.data() + static_cast<int64_t>(n) * K;
                for (int k = 0; k < K; ++k) gb[k] += gr[k];
            }
        }
        if (tp.needs(x)) {
            TensorT<S>& gx = tp.grad_acc(x);
            for (int n = 0; n < N; ++n) {
                const S* gr = gy.data() + static_cast<int64_t>(n) * K;
                S* gxr = gx.data() + static_cast<int64_t>(n) * D;
                for (int d = 0; d < D; ++d) {
                    const S* wr = wvv.data() + static_cast<int64_t>(d) * K;
                    S acc = S(0);
                    for (int k = 0; k < K; ++k) acc += gr[k] * wr[k];
                    gxr[d] += acc;
                }
            }
        }
        if (tp.needs(w)) {
            TensorT<S>& gw = tp.grad_acc(w);
            for (int n = 0; n < N; ++n) {
                const S* gr = gy.data() + static_cast<int64_t>(n) * K;
                const S* xr = xvv.data() + static_cast<int64_t>(n) * D;
                for (int d = 0; d < D; ++d) {
                    const S xd = xr[d];
                    S* gwr = gw.data() + static_cast<int64_t>(d) * K;
                    for (int k = 0; k < K; ++k) gwr[k] += xd * gr[k];
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

template <class S>
Id<S> elu(TapeT<S>& t, Id<S> x) {
    const TensorT<S>& xv = t.val(x);
    TensorT<S> y = xv;
    for (int64_t i = 0; i < y.size(); ++i) {
        if (y[i] < S(0)) y[i] = std::exp(y[i]) - S(1);
    }
    const Id<S> self = static_cast<Id<S>>(t.size());
    return t.record(std::move(y), t.needs(x), [=](TapeT<S>& tp) {
        if (!tp.needs(x)) return;
        const TensorT<S>& gy = tp.grad_acc(self);
        const TensorT<S>& yv = tp.val(self);
        const TensorT<S>& xvv = tp.val(x);
        TensorT<S>& gx = tp.grad_acc(x);
        for (int64_t i = 0; i < gx.size(); ++i) {
            gx[i] += xvv[i] >= S(0) ? gy[i] : gy[i] * (yv[i] + S(1));
        }
    });
}

template <class S>
Id<S> sigmoid(TapeT<S>& t, Id<S> x) {
    const TensorT<S>& xv = t.val(x);
    TensorT<S> y = xv;
    for (int64_t i = 0; i < y.size(); ++i) y[i] = S(1) / (S(1) + std::exp(-y[i]));
    const Id<S> self = static_cast<Id<S>>(t.size());
    return t.record(std::move(y), t.needs(x), [=](TapeT<S>& tp) {
        if (!tp.needs(x)) return;
        const TensorT<S>& gy = tp.grad_acc(self);
        const TensorT<S>& yv = tp.val(self);
        TensorT<S>& gx = tp.grad_acc(x);
        for (int64_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * yv[i] * (S(1) - yv[i]);
    });
}

// ---------------------------------------------------------------------------
// batch normalization over [N,C,H,W], statistics per channel
// ---------------------------------------------------------------------------

// Mutable running statistics owned by the layer, updated by training forward.
template <class S>
struct BnRunningStats {
    TensorT<S> mean;
    TensorT<S> var;
};

template <class S>
Id<S> batchnorm_train(TapeT<S>& t, Id<S> x, Id<S> gamma, Id<S> beta, BnRunningStats<S>& running,
                      S momentum, S eps) {
    const TensorT<S>& xv = t.val(x);
    detail::require_ndim("batchnorm", xv, 4);
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (N < 2) {
        throw std::invalid_argument("batchnorm: training mode requires batch size >= 2, got " +
                                    std::to_string(N));
    }
    const TensorT<S>& gv = t.val(gamma);
    const TensorT<S>& bv = t.val(beta);
    if (gv.shape != std::vector<int>{C}) detail::fail_dim("batchnorm", "gamma channels", gv.dim(0), C);
    if (bv.shape != std::vector<int>{C}) detail::fail_dim("batchnorm", "beta channels", bv.dim(0), C);

    const int64_t plane = static_cast<int64_t>(H) * W;
    const int64_t m = static_cast<int64_t>(N) * plane;

    // Per-channel batch statistics (population variance).
    TensorT<S> mean({C}), var({C});
    for (int c = 0; c < C; ++c) {
        S sum = S(0);
        for (int n = 0; n < N; ++n) {
            const S* xp = xv.data() + (static_cast<int64_t>(n) * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) sum += xp[i];
        }
        const S mu = sum / static_cast<S>(m);
        S sq = S(0);
        for (int n = 0; n < N; ++n) {
            const S* xp = xv.data() + (static_cast<int64_t>(n) * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
                const S d = xp[i] - mu;
                sq += d * d;
            }
        }
        mean[c] = mu;
        var[c] = sq / static_cast<S>(m);
    }

    if (running.mean.size() == 0) {
        running.mean = TensorT<S>({C});
        running.var = TensorT<S>::full({C}, S(1));
    }
    for (int c = 0; c < C; ++c) {
        running.mean[c] = momentum * running.mean[c] + (S(1) - momentum) * mean[c];
        running.var[c] = momentum * running.var[c] + (S(1) - momentum) * var[c];
    }

    // Normalized activations are cached for the backward pass.
    auto xhat = std::make_shared<TensorT<S>>(xv.shape);
    auto inv_std = std::make_shared<TensorT<S>>(std::vector<int>{C});
    TensorT<S> y(xv.shape);
    for (int c = 0; c < C; ++c) {
        const S is = S(1) / std::sqrt(var[c] + eps);
        (*inv_std)[c] = is;
        const S mu = mean[c];
        const S ga = gv[c], be = bv[c];
        for (int n = 0; n < N; ++n) {
            const int64_t base = (static_cast<int64_t>(n) * C + c) * plane;
            const S* xp = xv.data() + base;
            S* hp = xhat->data() + base;
            S* yp = y.data() + base;
            for (int64_t i = 0; i < plane; ++i) {
                const S h = (xp[i] - mu) * is;
                hp[i] = h;
                yp[i] = ga * h + be;
            }
        }
    }

    const bool ng = t.needs(x) || t.needs(gamma) || t.needs(beta);
    const Id<S> self = static_cast<Id<S>>(t.size());
    return t.record(std::move(y), ng, [=](TapeT<S>& tp) {
        const TensorT<S>& gy = tp.grad_acc(self);
        const TensorT<S>& gvv = tp.val(gamma);
        for (int c = 0; c < C; ++c) {
            // Channel-wise reductions of the incoming adjoint.
            S sum_g = S(0), sum_gh = S(0);
            for (int n = 0; n < N; ++n) {
                const int64_t base = (static_cast<int64_t>(n) * C + c) * plane;
                const S* gp = gy.data() + base;
                const S* hp = xhat->data() + base;
                for (int64_t i = 0; i < plane; ++i) {
                    sum_g += gp[i];
                    sum_gh += gp[i] * hp[i];
                }
            }
            if (tp.needs(gamma)) tp.grad_acc(gamma)[c] += sum_gh;
            if (tp.needs(beta)) tp.grad_acc(beta)[c] += sum_g;
            if (tp.needs(x)) {
                TensorT<S>& gx = tp.grad_acc(x);
                const S scale = gvv[c] * (*inv_std)[c];
                const S mg = sum_g / static_cast<S>(m);
                const S mgh = sum_gh / static_cast<S>(m);
                for (int n = 0; n < N; ++n) {
                    const int64_t base = (static_cast<int64_t>(n) * C + c) * plane;
                    const S* gp = gy.data() + base;
                    const S* hp = xhat->data() + base;
                    S* gxp = gx.data() + base;
                    for (int64_t i = 0; i < plane; ++i) {
                        gxp[i] += scale * (gp[i] - mg - hp[i] * mgh);
                    }
                }
            }
        }
    });
}

template <class S>
Id<S> batchnorm_infer(TapeT<S>& t, Id<S> x, Id<S> gamma, Id<S> beta,
                      const BnRunningStats<S>& running, S eps) {
    const TensorT<S>& xv = t.val(x);
    detail::require_ndim("batchnorm", xv, 4);
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const TensorT<S>& gv = t.val(gamma);
    const TensorT<S>& bv = t.val(beta);
    const int64_t plane = static_cast<int64_t>(H) * W;

    TensorT<S> scale({C}), shift({C});
    for (int c = 0; c < C; ++c) {
        const S rm = running.mean.size() ? running.mean[c] : S(0);
        const S rv = running.var.size() ? running.var[c] : S(1);
        scale[c] = gv[c] / std::sqrt(rv + eps);
        shift[c] = bv[c] - rm * scale[c];
    }
    TensorT<S> y(xv.shape);
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const int64_t base = (static_cast<int64_t>(n) * C + c) * plane;
            const S* xp = xv.data() + base;
            S* yp = y.data() + base;
            for (int64_t i = 0; i < plane; ++i) yp[i] = scale[c] * xp[i] + shift[c];
        }
    }

    auto scale_keep = std::make_shared<TensorT<S>>(scale);
    const bool ng = t.needs(x) || t.needs(gamma) || t.needs(beta);
    const Id<S> self = static_cast<Id<S>>(t.size());
    return t.record(std::move(y), ng, [=](TapeT<S>& tp) {
        if (!tp.needs(x)) return;
        const TensorT<S>& gy = tp.grad_acc(self);
        TensorT<S>& gx = tp.grad_acc(x);
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < C; ++c) {
                const int64_t base = (static_cast<int64_t>(n) * C + c) * plane;
                const S* gp = gy.data() + base;
                S* gxp = gx.data() + base;
                for (int64_t i = 0; i < plane; ++i) gxp[i] += (*scale_keep)[c] * gp[i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// shape and selection ops
// ---------------------------------------------------------------------------

template <class S>
Id<S> reshape(TapeT<S>& t, Id<S> x, std::vector<int> new_shape) {
    const TensorT<S>& xv = t.val(x);
    if (TensorT<S>::count(new_shape) != xv.size()) {
        throw std::invalid_argument("reshape: element count mismatch");
    }
    TensorT<S> y(new_shape, xv.v);
    const Id<S> self = static_cast<Id<S>>(t.size());
    return t.record(std::move(y), t.needs(x), [=](TapeT<S>& tp) {
        if (!tp.needs(x)) return;
        const TensorT<S>& gy = tp.grad_acc(self);
        TensorT<S>& gx = tp.grad_acc(x);
        for (int64_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    });
}

template <class S>
Id<S> flatten_rows(TapeT<S>& t, Id<S> x) {
    const TensorT<S>& xv = t.val(x);
    if (xv.ndim() < 2) throw std::invalid_argument("flatten_rows: need at least 2-d tensor");
    const int n = xv.dim(0);
    const int d = static_cast<int>(xv.size() / n);
    return reshape(t, x, {n, d});
}

// Copies value, drops the gradient path.
template <class S>
Id<S> detach(TapeT<S>& t, Id<S> x) {
    return t.constant(t.val(x));
}

template <class S>
Id<S> gather_rows(TapeT<S>& t, Id<S> x, std::vector<int> rows) {
    const TensorT<S>& xv = t.val(x);
    if (xv.ndim() < 1) throw std::invalid_argument("gather_rows: need at least 1-d tensor");
    const int n = xv.dim(0);
    const int64_t stride = n > 0 ? xv.size() / n : 0;
    for (int r : rows) {
        if (r < 0 || r >= n) throw std::invalid_argument("gather_rows: row index out of range");
    }
    std::vector<int> oshape = xv.shape;
    oshape[0] = static_cast<int>(rows.size());
    TensorT<S> y(oshape);
    for (size_t k = 0; k < rows.size(); ++k) {
        const S* src = xv.data() + static_cast<int64_t>(rows[k]) * stride;
        S* dst = y.data() + static_cast<int64_t>(k) * stride;
        for (int64_t i = 0; i < stride; ++i) dst[i] = src[i];
    }
    const Id<S> self = static_cast<Id<S>>(t.size());
    auto rows_keep = std::make_shared<std::vector<int>>(std::move(rows));
    return t.record(std::move(y), t.needs(x), [=](TapeT<S>& tp) {
        if (!tp.needs(x)) return;
        const TensorT<S>& gy = tp.grad_acc(self);
        TensorT<S>& gx = tp.grad_acc(x);
        for (size_t k = 0; k < rows_keep->size(); ++k) {
            const S* src = gy.data() + static_cast<int64_t>(k) * stride;
            S* dst = gx.data() + static_cast<int64_t>((*rows_keep)[k]) * stride;
            for (int64_t i = 0; i < stride; ++i) dst[i] += src[i];
        }
    });
}

// ---------------------------------------------------------------------------
// elementwise arithmetic
// ---------------------------------------------------------------------------

template <class S>
Id<S> add(TapeT<S>& t, Id<S> a, Id<S> b) {
    const TensorT<S>& av = t.val(a);
    const TensorT<S>& bv = t.val(b);
    detail::require_same_shape("add", av, bv);
    TensorT<S> y = av;
    for (int64_t i = 0; i < y.size(); ++i) y[i] += bv[i];
    const bool ng = t.needs(a) || t.needs(b);
    const Id<S> self = static_cast<Id<S>>(t.size());
    return t.record(std::move(y), ng, [=](TapeT<S>& tp) {
        const TensorT<S>& gy = tp.grad_acc(self);
        if (tp.needs(a)) {
            TensorT<S>& ga = tp.grad_acc(a);
            for (int64_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
        }
        if (tp.needs(b)) {
            TensorT<S>& gb = tp.grad_acc(b);
            for (int64_t i = 0; i < gb.size(); ++i) gb[i] += gy[i];
        }
    });
}

template <class S>
Id<S> sub(TapeT<S>& t, Id<S> a, Id<S> b) {
    const TensorT<S>& av = t.val(a);
    const TensorT<S>& bv = t.val(b);
    detail::require_same_shape("sub", av, bv);
    TensorT<S> y = av;
    for (int64_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
    const bool ng = t.needs(a) || t.needs(b);
    const Id<S> self = static_cast<Id<S>>(t.size());
    return t.record(std::move(y), ng, [=](TapeT<S>& tp) {
        const TensorT<S>& gy = tp.grad_acc(self);
        if (tp.needs(a)) {
            TensorT<S>& ga = tp.grad_acc(a);
            for (int64_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
        }
        if (tp.needs(b)) {
            TensorT<S>& gb = tp.grad_acc(b);
            for (int64_t i = 0; i < gb.size(); ++i) gb[i] -= gy[i];
        }
    });
}

template <class S>
Id<S> mul(TapeT<S>& t, Id<S> a, Id<S> b) {
    const TensorT<S>& av = t.val(a);
    const TensorT<S>& bv = t.val(b);
    detail::require_same_shape("mul", av, bv);
    TensorT<S> y = av;
    for (int64_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
    const bool ng = t.needs(a) || t.needs(b);
    const Id<S> self = static_cast<Id<S>>(t.size());
    return t.record(std::move(y), ng, [=](TapeT<S>& tp) {
        const TensorT<S>& gy = tp.grad_acc(self);
        const TensorT<S>& avv = tp.val(a);
        const TensorT<S>& bvv = tp.val(b);
        if (tp.needs(a)) {
            TensorT<S>& ga = tp.grad_acc(a);
            for (int64_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bvv[i];
        }
        if (tp.needs(b)) {
            TensorT<S>& gb = tp.grad_acc(b);
            for (int64_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * avv[i];
        }
    });
}

// y = alpha * x + beta, elementwise
template <class S>
Id<S> affine(TapeT<S>& t, Id<S> x, S alpha, S beta) {
    const TensorT<S>& xv = t.val(x);
    TensorT<S> y = xv;
    for (int64_t i = 0; i < y.size(); ++i) y[i] = alpha * y[i] + beta;
    const Id<S> self = static_cast<Id<S>>(t.size());
    return t.record(std::move(y), t.needs(x), [=](TapeT<S>& tp) {
        if (!tp.needs(x)) return;
        const TensorT<S>& gy = tp.grad_acc(self);
        TensorT<S>& gx = tp.grad_acc(x);
        for (int64_t i = 0; i < gx.size(); ++i) gx[i] += alpha * gy[i];
    });
}

// ---------------------------------------------------------------------------
// reductions and loss building blocks
// ---------------------------------------------------------------------------

template <class S>
Id<S> sum_all(TapeT<S>& t, Id<S> x) {
    const TensorT<S>& xv = t.val(x);
    S acc = S(0);
    for (int64_t i = 0; i < xv.size(); ++i) acc += xv[i];
    TensorT<S> y({1});
    y[0] = acc;
    const Id<S> self = static_cast<Id<S>>(t.size());
    return t.record(std::move(y), t.needs(x), [=](TapeT<S>& tp) {
        if (!tp.needs(x)) return;
        const S g = tp.grad_acc(self)[0];
        TensorT<S>& gx = tp.grad_acc(x);
        for (int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
}

template <class S>
Id<S> mean_all(TapeT<S>& t, Id<S> x) {
    const int64_t n = t.val(x).size();
    if (n == 0) throw std::invalid_argument("mean_all: empty tensor");
    return affine(t, sum_all(t, x), S(1) / static_cast<S>(n), S(0));
}

// log of values clamped into [lo, hi]; adjoints vanish outside the clamp.
template <class S>
Id<S> clamped_log(TapeT<S>& t, Id<S> x, S lo, S hi) {
    const TensorT<S>& xv = t.val(x);
    TensorT<S> y = xv;
    for (int64_t i = 0; i < y.size(); ++i) {
        S c = y[i];
        if (c < lo) c = lo;
        if (c > hi) c = hi;
        y[i] = std::log(c);
    }
    const Id<S> self = static_cast<Id<S>>(t.size());
    return t.record(std::move(y), t.needs(x), [=](TapeT<S>& tp) {
        if (!tp.needs(x)) return;
        const TensorT<S>& gy = tp.grad_acc(self);
        const TensorT<S>& xvv = tp.val(x);
        TensorT<S>& gx = tp.grad_acc(x);
        for (int64_t i = 0; i < gx.size(); ++i) {
            if (xvv[i] > lo && xvv[i] < hi) gx[i] += gy[i] / xvv[i];
        }
    });
}

// Weighted sum of scalar nodes into one scalar.
template <class S>
Id<S> weighted_sum(TapeT<S>& t, const std::vector<Id<S>>& xs, const std::vector<S>& weights) {
    if (xs.size() != weights.size() || xs.empty()) {
        throw std::invalid_argument("weighted_sum: need matching non-empty inputs");
    }
    S acc = S(0);
    bool ng = false;
    for (size_t i = 0; i < xs.size(); ++i) {
        const TensorT<S>& xv = t.val(xs[i]);
        if (xv.size() != 1) throw std::invalid_argument("weighted_sum: inputs must be scalars");
        acc += weights[i] * xv[0];
        ng = ng || t.needs(xs[i]);
    }
    TensorT<S> y({1});
    y[0] = acc;
    const Id<S> self = static_cast<Id<S>>(t.size());
    auto xs_keep = std::make_shared<std::vector<Id<S>>>(xs);
    auto w_keep = std::make_shared<std::vector<S>>(weights);
    return t.record(std::move(y), ng, [=](TapeT<S>& tp) {
        const S g = tp.grad_acc(self)[0];
        for (size_t i = 0; i < xs_keep->size(); ++i) {
            const Id<S> xi = (*xs_keep)[i];
            if (tp.needs(xi)) tp.grad_acc(xi)[0] += g * (*w_keep)[i];
        }
    });
}

// ---------------------------------------------------------------------------
// per-row (per-sample) ops used by the orthogonalization layer
// ---------------------------------------------------------------------------

// out[n] = <a[n,:], b[n,:]>
template <class S>
Id<S> row_dot(TapeT<S>& t, Id<S> a, Id<S> b) {
    const TensorT<S>& av = t.val(a);
    const TensorT<S>& bv = t.val(b);
    detail::require_ndim("row_dot", av, 2);
    detail::require_same_shape("row_dot", av, bv);
    const int N = av.dim(0), D = av.dim(1);
    TensorT<S> y({N});
    for (int n = 0; n < N; ++n) {
        const S* ar = av.data() + static_cast<int64_t>(n) * D;
        const S* br = bv.data() + static_cast<int64_t>(n) * D;
        S acc = S(0);
        for (int d = 0; d < D; ++d) acc += ar[d] * br[d];
        y[n] = acc;
    }
    const bool ng = t.needs(a) || t.needs(b);
    const Id<S> self = static_cast<Id<S>>(t.size());
    return t.record(std::move(y), ng, [=](TapeT<S>& tp) {
        const TensorT<S>& gy = tp.grad_acc(self);
        const TensorT<S>& avv = tp.val(a);
        const TensorT<S>& bvv = tp.val(b);
        if (tp.needs(a)) {
            TensorT<S>& ga = tp.grad_acc(a);
            for (int n = 0; n < N; ++n) {
                const S g = gy[n];
                S* gr = ga.data() + static_cast<int64_t>(n) * D;
                const S* br = bvv.data() + static_cast<int64_t>(n) * D;
                for (int d = 0; d < D; ++d) gr[d] += g * br[d];
            }
        }
        if (tp.needs(b)) {
            TensorT<S>& gb = tp.grad_acc(b);
            for (int n = 0; n < N; ++n) {
                const S g = gy[n];
                S* gr = gb.data() + static_cast<int64_t>(n) * D;
                const S* ar = avv.data() + static_cast<int64_t>(n) * D;
                for (int d = 0; d < D; ++d) gr[d] += g * ar[d];
            }
        }
    });
}

// out[n,:] = c[n] * x[n,:]
template <class S>
Id<S> row_scale(TapeT<S>& t, Id<S> c, Id<S> x) {
    const TensorT<S>& cv = t.val(c);
    const TensorT<S>& xv = t.val(x);
    detail::require_ndim("row_scale", cv, 1);
    detail::require_ndim("row_scale", xv, 2);
    const int N = xv.dim(0), D = xv.dim(1);
    if (cv.dim(0) != N) detail::fail_dim("row_scale", "rows", cv.dim(0), N);
    TensorT<S> y({N, D});
    for (int n = 0; n < N; ++n) {
        const S cn = cv[n];
        const S* xr = xv.data() + static_cast<int64_t>(n) * D;
        S* yr = y.data() + static_cast<int64_t>(n) * D;
        for (int d = 0; d < D; ++d) yr[d] = cn * xr[d];
    }
    const bool ng = t.needs(c) || t.needs(x);
    const Id<S> self = static_cast<Id<S>>(t.size());
    return t.record(std::move(y), ng, [=](TapeT<S>& tp) {
        const TensorT<S>& gy = tp.grad_acc(self);
        const TensorT<S>& cvv = tp.val(c);
        const TensorT<S>& xvv = tp.val(x);
        if (tp.needs(c)) {
            TensorT<S>& gc = tp.grad_acc(c);
            for (int n = 0; n < N; ++n) {
                const S* gr = gy.data() + static_cast<int64_t>(n) * D;
                const S* xr = xvv.data() + static_cast<int64_t>(n) * D;
                S acc = S(0);
                for (int d = 0; d < D; ++d) acc += gr[d] * xr[d];
                gc[n] += acc;
            }
        }
        if (tp.needs(x)) {
            TensorT<S>& gx = tp.grad_acc(x);
            for (int n = 0; n < N; ++n) {
                const S cn = cvv[n];
                const S* gr = gy.data() + static_cast<int64_t>(n) * D;
                S* xr = gx.data() + static_cast<int64_t>(n) * D;
                for (int d = 0; d < D; ++d) xr[d] += cn * gr[d];
            }
        }
    });
}

// out[n] = mask[n] ? num[n] / den[n] : 0. The mask is fixed at record time;
// masked rows contribute no value and no gradient.
template <class S>
Id<S> masked_ratio(TapeT<S>& t, Id<S> num, Id<S> den, std::vector<uint8_t> mask) {
    const TensorT<S>& nv = t.val(num);
    const TensorT<S>& dv = t.val(den);
    detail::require_ndim("masked_ratio", nv, 1);
    detail::require_same_shape("masked_ratio", nv, dv);
    const int N = nv.dim(0);
    if (static_cast<int>(mask.size()) != N) detail::fail_dim("masked_ratio", "mask rows",
                                                             static_cast<int>(mask.size()), N);
    TensorT<S> y({N});
    for (int n = 0; n < N; ++n) y[n] = mask[n] ? nv[n] / dv[n] : S(0);
    const bool ng = t.needs(num) || t.needs(den);
    const Id<S> self = static_cast<Id<S>>(t.size());
    auto mask_keep = std::make_shared<std::vector<uint8_t>>(std::move(mask));
    return t.record(std::move(y), ng, [=](TapeT<S>& tp) {
        const TensorT<S>& gy = tp.grad_acc(self);
        const TensorT<S>& nvv = tp.val(num);
        const TensorT<S>& dvv = tp.val(den);
        if (tp.needs(num)) {
            TensorT<S>& gn = tp.grad_acc(num);
            for (int n = 0; n < N; ++n) {
                if ((*mask_keep)[n]) gn[n] += gy[n] / dvv[n];
            }
        }
        if (tp.needs(den)) {
            TensorT<S>& gd = tp.grad_acc(den);
            for (int n = 0; n < N; ++n) {
                if ((*mask_keep)[n]) gd[n] -= gy[n] * nvv[n] / (dvv[n] * dvv[n]);
            }
        }
    });
}

} // namespace ops
} // namespace podnn
