#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "podnn/adam.hpp"
#include "podnn/ops.hpp"
#include "podnn/rng.hpp"
#include "podnn/tape.hpp"
#include "podnn/tensor.hpp"
#include "testutil.hpp"

using namespace podnn;
using testutil::fd_grad;
using testutil::max_abs_diff;
using testutil::max_rel_err;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

} // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
    Tape t;
    const auto x = t.constant(Tensor::full({1, 1, 3, 3}, 1.0));
    Tensor k({1, 1, 3, 3});
    k[4] = 1.0; // center tap
    const auto w = t.constant(k);
    const auto b = t.constant(Tensor({1}));
    const auto y = ops::conv2d(t, x, w, b);
    CHECK(max_abs_diff(t.val(y), t.val(x)) == 0.0);
}

TEST_CASE("conv2d 2x2 input with all-ones kernel matches the sliding-window oracle") {
    Tape t;
    const Tensor xin({1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor win = Tensor::full({1, 1, 3, 3}, 1.0);
    const Tensor bin({1});
    const auto y = ops::conv2d(t, t.constant(xin), t.constant(win), t.constant(bin));
    const Tensor want = testutil::naive_conv2d(xin, win, bin);
    CHECK(max_abs_diff(t.val(y), want) == 0.0);
    // center-aligned sums: top-left window covers the full 2x2 block minus nothing
    CHECK(t.val(y)[0] == doctest::Approx(10.0));
}

TEST_CASE("conv2d zero kernel yields a constant bias tensor") {
    Tape t;
    Rng rng(7);
    const auto x = t.constant(random_tensor(rng, {2, 3, 4, 4}));
    const auto w = t.constant(Tensor({5, 3, 3, 3}));
    const auto b = t.constant(Tensor::full({5}, 0.25));
    const auto y = ops::conv2d(t, x, w, b);
    for (int64_t i = 0; i < t.val(y).size(); ++i) CHECK(t.val(y)[i] == 0.25);
}

TEST_CASE("conv2d rejects mismatched channel counts with a diagnostic") {
    Tape t;
    const auto x = t.constant(Tensor({1, 2, 4, 4}));
    const auto w = t.constant(Tensor({3, 5, 3, 3}));
    const auto b = t.constant(Tensor({3}));
    CHECK_THROWS_WITH_AS(ops::conv2d(t, x, w, b),
                         "conv2d: input channels mismatch, got 5, expected 2",
                         std::invalid_argument);
}

TEST_CASE("conv2d agrees with the naive oracle on random instances") {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        Tape t;
        const Tensor xin = random_tensor(rng, {2, 3, 5, 7});
        const Tensor win = random_tensor(rng, {4, 3, 3, 3});
        const Tensor bin = random_tensor(rng, {4});
        const auto y = ops::conv2d(t, t.constant(xin), t.constant(win), t.constant(bin));
        CHECK(max_abs_diff(t.val(y), testutil::naive_conv2d(xin, win, bin)) < 1e-12);
    }
}

TEST_CASE("avgpool2d hand examples") {
    {
        Tape t;
        const auto y = ops::avgpool2d(t, t.constant(Tensor::full({1, 1, 2, 2}, 1.0)));
        CHECK(t.val(y).size() == 1);
        CHECK(t.val(y)[0] == 1.0);
    }
    {
        Tape t;
        const auto y = ops::avgpool2d(t, t.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})));
        CHECK(t.val(y)[0] == 2.5);
    }
    {
        Tape t;
        Tensor ramp({1, 1, 4, 4});
        for (int i = 0; i < 16; ++i) ramp[i] = i;
        const auto y = ops::avgpool2d(t, t.constant(ramp));
        const Tensor want({1, 1, 2, 2}, {2.5, 4.5, 10.5, 12.5});
        CHECK(max_abs_diff(t.val(y), want) == 0.0);
        CHECK(max_abs_diff(t.val(y), testutil::naive_avgpool2d(ramp)) == 0.0);
    }
}

TEST_CASE("avgpool2d replicates edges for odd sizes and matches the oracle") {
    Rng rng(13);
    const Tensor xin = random_tensor(rng, {2, 2, 5, 7});
    Tape t;
    const auto y = ops::avgpool2d(t, t.constant(xin));
    CHECK(t.val(y).shape == std::vector<int>{2, 2, 3, 4});
    CHECK(max_abs_diff(t.val(y), testutil::naive_avgpool2d(xin)) < 1e-12);
}

TEST_CASE("dense identity weights pass input through") {
    Tape t;
    Tensor w({2, 2});
    w[0] = 1.0;
    w[3] = 1.0;
    const Tensor xin({1, 2}, {3.0, -4.0});
    const auto y = ops::dense(t, t.constant(xin), t.constant(w), t.constant(Tensor({2})));
    CHECK(max_abs_diff(t.val(y), xin) == 0.0);
}

TEST_CASE("dense affine identity example") {
    Tape t;
    Tensor w({2, 2});
    w[0] = 1.0;
    w[3] = 1.0;
    const auto y = ops::dense(t, t.constant(Tensor({1, 2}, {1.0, 2.0})), t.constant(w),
                              t.constant(Tensor({2}, {1.0, 1.0})));
    CHECK(t.val(y)[0] == 2.0);
    CHECK(t.val(y)[1] == 3.0);
}

TEST_CASE("dense matches the triple-loop oracle and rejects bad shapes") {
    Rng rng(17);
    const Tensor xin = random_tensor(rng, {3, 4});
    const Tensor win = random_tensor(rng, {4, 6});
    const Tensor bin = random_tensor(rng, {6});
    Tape t;
    const auto y = ops::dense(t, t.constant(xin), t.constant(win), t.constant(bin));
    CHECK(max_abs_diff(t.val(y), testutil::naive_dense(xin, win, bin)) < 1e-12);

    const auto wbad = t.constant(Tensor({5, 6}));
    CHECK_THROWS_AS(ops::dense(t, t.constant(xin), wbad, t.constant(bin)), std::invalid_argument);
}

TEST_CASE("activation closed forms") {
    Tape t;
    const auto x = t.constant(Tensor({3}, {0.0, -1.0, 2.0}));
    const auto e = ops::elu(t, x);
    CHECK(t.val(e)[0] == 0.0);
    CHECK(t.val(e)[1] == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-12));
    CHECK(t.val(e)[2] == 2.0);

    const auto s = ops::sigmoid(t, t.constant(Tensor({1}, {0.0})));
    CHECK(t.val(s)[0] == 0.5);
}

TEST_CASE("batchnorm standardizes [1,2,3] per the direct oracle") {
    Tape t;
    const auto x = t.constant(Tensor({3, 1, 1, 1}, {1.0, 2.0, 3.0}));
    const auto gamma = t.constant(Tensor::full({1}, 1.0));
    const auto beta = t.constant(Tensor({1}));
    ops::BnRunningStats<double> stats;
    const auto y = ops::batchnorm_train(t, x, gamma, beta, stats, 0.9, 0.0);

    // independent standardization: mean 2, population variance 2/3
    const double sd = std::sqrt(2.0 / 3.0);
    CHECK(t.val(y)[0] == doctest::Approx((1.0 - 2.0) / sd).epsilon(1e-12));
    CHECK(t.val(y)[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(t.val(y)[2] == doctest::Approx((3.0 - 2.0) / sd).epsilon(1e-12));

    double mean = 0.0, var = 0.0;
    for (int i = 0; i < 3; ++i) mean += t.val(y)[i] / 3.0;
    for (int i = 0; i < 3; ++i) var += (t.val(y)[i] - mean) * (t.val(y)[i] - mean) / 3.0;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("batchnorm rejects batch size 1 in training mode") {
    Tape t;
    const auto x = t.constant(Tensor({1, 2, 2, 2}));
    const auto gamma = t.constant(Tensor::full({2}, 1.0));
    const auto beta = t.constant(Tensor({2}));
    ops::BnRunningStats<double> stats;
    CHECK_THROWS_AS(ops::batchnorm_train(t, x, gamma, beta, stats, 0.9, 1e-5),
                    std::invalid_argument);
}

TEST_CASE("batchnorm inference mode uses running statistics") {
    ops::BnRunningStats<double> stats;
    stats.mean = Tensor({1}, {0.5});
    stats.var = Tensor({1}, {4.0});
    Tape t;
    const auto x = t.constant(Tensor({2, 1, 1, 1}, {0.5, 2.5}));
    const auto gamma = t.constant(Tensor::full({1}, 1.0));
    const auto beta = t.constant(Tensor({1}));
    const auto y = ops::batchnorm_infer(t, x, gamma, beta, stats, 0.0);
    CHECK(t.val(y)[0] == doctest::Approx(0.0));
    CHECK(t.val(y)[1] == doctest::Approx(1.0));
}

TEST_CASE("backward of sum gives all-ones gradient") {
    Tape t;
    Rng rng(3);
    const Tensor xin = random_tensor(rng, {4, 3});
    const auto x = t.leaf(xin, true);
    const auto loss = ops::sum_all(t, x);
    t.backward(loss);
    const Tensor g = t.grad_or_zero(x);
    for (int64_t i = 0; i < g.size(); ++i) CHECK(g[i] == 1.0);
}

TEST_CASE("backward of sigmoid(w.x) at w=0 gives 0.25*x") {
    Tape t;
    const Tensor xin({1, 3}, {0.5, -1.5, 2.0});
    const auto x = t.constant(xin);
    const auto w = t.leaf(Tensor({3, 1}), true);
    const auto b = t.constant(Tensor({1}));
    const auto s = ops::sigmoid(t, ops::dense(t, x, w, b));
    const auto loss = ops::sum_all(t, s);
    t.backward(loss);
    const Tensor g = t.grad_or_zero(w);
    for (int i = 0; i < 3; ++i) CHECK(g[i] == doctest::Approx(0.25 * xin[i]).epsilon(1e-12));
}

TEST_CASE("backward rejects a loss disconnected from differentiable inputs") {
    Tape t;
    const auto x = t.constant(Tensor({2, 2}));
    const auto loss = ops::sum_all(t, x);
    CHECK_THROWS_AS(t.backward(loss), std::invalid_argument);
}

TEST_CASE("gradients of every primitive match central finite differences") {
    Rng rng(23);

    // loss = sum(sigmoid(dense(flatten(avgpool(elu(bn(conv(x))))))))
    const Tensor x0 = random_tensor(rng, {3, 2, 6, 6});
    const Tensor w0 = random_tensor(rng, {3, 2, 3, 3}, -0.5, 0.5);
    const Tensor b0 = random_tensor(rng, {3}, -0.1, 0.1);
    const Tensor g0 = random_tensor(rng, {3}, 0.5, 1.5);
    const Tensor be0 = random_tensor(rng, {3}, -0.2, 0.2);
    const Tensor wd = random_tensor(rng, {27, 2}, -0.5, 0.5);
    const Tensor bd = random_tensor(rng, {2}, -0.1, 0.1);

    struct Parts {
        Tensor x, w, b, g, be, wd, bd;
    };
    Parts parts{x0, w0, b0, g0, be0, wd, bd};

    auto build = [](Tape& t, const Parts& p, bool train_leaves) {
        const auto x = t.leaf(p.x, train_leaves);
        const auto w = t.leaf(p.w, train_leaves);
        const auto b = t.leaf(p.b, train_leaves);
        const auto g = t.leaf(p.g, train_leaves);
        const auto be = t.leaf(p.be, train_leaves);
        const auto dw = t.leaf(p.wd, train_leaves);
        const auto db = t.leaf(p.bd, train_leaves);
        ops::BnRunningStats<double> stats;
        auto h = ops::conv2d(t, x, w, b);
        h = ops::batchnorm_train(t, h, g, be, stats, 0.9, 1e-5);
        h = ops::elu(t, h);
        h = ops::avgpool2d(t, h);
        h = ops::flatten_rows(t, h);
        h = ops::sigmoid(t, ops::dense(t, h, dw, db));
        const auto loss = ops::sum_all(t, h);
        return std::make_pair(loss, std::vector<Tape::Id>{x, w, b, g, be, dw, db});
    };

    Tape t;
    auto [loss, leaves] = build(t, parts, true);
    t.backward(loss);

    Tensor Parts::* members[] = {&Parts::x, &Parts::w,  &Parts::b, &Parts::g,
                                 &Parts::be, &Parts::wd, &Parts::bd};
    const char* names[] = {"x", "conv.w", "conv.b", "bn.gamma", "bn.beta", "dense.w", "dense.b"};
    for (int a = 0; a < 7; ++a) {
        const Tensor analytic = t.grad_or_zero(leaves[a]);
        const Tensor numeric = fd_grad(
            [&](const Tensor& cand) {
                Parts local = parts;
                local.*members[a] = cand;
                Tape tt;
                auto [l2, ign] = build(tt, local, false);
                (void)ign;
                return tt.val(l2)[0];
            },
            parts.*members[a]);
        INFO("leaf ", names[a]);
        CHECK(max_rel_err(analytic, numeric, 1e-4) < 1e-4);
    }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged and advances the counter") {
    ParamT<double> p(Tensor({3}, {1.0, -2.0, 0.5}));
    const Tensor before = p.value;
    std::vector<ParamT<double>*> ps{&p};
    const std::vector<Tensor> gs{Tensor({3})};
    AdamState st;
    adam_step(ps, gs, st, AdamConfig{});
    CHECK(st.step == 1);
    CHECK(max_abs_diff(p.value, before) == 0.0);
}

TEST_CASE("adam single step with unit gradient moves by about -lr") {
    ParamT<double> p(Tensor({1}, {0.0}));
    std::vector<ParamT<double>*> ps{&p};
    const std::vector<Tensor> gs{Tensor({1}, {1.0})};
    AdamState st;
    AdamConfig cfg;
    cfg.lr = 0.001;
    cfg.beta1 = 0.9;
    cfg.beta2 = 0.999;
    cfg.eps = 1e-8;
    adam_step(ps, gs, st, cfg);
    // bias-corrected first step: mhat = 1, vhat = 1 -> delta = -lr/(1+eps)
    CHECK(p.value[0] == doctest::Approx(-0.001).epsilon(1e-6));
}

TEST_CASE("adam two steps agree with a scalar hand computation") {
    AdamConfig cfg;
    cfg.lr = 0.01;
    cfg.beta1 = 0.9;
    cfg.beta2 = 0.999;
    cfg.eps = 1e-8;
    const double g1 = 0.3, g2 = -0.7;

    // hand-rolled reference
    double theta = 0.2, m = 0.0, v = 0.0;
    int k = 0;
    for (double g : {g1, g2}) {
        k += 1;
        m = cfg.beta1 * m + (1 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
        const double mhat = m / (1 - std::pow(cfg.beta1, k));
        const double vhat = v / (1 - std::pow(cfg.beta2, k));
        theta -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }

    ParamT<double> p(Tensor({1}, {0.2}));
    std::vector<ParamT<double>*> ps{&p};
    AdamState st;
    adam_step(ps, {Tensor({1}, {g1})}, st, cfg);
    adam_step(ps, {Tensor({1}, {g2})}, st, cfg);
    CHECK(st.step == 2);
    CHECK(p.value[0] == doctest::Approx(theta).epsilon(1e-14));
}

TEST_CASE("identical seed and op sequence give bit-identical results") {
    auto run = [] {
        Rng rng(99);
        Tape t;
        const auto x = t.leaf(random_tensor(rng, {2, 1, 4, 4}), true);
        const auto w = t.leaf(random_tensor(rng, {2, 1, 3, 3}), true);
        const auto b = t.leaf(random_tensor(rng, {2}), true);
        const auto y = ops::conv2d(t, x, w, b);
        const auto loss = ops::sum_all(t, ops::sigmoid(t, y));
        t.backward(loss);
        std::vector<double> out = t.val(loss).v;
        const Tensor g = t.grad_or_zero(w);
        out.insert(out.end(), g.v.begin(), g.v.end());
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("tape values stay finite through forward and backward") {
    Rng rng(31);
    Tape t;
    const auto x = t.leaf(random_tensor(rng, {2, 1, 5, 5}), true);
    const auto w = t.leaf(random_tensor(rng, {4, 1, 3, 3}), true);
    const auto b = t.leaf(random_tensor(rng, {4}), true);
    auto h = ops::conv2d(t, x, w, b);
    h = ops::elu(t, h);
    const auto loss = ops::mean_all(t, h);
    t.backward(loss);
    CHECK(t.val(loss).all_finite());
    CHECK(t.grad_or_zero(x).all_finite());
    CHECK(t.grad_or_zero(w).all_finite());
}
