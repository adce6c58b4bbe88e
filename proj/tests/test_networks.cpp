#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "podnn/checkpoint.hpp"
#include "podnn/nets.hpp"
#include "podnn/ops.hpp"
#include "podnn/rng.hpp"
#include "testutil.hpp"

using namespace podnn;
using testutil::max_abs_diff;
using testutil::max_rel_err;

namespace {

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

// Independent reference for the orthogonalization recurrence: coefficients
// against the original u_k, projection terms skipped on near-zero norms.
std::vector<Vec> gram_schmidt_oracle(const std::vector<Vec>& u, double eps = 1e-12) {
    std::vector<Vec> v;
    for (size_t k = 0; k < u.size(); ++k) {
        Vec out = u[k];
        for (size_t j = 0; j < k; ++j) {
            const double den = dot(v[j], v[j]);
            if (den < eps) continue;
            const double c = dot(v[j], u[k]) / den;
            for (size_t d = 0; d < out.size(); ++d) out[d] -= c * v[j][d];
        }
        v.push_back(out);
    }
    return v;
}

// Runs the production layer on one sample per row.
std::vector<Vec> run_orthogonalize(const std::vector<Vec>& u, bool block_cross = false) {
    Tape t;
    std::vector<Tape::Id> ids;
    const int d = static_cast<int>(u[0].size());
    for (const Vec& ui : u) ids.push_back(t.constant(Tensor({1, d, 1, 1}, ui)));
    const OrthResult<double> r = orthogonalize(t, ids, block_cross);
    std::vector<Vec> out;
    for (auto vid : r.v) out.push_back(t.val(vid).v);
    return out;
}

Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Scalar loss over all ensemble outputs with fixed mixing weights; used by
// the finite-difference checks below.
double ensemble_loss(PodnnEnsemble<double>& ens, const Tensor& x, const Tensor& mix,
                     bool block_cross, Tensor* grad_out = nullptr,
                     std::vector<std::vector<Tensor>>* param_grads = nullptr) {
    Tape t;
    ens.bind(t, true);
    const auto xid = t.constant(x);
    EnsembleOut<double> out = ens.forward_all(t, xid, /*training=*/true, block_cross);
    std::vector<Tape::Id> parts;
    for (auto oid : out.outputs) {
        parts.push_back(ops::sum_all(t, ops::mul(t, oid, t.constant(mix))));
    }
    const auto loss = ops::weighted_sum(t, parts, std::vector<double>(parts.size(), 1.0));
    if (grad_out != nullptr || param_grads != nullptr) {
        t.backward(loss);
        if (param_grads != nullptr) {
            param_grads->clear();
            for (int e = 0; e < ens.size(); ++e) {
                std::vector<Tensor> gs;
                for (auto pid : ens.expert(e).param_ids()) gs.push_back(t.grad_or_zero(pid));
                param_grads->push_back(std::move(gs));
            }
        }
    }
    return t.val(loss)[0];
}

} // namespace

TEST_CASE("orthogonalize: single projection closed form") {
    const auto v = run_orthogonalize({{1, 0, 0}, {1, 1, 0}});
    CHECK(v[0] == Vec{1, 0, 0});
    CHECK(v[1][0] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(v[1][1] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(v[1][2] == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("orthogonalize: already orthogonal inputs pass through") {
    const std::vector<Vec> u = {{2, 0, 0, 0}, {0, -3, 0, 0}, {0, 0, 0, 5}};
    const auto v = run_orthogonalize(u);
    for (size_t i = 0; i < u.size(); ++i) {
        for (size_t d = 0; d < u[i].size(); ++d) CHECK(v[i][d] == doctest::Approx(u[i][d]));
    }
}

TEST_CASE("orthogonalize: first expert is always untouched") {
    Rng rng(5);
    std::vector<Vec> u(4, Vec(6));
    for (auto& vec : u)
        for (auto& x : vec) x = rng.uniform(-2, 2);
    const auto v = run_orthogonalize(u);
    CHECK(v[0] == u[0]);
}

TEST_CASE("orthogonalize: 3 random experts match the independent oracle, outputs orthogonal") {
    Rng rng(101);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Vec> u(3, Vec(4));
        for (auto& vec : u)
            for (auto& x : vec) x = rng.uniform(-1, 1);
        const auto got = run_orthogonalize(u);
        const auto want = gram_schmidt_oracle(u);
        for (size_t i = 0; i < u.size(); ++i) {
            for (size_t d = 0; d < 4; ++d) CHECK(got[i][d] == doctest::Approx(want[i][d]).epsilon(1e-10));
        }
        for (size_t a = 0; a < 3; ++a)
            for (size_t b = a + 1; b < 3; ++b) CHECK(std::abs(dot(got[a], got[b])) < 1e-10);
    }
}

TEST_CASE("orthogonalize: per-sample application keeps batch elements independent") {
    Rng rng(7);
    // two samples, run jointly and then one-by-one
    std::vector<Tensor> u_joint;
    std::vector<std::vector<Vec>> per_sample(2, std::vector<Vec>(3));
    for (int e = 0; e < 3; ++e) {
        Tensor t({2, 5, 1, 1});
        for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1, 1);
        for (int s = 0; s < 2; ++s) per_sample[s][e] = Vec(t.v.begin() + s * 5, t.v.begin() + (s + 1) * 5);
        u_joint.push_back(t);
    }
    Tape t;
    std::vector<Tape::Id> ids;
    for (auto& u : u_joint) ids.push_back(t.constant(u));
    const auto joint = orthogonalize(t, ids, false);
    for (int s = 0; s < 2; ++s) {
        const auto solo = gram_schmidt_oracle(per_sample[s]);
        for (int e = 0; e < 3; ++e) {
            const Tensor& vj = t.val(joint.v[e]);
            for (int d = 0; d < 5; ++d) {
                CHECK(vj[s * 5 + d] == doctest::Approx(solo[e][d]).epsilon(1e-10));
            }
        }
    }
}

TEST_CASE("orthogonalize: degenerate norms skip the projection and count it") {
    Tape t;
    std::vector<Tape::Id> ids;
    ids.push_back(t.constant(Tensor({1, 3, 1, 1}, {0, 0, 0})));
    ids.push_back(t.constant(Tensor({1, 3, 1, 1}, {1, 2, 3})));
    const auto r = orthogonalize(t, ids, false);
    CHECK(r.degenerate_skips == 1);
    CHECK(t.val(r.v[1]).v == Vec{1, 2, 3});
    CHECK(t.val(r.v[1]).all_finite());
}

TEST_CASE("orthogonalize: permuting expert order preserves prefix spans") {
    Rng rng(211);
    std::vector<Vec> u(3, Vec(4));
    for (auto& vec : u)
        for (auto& x : vec) x = rng.uniform(-1, 1);
    const std::vector<Vec> perm = {u[2], u[0], u[1]};

    const auto v1 = run_orthogonalize(u);
    const auto v2 = run_orthogonalize(perm);

    // v differs beyond the first element but span{v_1..v_k} == span{u_1..u_k}:
    // each u_m (m<=k) must project onto the orthogonal v-basis with tiny residual.
    auto span_residual = [](const std::vector<Vec>& basis, const Vec& target, size_t k) {
        Vec r = target;
        for (size_t j = 0; j < k; ++j) {
            const double den = dot(basis[j], basis[j]);
            if (den < 1e-12) continue;
            const double c = dot(basis[j], r) / den;
            for (size_t d = 0; d < r.size(); ++d) r[d] -= c * basis[j][d];
        }
        return std::sqrt(dot(r, r));
    };
    for (size_t k = 1; k <= 3; ++k) {
        for (size_t m = 0; m < k; ++m) {
            CHECK(span_residual(v1, u[m], k) < 1e-8);
            CHECK(span_residual(v2, perm[m], k) < 1e-8);
        }
    }
    // and the outputs genuinely depend on the order
    CHECK(max_abs_diff(Tensor({4}, v1[1]), Tensor({4}, v2[1])) > 1e-3);
}

TEST_CASE("orthogonalize: differentiable, gradients match finite differences") {
    Rng rng(31);
    // 3 experts, 6-dim features, loss mixes every v
    std::vector<Tensor> u;
    for (int e = 0; e < 3; ++e) u.push_back(random_tensor(rng, {2, 6, 1, 1}));
    const Tensor mix = random_tensor(rng, {2, 6, 1, 1});

    auto eval = [&](const std::vector<Tensor>& inputs, bool want_grads,
                    std::vector<Tensor>* grads) {
        Tape t;
        std::vector<Tape::Id> ids;
        for (const Tensor& ui : inputs) ids.push_back(t.leaf(ui, true));
        const auto r = orthogonalize(t, ids, false);
        std::vector<Tape::Id> parts;
        for (auto vid : r.v) parts.push_back(ops::sum_all(t, ops::mul(t, vid, t.constant(mix))));
        const auto loss = ops::weighted_sum(t, parts, {1.0, 0.7, -1.3});
        if (want_grads) {
            t.backward(loss);
            grads->clear();
            for (auto id : ids) grads->push_back(t.grad_or_zero(id));
        }
        return t.val(loss)[0];
    };

    std::vector<Tensor> analytic;
    eval(u, true, &analytic);
    for (int e = 0; e < 3; ++e) {
        const Tensor numeric = testutil::fd_grad(
            [&](const Tensor& cand) {
                std::vector<Tensor> local = u;
                local[e] = cand;
                return eval(local, false, nullptr);
            },
            u[e]);
        INFO("expert ", e);
        CHECK(max_rel_err(analytic[e], numeric, 1e-3) < 1e-6);
    }
    // cross-expert coupling is real: the loss on later experts reaches u_0
    CHECK(analytic[0].all_finite());
}

TEST_CASE("expert net: output shaped like input with values in (0,1)") {
    Rng rng(41);
    ExpertNet<double> net(Rng(42), 16);
    Tape t;
    net.bind(t, false);
    const Tensor x = random_tensor(rng, {2, 1, 8, 8}, 0.0, 1.0);
    const auto y = net.forward(t, t.constant(x), true);
    CHECK(t.val(y).shape == x.shape);
    for (int64_t i = 0; i < t.val(y).size(); ++i) {
        CHECK(t.val(y)[i] > 0.0);
        CHECK(t.val(y)[i] < 1.0);
    }
}

TEST_CASE("ensemble with orthogonalization off is bit-identical to independent experts") {
    Rng rng(43);
    const Tensor x = random_tensor(rng, {3, 1, 8, 8}, 0.0, 1.0);

    PodnnEnsemble<double> ens(7, 3, 8, /*orthogonalization=*/false);
    Tape t1;
    ens.bind(t1, false);
    const auto out = ens.forward_all(t1, t1.constant(x), true, false);

    PodnnEnsemble<double> solo(7, 3, 8, false);
    for (int e = 0; e < 3; ++e) {
        Tape t2;
        solo.expert(e).bind(t2, false);
        const auto y = solo.expert(e).forward(t2, t2.constant(x), true);
        CHECK(max_abs_diff(t1.val(out.outputs[e]), t2.val(y)) == 0.0);
    }
}

TEST_CASE("ensemble forward keeps layer-P features pairwise orthogonal") {
    Rng rng(47);
    PodnnEnsemble<double> ens(11, 4, 8, true);
    Tape t;
    ens.bind(t, false);
    const Tensor x = random_tensor(rng, {3, 1, 8, 8}, 0.0, 1.0);
    const auto out = ens.forward_all(t, t.constant(x), true, false);
    CHECK(out.orth_residual < 1e-10);
    CHECK(out.degenerate_skips == 0);
}

TEST_CASE("full expert stack gradients through orthogonalization match finite differences") {
    // 3 experts with a 6-dim layer-P feature map (1 channel on 2x3 images)
    PodnnEnsemble<double> ens(13, 3, 1, true);
    Rng rng(53);
    const Tensor x = random_tensor(rng, {2, 1, 2, 3}, 0.0, 1.0);
    const Tensor mix = random_tensor(rng, {2, 1, 2, 3});

    std::vector<std::vector<Tensor>> analytic;
    ensemble_loss(ens, x, mix, false, nullptr, &analytic);

    for (int e = 0; e < ens.size(); ++e) {
        auto params = ens.expert(e).params();
        for (size_t p = 0; p < params.size(); ++p) {
            const Tensor at = params[p]->value;
            const Tensor numeric = testutil::fd_grad(
                [&](const Tensor& cand) {
                    PodnnEnsemble<double> local = ens;
                    local.expert(e).params()[p]->value = cand;
                    return ensemble_loss(local, x, mix, false);
                },
                at);
            INFO("expert ", e, " param ", p);
            CHECK(max_rel_err(analytic[e][p], numeric, 1e-3) < 1e-4);
        }
    }
}

TEST_CASE("blocked cross-gradients leave each expert's own gradient unchanged") {
    PodnnEnsemble<double> ens(17, 3, 1, true);
    Rng rng(59);
    const Tensor x = random_tensor(rng, {2, 1, 2, 3}, 0.0, 1.0);
    const Tensor mix = random_tensor(rng, {2, 1, 2, 3});

    // loss touching only the LAST expert's output
    auto loss_on_last = [&](PodnnEnsemble<double>& e, bool blocked,
                            std::vector<std::vector<Tensor>>* grads) {
        Tape t;
        e.bind(t, true);
        const auto out = e.forward_all(t, t.constant(x), true, blocked);
        const auto loss = ops::sum_all(t, ops::mul(t, out.outputs[2], t.constant(mix)));
        t.backward(loss);
        if (grads != nullptr) {
            grads->clear();
            for (int k = 0; k < e.size(); ++k) {
                std::vector<Tensor> gs;
                for (auto pid : e.expert(k).param_ids()) gs.push_back(t.grad_or_zero(pid));
                grads->push_back(std::move(gs));
            }
        }
        return t.val(loss)[0];
    };

    std::vector<std::vector<Tensor>> full, blocked;
    loss_on_last(ens, false, &full);
    loss_on_last(ens, true, &blocked);

    // full mode: the coupling pushes real gradient into earlier experts
    double earlier_mass = 0.0;
    for (const Tensor& g : full[0])
        for (int64_t i = 0; i < g.size(); ++i) earlier_mass += std::abs(g[i]);
    CHECK(earlier_mass > 1e-8);

    // blocked mode: earlier experts receive exactly zero
    for (int k = 0; k < 2; ++k) {
        for (const Tensor& g : blocked[k]) {
            for (int64_t i = 0; i < g.size(); ++i) CHECK(g[i] == 0.0);
        }
    }
    // and the winning expert's own gradient is the same in both modes
    for (size_t p = 0; p < full[2].size(); ++p) {
        CHECK(max_abs_diff(full[2][p], blocked[2][p]) < 1e-12);
    }
}

TEST_CASE("discriminator: zeroed head scores 0.5 everywhere") {
    DiscriminatorNet<double> d(Rng(3), 8, 8);
    auto params = d.params();
    // dense2 weights and bias are the last two parameter tensors
    for (auto* p : {params[params.size() - 2], params[params.size() - 1]}) {
        std::fill(p->value.v.begin(), p->value.v.end(), 0.0);
    }
    Rng rng(61);
    Tape t;
    d.bind(t, false);
    const auto out = d.forward(t, t.constant(random_tensor(rng, {4, 1, 8, 8}, 0.0, 1.0)));
    for (int i = 0; i < 4; ++i) CHECK(t.val(out.score)[i] == 0.5);
}

TEST_CASE("discriminator: hidden layer is 128-dim for every accepted input size") {
    for (auto [h, w] : std::vector<std::pair<int, int>>{{16, 16}, {28, 28}, {17, 13}}) {
        DiscriminatorNet<double> d(Rng(5), h, w);
        Rng rng(67);
        Tape t;
        d.bind(t, false);
        const auto out = d.forward(t, t.constant(random_tensor(rng, {2, 1, h, w}, 0.0, 1.0)));
        CHECK(t.val(out.hidden).shape == std::vector<int>{2, 128});
        CHECK(t.val(out.score).shape == std::vector<int>{2});
        for (int i = 0; i < 2; ++i) {
            CHECK(t.val(out.score)[i] > 0.0);
            CHECK(t.val(out.score)[i] < 1.0);
        }
    }
}

TEST_CASE("discriminator: re-running the dense head on hidden reproduces the score") {
    DiscriminatorNet<double> d(Rng(9), 8, 8);
    Rng rng(71);
    Tape t;
    d.bind(t, false);
    const auto out = d.forward(t, t.constant(random_tensor(rng, {3, 1, 8, 8}, 0.0, 1.0)));
    const auto again = d.head_forward(t, out.hidden);
    CHECK(max_abs_diff(t.val(again), t.val(out.score)) == 0.0);
}

TEST_CASE("checkpoint archive round-trips networks through disk") {
    PodnnEnsemble<double> ens(23, 2, 4, true);
    DiscriminatorNet<double> disc(Rng(29), 8, 8);

    // make running stats non-trivial before saving
    Rng rng(73);
    {
        Tape t;
        ens.bind(t, false);
        ens.forward_all(t, t.constant(random_tensor(rng, {4, 1, 8, 8}, 0.0, 1.0)), true, false);
    }

    CheckpointArchive a;
    a.meta = {{"purpose", "test"}};
    for (int e = 0; e < ens.size(); ++e) {
        checkpoint_put_net<double>(a, "expert" + std::to_string(e), ens.expert(e));
    }
    checkpoint_put_net<double>(a, "discriminator", disc);
    const std::string path = "test_ckpt.bin";
    a.save(path);

    const CheckpointArchive b = CheckpointArchive::load(path);
    CHECK(b.meta.at("purpose") == "test");

    PodnnEnsemble<double> ens2(99, 2, 4, true);  // different init, will be overwritten
    DiscriminatorNet<double> disc2(Rng(98), 8, 8);
    for (int e = 0; e < ens2.size(); ++e) {
        checkpoint_get_net<double>(b, "expert" + std::to_string(e), ens2.expert(e));
    }
    checkpoint_get_net<double>(b, "discriminator", disc2);

    auto cmp_net = [](auto& n1, auto& n2) {
        auto p1 = n1.params(), p2 = n2.params();
        for (size_t i = 0; i < p1.size(); ++i) {
            for (int64_t k = 0; k < p1[i]->value.size(); ++k) {
                CHECK(static_cast<float>(p1[i]->value[k]) == static_cast<float>(p2[i]->value[k]));
            }
        }
    };
    for (int e = 0; e < 2; ++e) cmp_net(ens.expert(e), ens2.expert(e));
    cmp_net(disc, disc2);

    // running stats restored too
    auto s1 = ens.expert(0).state_tensors();
    auto s2 = ens2.expert(0).state_tensors();
    for (size_t i = 0; i < s1.size(); ++i) {
        for (int64_t k = 0; k < s1[i].second->size(); ++k) {
            CHECK(static_cast<float>((*s1[i].second)[k]) == static_cast<float>((*s2[i].second)[k]));
        }
    }
    std::remove(path.c_str());
}

TEST_CASE("checkpoint load rejects architecture mismatches") {
    ExpertNet<double> small(Rng(1), 4);
    CheckpointArchive a;
    checkpoint_put_net<double>(a, "expert0", small);
    ExpertNet<double> big(Rng(2), 8);
    CHECK_THROWS_AS((checkpoint_get_net<double>(a, "expert0", big)), std::runtime_error);
}
