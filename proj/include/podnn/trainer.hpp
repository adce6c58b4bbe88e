#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "podnn/assignment.hpp"
#include "podnn/dataset.hpp"
#include "podnn/metrics.hpp"
#include "podnn/nets.hpp"
#include "podnn/relocation.hpp"
#include "podnn/rng.hpp"

namespace podnn {

enum class ConvergenceMode { labels, proxy };

struct TrainConfig {
    int n_experts = -1;  // -1: one per mechanism
    std::vector<MechanismSpec> specs;
    std::vector<double> proportions;  // dataset-level; empty = uniform
    int batch_size = 64;
    int expert_channels = 16;
    AdamConfig adam_experts{1e-4, 0.5, 0.999, 1e-8};
    AdamConfig adam_disc{1e-4, 0.5, 0.999, 1e-8};
    bool orthogonalization = true;
    bool relocation = true;
    double relocation_pct = 0.30;
    int max_iterations = 400;
    int convergence_window = 20;
    int standalone_iterations = 100;
    uint64_t seed = 1;
    bool oracle_scoring = false;
    ConvergenceMode convergence_mode = ConvergenceMode::labels;
    // Non-default alternative: let Gram-Schmidt coupling update every expert
    // instead of isolating the winner's parameters.
    bool coupled_expert_updates = false;
    double score_clamp = 1e-7;

    int resolved_experts() const {
        return n_experts > 0 ? n_experts : static_cast<int>(specs.size());
    }

    void validate() const {
        if (specs.empty()) throw std::invalid_argument("config: mechanism list must not be empty");
        if (resolved_experts() < 1) throw std::invalid_argument("config: need at least one expert");
        if (batch_size < 2) throw std::invalid_argument("config: batch_size must be >= 2");
        if (!(relocation_pct > 0.0 && relocation_pct < 1.0)) {
            throw std::invalid_argument("config: relocation_pct must be in (0,1)");
        }
        if (max_iterations < 1) throw std::invalid_argument("config: max_iterations must be >= 1");
        if (convergence_window < 1) {
            throw std::invalid_argument("config: convergence_window must be >= 1");
        }
        for (const auto& s : specs) s.validate();
    }
};

// ---------------------------------------------------------------------------
// loss operations
// ---------------------------------------------------------------------------

template <class S>
struct DiscLoss {
    typename TapeT<S>::Id loss;       // descent form
    typename TapeT<S>::Id objective;  // E[log D(x)] + (1/N') sum_i E[log(1-D(E_i(x')))]
};

// Discriminator update objective; the expert average keeps the scale
// independent of the expert count. Scores are clamped before every log.
template <class S>
DiscLoss<S> discriminator_loss(TapeT<S>& t, typename TapeT<S>::Id real_scores,
                               const std::vector<typename TapeT<S>::Id>& fake_scores, S clamp) {
    if (t.val(real_scores).size() == 0) {
        throw std::invalid_argument("discriminator_loss: empty batch");
    }
    if (fake_scores.empty()) {
        throw std::invalid_argument("discriminator_loss: need at least one expert");
    }
    const S hi = S(1) - clamp;
    std::vector<typename TapeT<S>::Id> parts{
        ops::mean_all(t, ops::clamped_log(t, real_scores, clamp, hi))};
    std::vector<S> weights{S(1)};
    for (auto fake : fake_scores) {
        if (t.val(fake).size() == 0) {
            throw std::invalid_argument("discriminator_loss: empty expert batch");
        }
        const auto one_minus = ops::affine(t, fake, S(-1), S(1));
        parts.push_back(ops::mean_all(t, ops::clamped_log(t, one_minus, clamp, hi)));
        weights.push_back(S(1) / static_cast<S>(fake_scores.size()));
    }
    DiscLoss<S> out;
    out.objective = ops::weighted_sum(t, parts, weights);
    out.loss = ops::affine(t, out.objective, S(-1), S(0));
    return out;
}

// Non-saturating winner loss: minimize -E[log D(E*(x'))] over claimed points.
template <class S>
typename TapeT<S>::Id expert_loss(TapeT<S>& t, typename TapeT<S>::Id winner_scores, S clamp) {
    if (t.val(winner_scores).size() == 0) {
        throw std::invalid_argument("expert_loss: expert claimed no points");
    }
    const auto logs = ops::clamped_log(t, winner_scores, clamp, S(1) - clamp);
    return ops::affine(t, ops::mean_all(t, logs), S(-1), S(0));
}

// Raw, label-free record of one training step. The evaluation side enriches
// this into a MetricsRecord through the hidden-label gate.
struct StepRecord {
    int64_t iteration = 0;
    bool standalone = false;
    std::vector<int64_t> q_ids;
    std::vector<std::vector<double>> scores;  // [expert][point], real discriminator scores
    AssignmentMap competitive;                // pure argmax winners
    AssignmentMap final_map;                  // after any relocation; used for updates
    std::vector<double> spreads;              // [expert], on the competitive map
    double disc_objective = 0.0;
    double orth_residual = 0.0;
    int64_t degenerate_skips = 0;
    RelocationEvent reloc;
    double wall_ms = 0.0;
};

// Per-step sink. Implementations may hold hidden-label access; the returned
// majority mapping (expert -> mechanism, -1 when unknown) feeds label-based
// convergence detection. An empty vector means "no labels available".
class StepObserver {
public:
    virtual ~StepObserver() = default;
    virtual std::vector<int> on_step(const StepRecord& rec) = 0;
};

struct RunResult {
    bool converged = false;
    int64_t convergence_iteration = -1;  // last swap
    int64_t competitive_iterations = 0;
    int64_t standalone_iterations = 0;
    std::vector<int> mapping;  // expert -> mechanism at convergence (labels mode)
};

// Competitive training per the adversarial winner-take-all scheme: score all
// experts with the discriminator, update the discriminator on originals vs
// every expert's outputs, assign points by argmax score, relocate when an
// expert starves, then train each expert on the points it holds.
template <class S>
class Trainer {
public:
    // Optional replacement source for the *assignment* scores (the oracle of
    // the severity study). Gradient losses always use the real discriminator.
    using AssignScoreFn =
        std::function<std::vector<std::vector<double>>(const std::vector<int64_t>&)>;

    Trainer(TrainConfig cfg, const DatasetPair& data)
        : cfg_(std::move(cfg)),
          data_(data),
          ensemble_(Rng::mix(cfg_.seed, 0xE5), cfg_.resolved_experts(), cfg_.expert_channels,
                    cfg_.orthogonalization),
          disc_(Rng(Rng::mix(cfg_.seed, 0xD15C)), data.d_p().height(), data.d_p().width()),
          reloc_rng_(Rng::mix(cfg_.seed, 0x4C0)),
          proxy_rng_(Rng::mix(cfg_.seed, 0x9207)) {
        cfg_.validate();
        if (data_.d_p().count() < cfg_.batch_size || data_.d_q().count() < cfg_.batch_size) {
            throw std::invalid_argument("trainer: dataset smaller than one batch");
        }
    }

    const TrainConfig& config() const { return cfg_; }
    PodnnEnsemble<S>& ensemble() { return ensemble_; }
    DiscriminatorNet<S>& discriminator() { return disc_; }
    bool converged() const { return converged_; }

    void set_assign_score_fn(AssignScoreFn fn) { assign_score_fn_ = std::move(fn); }

    // invoked once, at the moment convergence is detected (checkpoint hook)
    std::function<void()> on_converged;

    RunResult run(StepObserver& obs) {
        RunResult result;
        int64_t it = 0;
        for (; it < cfg_.max_iterations; ++it) {
            const StepRecord rec = train_step(it);
            const std::vector<int> majority = obs.on_step(rec);
            feed_tracker(it, rec, majority);
            if (tracker_.stable(cfg_.convergence_window)) {
                converged_ = true;
                result.mapping = majority;
                if (on_converged) on_converged();
                ++it;
                break;
            }
        }
        result.competitive_iterations = it;
        result.converged = converged_;
        result.convergence_iteration = converged_ ? tracker_.last_change() : -1;
        if (converged_ && cfg_.standalone_iterations > 0) {
            standalone_phase(obs, cfg_.standalone_iterations, it);
            result.standalone_iterations = cfg_.standalone_iterations;
        }
        return result;
    }

    // One iteration of the competitive phase.
    StepRecord train_step(int64_t iteration) {
        const auto t0 = std::chrono::steady_clock::now();
        StepRecord rec;
        rec.iteration = iteration;
        const int n_exp = ensemble_.size();
        const int batch = cfg_.batch_size;
        const Minibatch mb = sample_minibatch(data_, batch, cfg_.seed, iteration);
        rec.q_ids = mb.x_q.ids;

        TapeT<S> tape;
        ensemble_.bind(tape, true);
        const auto xq = tape.constant(mb.x_q.images.template cast<S>());
        const EnsembleOut<S> ens =
            ensemble_.forward_all(tape, xq, /*training=*/true,
                                  /*block_cross=*/!cfg_.coupled_expert_updates);
        rec.orth_residual = ens.orth_residual;
        rec.degenerate_skips = ens.degenerate_skips;

        // --- score with the pre-update discriminator; its loss treats the
        // expert outputs as constants
        disc_.bind(tape, /*trainable=*/true);
        const auto xp = tape.constant(mb.x_p.images.template cast<S>());
        const DiscOut<S> real = disc_.forward(tape, xp);

        std::vector<std::vector<std::vector<double>>> hidden(n_exp);
        rec.scores.resize(n_exp);
        std::vector<typename TapeT<S>::Id> fake_scores;
        for (int e = 0; e < n_exp; ++e) {
            const auto detached = ops::detach(tape, ens.outputs[e]);
            const DiscOut<S> out = disc_.forward(tape, detached);
            fake_scores.push_back(out.score);
            const TensorT<S>& c = tape.val(out.score);
            rec.scores[e].resize(batch);
            for (int j = 0; j < batch; ++j) rec.scores[e][j] = static_cast<double>(c[j]);
            const TensorT<S>& h = tape.val(out.hidden);
            hidden[e].assign(batch, std::vector<double>(DiscriminatorNet<S>::kHiddenDim));
            for (int j = 0; j < batch; ++j)
                for (int d = 0; d < DiscriminatorNet<S>::kHiddenDim; ++d)
                    hidden[e][j][d] =
                        static_cast<double>(h[j * DiscriminatorNet<S>::kHiddenDim + d]);
        }

        const DiscLoss<S> dl =
            discriminator_loss(tape, real.score, fake_scores, S(cfg_.score_clamp));
        rec.disc_objective = static_cast<double>(tape.val(dl.objective)[0]);
        tape.backward(dl.loss);
        apply_adam(disc_, tape, cfg_.adam_disc);

        // --- assignment (argmax, oracle-overridable) and relocation
        const std::vector<std::vector<double>>* assign_scores = &rec.scores;
        std::vector<std::vector<double>> oracle_scores;
        if (cfg_.oracle_scoring) {
            if (!assign_score_fn_) {
                throw std::logic_error("trainer: oracle scoring enabled but no score source set");
            }
            oracle_scores = assign_score_fn_(rec.q_ids);
            assign_scores = &oracle_scores;
        }
        rec.competitive = AssignmentMap::from_scores(*assign_scores);
        rec.competitive.check_partition(batch);

        rec.spreads.resize(n_exp);
        for (int e = 0; e < n_exp; ++e) {
            rec.spreads[e] = hidden_spread(hidden[e], rec.competitive.claimed[e]);
        }

        rec.final_map = rec.competitive;
        if (cfg_.relocation) {
            std::vector<int> starving;
            for (int e = 0; e < n_exp; ++e) {
                if (rec.competitive.claimed[e].empty()) starving.push_back(e);
            }
            if (!starving.empty()) {
                const int idx_l = starving[reloc_rng_.below_int(static_cast<int>(starving.size()))];
                RelocationDecision dec;
                rec.final_map =
                    relocate(hidden, rec.scores, rec.competitive, idx_l, cfg_.relocation_pct, &dec);
                rec.final_map.check_partition(batch);
                rec.reloc.recipient = idx_l;
                if (dec.applied) {
                    rec.reloc.donor = dec.donor;
                    rec.reloc.moved = static_cast<int>(dec.moved_points.size());
                }
            }
        }

        // --- winner updates through the post-update discriminator
        tape.zero_grads();
        disc_.bind(tape, /*trainable=*/false);
        update_experts(tape, ens, rec.final_map);

        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                t0)
                          .count();
        return rec;
    }

    // One standalone iteration: frozen discriminator assigns, experts train.
    StepRecord standalone_step(int64_t iteration) {
        const auto t0 = std::chrono::steady_clock::now();
        StepRecord rec;
        rec.iteration = iteration;
        rec.standalone = true;
        const int n_exp = ensemble_.size();
        const int batch = cfg_.batch_size;
        const Minibatch mb = sample_minibatch(data_, batch, cfg_.seed, iteration);
        rec.q_ids = mb.x_q.ids;

        TapeT<S> tape;
        ensemble_.bind(tape, true);
        disc_.bind(tape, /*trainable=*/false);
        const auto xq = tape.constant(mb.x_q.images.template cast<S>());
        const EnsembleOut<S> ens =
            ensemble_.forward_all(tape, xq, true, !cfg_.coupled_expert_updates);
        rec.orth_residual = ens.orth_residual;
        rec.degenerate_skips = ens.degenerate_skips;

        std::vector<std::vector<std::vector<double>>> hidden(n_exp);
        rec.scores.resize(n_exp);
        std::vector<typename TapeT<S>::Id> score_nodes(n_exp);
        for (int e = 0; e < n_exp; ++e) {
            const DiscOut<S> out = disc_.forward(tape, ens.outputs[e]);
            score_nodes[e] = out.score;
            const TensorT<S>& c = tape.val(out.score);
            rec.scores[e].resize(batch);
            for (int j = 0; j < batch; ++j) rec.scores[e][j] = static_cast<double>(c[j]);
            const TensorT<S>& h = tape.val(out.hidden);
            hidden[e].assign(batch, std::vector<double>(DiscriminatorNet<S>::kHiddenDim));
            for (int j = 0; j < batch; ++j)
                for (int d = 0; d < DiscriminatorNet<S>::kHiddenDim; ++d)
                    hidden[e][j][d] =
                        static_cast<double>(h[j * DiscriminatorNet<S>::kHiddenDim + d]);
        }

        const std::vector<std::vector<double>>* assign_scores = &rec.scores;
        std::vector<std::vector<double>> oracle_scores;
        if (cfg_.oracle_scoring && assign_score_fn_) {
            oracle_scores = assign_score_fn_(rec.q_ids);
            assign_scores = &oracle_scores;
        }
        rec.competitive = AssignmentMap::from_scores(*assign_scores);
        rec.competitive.check_partition(batch);
        rec.final_map = rec.competitive;
        rec.spreads.resize(n_exp);
        for (int e = 0; e < n_exp; ++e) {
            rec.spreads[e] = hidden_spread(hidden[e], rec.competitive.claimed[e]);
        }

        // expert losses on claimed score rows; the frozen discriminator passes
        // gradients through without receiving any
        std::vector<typename TapeT<S>::Id> losses;
        std::vector<int> with_claims;
        for (int e = 0; e < n_exp; ++e) {
            const auto& claimed = rec.final_map.claimed[e];
            if (claimed.empty()) continue;
            const auto sel = ops::gather_rows(tape, score_nodes[e], claimed);
            losses.push_back(expert_loss(tape, sel, S(cfg_.score_clamp)));
            with_claims.push_back(e);
        }
        if (!losses.empty()) {
            const auto total =
                ops::weighted_sum(tape, losses, std::vector<S>(losses.size(), S(1)));
            tape.backward(total);
            apply_expert_adams(tape, with_claims);
        }

        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                t0)
                          .count();
        return rec;
    }

    void standalone_phase(StepObserver& obs, int iterations, int64_t start_iteration) {
        if (!converged_) {
            throw std::logic_error("standalone_phase: competitive phase has not converged");
        }
        for (int k = 0; k < iterations; ++k) {
            const StepRecord rec = standalone_step(start_iteration + k);
            obs.on_step(rec);
        }
    }

private:
    void feed_tracker(int64_t it, const StepRecord& rec, const std::vector<int>& majority) {
        if (cfg_.convergence_mode == ConvergenceMode::labels) {
            if (majority.empty()) {
                throw std::logic_error(
                    "trainer: label-based convergence requires an observer with label access");
            }
            tracker_.feed(it, majority, majority_mapping_valid(majority));
        } else {
            const std::vector<int> key = proxy_key();
            bool valid = true;
            std::vector<int> seen(ensemble_.size(), 0);
            for (int winner : key) seen[winner] = 1;
            for (int e = 0; e < ensemble_.size(); ++e) valid = valid && seen[e] == 1;
            tracker_.feed(it, key, valid);
        }
    }

    // Label-free convergence proxy: winner identity on a fixed probe batch.
    std::vector<int> proxy_key() {
        if (probe_.count() == 0) {
            const int probe_n = std::min(2 * cfg_.batch_size, data_.d_q().count());
            std::vector<int> order(data_.d_q().count());
            for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
            proxy_rng_.shuffle(order);
            order.resize(probe_n);
            const int h = data_.d_q().height(), w = data_.d_q().width();
            const int64_t plane = static_cast<int64_t>(h) * w;
            Tensor imgs({probe_n, 1, h, w});
            for (int k = 0; k < probe_n; ++k) {
                const double* src = data_.d_q().images.data() + order[k] * plane;
                std::copy(src, src + plane, imgs.data() + k * plane);
            }
            probe_ = ImageBatch(std::move(imgs));
        }
        TapeT<S> tape;
        ensemble_.bind(tape, false);
        disc_.bind(tape, false);
        const auto x = tape.constant(probe_.images.template cast<S>());
        // inference-mode forward: the probe must not disturb running stats
        std::vector<typename TapeT<S>::Id> u(ensemble_.size());
        for (int e = 0; e < ensemble_.size(); ++e) {
            u[e] = ensemble_.expert(e).forward_to_p(tape, x, /*training=*/false);
        }
        std::vector<typename TapeT<S>::Id> v;
        if (ensemble_.orthogonalization() && ensemble_.size() > 1) {
            v = orthogonalize(tape, u, true).v;
        } else {
            v = u;
        }
        std::vector<std::vector<double>> scores(ensemble_.size());
        for (int e = 0; e < ensemble_.size(); ++e) {
            const auto out = ensemble_.expert(e).forward_from_p(tape, v[e]);
            const DiscOut<S> d = disc_.forward(tape, out);
            const TensorT<S>& c = tape.val(d.score);
            scores[e].assign(c.v.begin(), c.v.end());
        }
        const AssignmentMap map = AssignmentMap::from_scores(scores);
        std::vector<int> key(probe_.count(), -1);
        for (int e = 0; e < map.n_experts(); ++e) {
            for (int j : map.claimed[e]) key[j] = e;
        }
        return key;
    }

    template <class Net>
    void apply_adam(Net& net, TapeT<S>& tape, const AdamConfig& cfg) {
        const auto ids = net.param_ids();
        std::vector<TensorT<S>> grads;
        grads.reserve(ids.size());
        for (auto id : ids) grads.push_back(tape.grad_or_zero(id));
        auto params = net.params();
        adam_step(params, grads, net.adam, cfg);
    }

    void update_experts(TapeT<S>& tape, const EnsembleOut<S>& ens, const AssignmentMap& map) {
        std::vector<typename TapeT<S>::Id> losses;
        std::vector<int> with_claims;
        for (int e = 0; e < ensemble_.size(); ++e) {
            const auto& claimed = map.claimed[e];
            if (claimed.empty()) continue;
            const auto img = ops::gather_rows(tape, ens.outputs[e], claimed);
            const DiscOut<S> out = disc_.forward(tape, img);
            losses.push_back(expert_loss(tape, out.score, S(cfg_.score_clamp)));
            with_claims.push_back(e);
        }
        if (losses.empty()) return;
        const auto total = ops::weighted_sum(tape, losses, std::vector<S>(losses.size(), S(1)));
        tape.backward(total);
        if (cfg_.coupled_expert_updates) {
            std::vector<int> all(ensemble_.size());
            for (int e = 0; e < ensemble_.size(); ++e) all[e] = e;
            apply_expert_adams(tape, all);
        } else {
            apply_expert_adams(tape, with_claims);
        }
    }

    void apply_expert_adams(TapeT<S>& tape, const std::vector<int>& experts) {
        for (int e : experts) {
            apply_adam(ensemble_.expert(e), tape, cfg_.adam_experts);
        }
    }

    TrainConfig cfg_;
    const DatasetPair& data_;
    PodnnEnsemble<S> ensemble_;
    DiscriminatorNet<S> disc_;
    Rng reloc_rng_;
    Rng proxy_rng_;
    ImageBatch probe_;
    StabilityTracker tracker_;
    bool converged_ = false;
    AssignScoreFn assign_score_fn_;
};

} // namespace podnn
