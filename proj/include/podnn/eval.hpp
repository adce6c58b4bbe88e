#pragma once

#include <cstdint>
#include <vector>

#include "podnn/dataset.hpp"
#include "podnn/mechanisms.hpp"
#include "podnn/metrics.hpp"
#include "podnn/trainer.hpp"

namespace podnn {
namespace eval {

// The single gate to a dataset's hidden mechanism labels and pre-images.
// Training code never holds one of these.
class LabelView {
public:
    explicit LabelView(const DatasetPair& pair) : pair_(pair) {}

    int n_mechanisms() const { return pair_.n_mechanisms(); }

    int label_of(int64_t q_index) const {
        return pair_.hidden_labels_.at(static_cast<size_t>(q_index));
    }

    // Pre-images for a set of d_q element indices, in order.
    Tensor pre_images(const std::vector<int64_t>& q_indices) const {
        const int h = pair_.d_q().height(), w = pair_.d_q().width();
        const int64_t plane = static_cast<int64_t>(h) * w;
        Tensor out({static_cast<int>(q_indices.size()), 1, h, w});
        for (size_t k = 0; k < q_indices.size(); ++k) {
            const double* src = pair_.pre_images_.data() + q_indices[k] * plane;
            std::copy(src, src + plane, out.data() + static_cast<int64_t>(k) * plane);
        }
        return out;
    }

    const MechanismSpec& spec_of(int mechanism) const { return pair_.specs().at(mechanism); }

private:
    const DatasetPair& pair_;
};

// Assignment-score source that knows each point's true mechanism: the expert
// designated for that mechanism scores 1, everyone else 0. The designation is
// a fixed random expert<->mechanism matching drawn once per run.
class OracleDiscriminator {
public:
    OracleDiscriminator(const LabelView& labels, int n_experts, uint64_t seed);

    const std::vector<int>& designation() const { return designation_; }  // expert -> mechanism

    std::vector<std::vector<double>> scores(const std::vector<int64_t>& q_indices) const;

private:
    const LabelView& labels_;
    std::vector<int> designation_;
};

// Enriches raw step records with label-derived fields (per-mechanism score
// curves, claim counts, majorities) and accumulates the run's metrics table.
class RunObserver : public StepObserver {
public:
    explicit RunObserver(const DatasetPair& pair);

    std::vector<int> on_step(const StepRecord& rec) override;

    const MetricsTable& table() const { return table_; }
    MetricsTable& table() { return table_; }

private:
    LabelView labels_;
    MetricsTable table_;
};

// Mean squared error between expert outputs and the ground-truth pre-images,
// restricted to pixels that survive the mechanism's boundary loss.
double inversion_error(const Tensor& outputs, const Tensor& pre_images,
                       const MechanismSpec& spec);

// Offline replay of the convergence decision over a full run log.
inline ConvergenceAnalysis convergence_iteration(const std::vector<MetricsRecord>& rows,
                                                 int window) {
    return analyze_convergence(rows, window);
}

} // namespace eval
} // namespace podnn
