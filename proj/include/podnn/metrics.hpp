#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace podnn {

struct RelocationEvent {
    int donor = -1;
    int recipient = -1;
    int moved = 0;
    bool happened() const { return donor >= 0; }
};

// One row per training iteration. Label-derived fields (scores per true
// mechanism, claim counts, majorities) are filled by the evaluation side;
// the trainer itself never sees them. Wall-clock time is carried in memory
// and written to a separate timing file so metrics.csv stays byte-stable
// across reruns.
struct MetricsRecord {
    int64_t iteration = 0;
    bool standalone = false;

    std::vector<std::vector<double>> mean_score;  // [expert][mechanism], NaN if unseen
    std::vector<std::vector<int>> claims;         // [expert][mechanism]
    std::vector<double> spread;                   // [expert] hidden spread
    std::vector<double> score_std;                // [expert] std of claimed scores
    std::vector<int> majority;                    // [expert] majority mechanism or -1

    double disc_objective = 0.0;  // value of the maximization objective
    double orth_residual = 0.0;
    int64_t degenerate_skips = 0;
    RelocationEvent reloc;

    double wall_ms = 0.0;
};

struct MetricsTable {
    int n_experts = 0;
    int n_mechanisms = 0;
    std::vector<MetricsRecord> rows;
};

void write_metrics_csv(const std::string& path, const MetricsTable& table);
MetricsTable read_metrics_csv(const std::string& path);

void write_timing_csv(const std::string& path, const MetricsTable& table);

// ---------------------------------------------------------------------------
// convergence bookkeeping
// ---------------------------------------------------------------------------

// Tracks a per-iteration key (the expert -> majority-mechanism mapping) and
// reports the last iteration at which it changed ("last swap") plus the
// length of the current valid unchanged streak.
class StabilityTracker {
public:
    void feed(int64_t iteration, const std::vector<int>& key, bool valid) {
        const bool changed = !has_key_ || key != last_key_;
        if (changed) last_change_ = iteration;
        streak_ = valid ? (changed ? 1 : streak_ + 1) : 0;
        last_key_ = key;
        has_key_ = true;
    }

    bool stable(int window) const { return streak_ >= window; }
    int64_t last_change() const { return has_key_ ? last_change_ : -1; }
    int64_t streak() const { return streak_; }

private:
    std::vector<int> last_key_;
    bool has_key_ = false;
    int64_t last_change_ = -1;
    int64_t streak_ = 0;
};

// A majority mapping is usable for convergence only when every expert claims
// points and no two experts share a majority mechanism.
bool majority_mapping_valid(const std::vector<int>& majority);

struct ConvergenceAnalysis {
    bool converged = false;
    int64_t iteration = -1;  // last swap; 0 when stable from the start
    std::vector<int> mapping;
};

// Offline evaluation of a full run log (competitive rows only): converged iff
// the log ends with `window` consecutive valid iterations of one unchanged
// mapping. Mirrors the online stopping rule exactly.
ConvergenceAnalysis analyze_convergence(const std::vector<MetricsRecord>& rows, int window);

} // namespace podnn
