#pragma once

#include <cstdint>
#include <vector>

namespace podnn {

// Partition of a minibatch across experts: claimed[e] holds the batch indices
// the expert won, each list sorted ascending. Lists are disjoint and jointly
// cover 0..batch-1.
struct AssignmentMap {
    std::vector<std::vector<int>> claimed;

    int n_experts() const { return static_cast<int>(claimed.size()); }

    int n_points() const {
        int total = 0;
        for (const auto& c : claimed) total += static_cast<int>(c.size());
        return total;
    }

    // point -> argmax over experts, ties to the lowest expert index
    static AssignmentMap from_scores(const std::vector<std::vector<double>>& scores);

    // partition invariant: disjoint, exhaustive, sorted
    void check_partition(int batch_size) const;
};

} // namespace podnn
