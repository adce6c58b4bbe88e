#pragma once

#include <string>
#include <vector>

#include "podnn/assignment.hpp"

namespace podnn {

// Outcome of one relocation attempt.
struct RelocationDecision {
    int donor = -1;      // expert with the highest hidden spread
    int recipient = -1;  // expert that had zero claims
    std::vector<int> moved_points;
    std::vector<double> spreads;  // per-expert diagnostics at decision time
    bool applied = false;
    std::string note;  // set when the relocation degenerated to a no-op
};

// Standard deviation (population) of all unordered pairwise euclidean
// distances among an expert's claimed hidden vectors. Zero for fewer than
// two points.
double hidden_spread(const std::vector<std::vector<double>>& vectors);

// Convenience overload indexing into per-point hidden vectors h[point] for a
// claimed index list.
double hidden_spread(const std::vector<std::vector<double>>& h_all,
                     const std::vector<int>& claimed);

// Moves the ceil(rp * n) lowest-score points of the highest-spread expert to
// `recipient` (an expert with zero claims, chosen by the caller).
//   h: per expert, per batch point, the discriminator hidden vector of that
//      expert's output on the point;
//   scores: per expert, per batch point, the discriminator score.
// Ties: donor argmax resolves to the lowest expert index; point ordering is
// by (score ascending, batch index ascending).
AssignmentMap relocate(const std::vector<std::vector<std::vector<double>>>& h,
                       const std::vector<std::vector<double>>& scores, const AssignmentMap& dp,
                       int recipient, double relocation_pct, RelocationDecision* decision);

} // namespace podnn
