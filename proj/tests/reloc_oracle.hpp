#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

// Brute-force reference for the relocation step, written independently of the
// production code path: full distance matrices, two-pass statistics, explicit
// candidate sorting. Shared by the unit suite and the acceptance suite.

namespace reloc_oracle {

struct Result {
    std::vector<std::vector<int>> claimed;
    int donor = -1;
    std::vector<int> moved;
    bool applied = false;
};

inline double pair_distance_std(const std::vector<std::vector<double>>& pts) {
    const int m = static_cast<int>(pts.size());
    if (m < 2) return 0.0;
    std::vector<double> all;
    for (int a = 0; a < m; ++a) {
        for (int b = a + 1; b < m; ++b) {
            double sq = 0.0;
            for (size_t d = 0; d < pts[a].size(); ++d) {
                sq += (pts[a][d] - pts[b][d]) * (pts[a][d] - pts[b][d]);
            }
            all.push_back(std::sqrt(sq));
        }
    }
    double mean = 0.0;
    for (double v : all) mean += v;
    mean /= static_cast<double>(all.size());
    double acc = 0.0;
    for (double v : all) acc += (v - mean) * (v - mean);
    return std::sqrt(acc / static_cast<double>(all.size()));
}

inline Result run(const std::vector<std::vector<std::vector<double>>>& h,
                  const std::vector<std::vector<double>>& c,
                  const std::vector<std::vector<int>>& dp, int idx_l, double rp) {
    const int n_experts = static_cast<int>(dp.size());
    Result r;
    r.claimed = dp;

    std::vector<double> stds(n_experts, 0.0);
    for (int e = 0; e < n_experts; ++e) {
        std::vector<std::vector<double>> pts;
        for (int j : dp[e]) pts.push_back(h[e][j]);
        stds[e] = pair_distance_std(pts);
    }

    int donor = -1;
    for (int e = 0; e < n_experts; ++e) {
        if (static_cast<int>(dp[e].size()) < 2) continue;
        if (donor == -1 || stds[e] > stds[donor]) donor = e;
    }
    if (donor == -1) return r;
    r.donor = donor;

    std::vector<std::pair<double, int>> ranked;
    for (int j : dp[donor]) ranked.emplace_back(c[donor][j], j);
    std::sort(ranked.begin(), ranked.end());

    const int n_move =
        static_cast<int>(std::ceil(rp * static_cast<double>(dp[donor].size())));
    for (int k = 0; k < n_move; ++k) r.moved.push_back(ranked[k].second);
    std::sort(r.moved.begin(), r.moved.end());

    std::vector<int> rest;
    for (int j : dp[donor]) {
        if (std::find(r.moved.begin(), r.moved.end(), j) == r.moved.end()) rest.push_back(j);
    }
    r.claimed[donor] = rest;
    r.claimed[idx_l] = r.moved;
    r.applied = true;
    return r;
}

} // namespace reloc_oracle
