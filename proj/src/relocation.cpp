#include "podnn/relocation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace podnn {

AssignmentMap AssignmentMap::from_scores(const std::vector<std::vector<double>>& scores) {
    if (scores.empty()) throw std::invalid_argument("assign: no experts");
    const size_t batch = scores[0].size();
    AssignmentMap map;
    map.claimed.resize(scores.size());
    for (size_t j = 0; j < batch; ++j) {
        int best = 0;
        for (size_t e = 1; e < scores.size(); ++e) {
            if (scores[e].size() != batch) {
                throw std::invalid_argument("assign: ragged score matrix");
            }
            if (scores[e][j] > scores[best][j]) best = static_cast<int>(e);
        }
        map.claimed[best].push_back(static_cast<int>(j));
    }
    return map;
}

void AssignmentMap::check_partition(int batch_size) const {
    std::vector<int> seen(batch_size, 0);
    for (const auto& list : claimed) {
        for (size_t k = 0; k < list.size(); ++k) {
            const int j = list[k];
            if (j < 0 || j >= batch_size) {
                throw std::logic_error("assignment: point index out of range");
            }
            if (k > 0 && list[k - 1] >= j) {
                throw std::logic_error("assignment: claimed list not strictly ascending");
            }
            if (seen[j]++) throw std::logic_error("assignment: point claimed twice");
        }
    }
    for (int j = 0; j < batch_size; ++j) {
        if (!seen[j]) throw std::logic_error("assignment: point left unclaimed");
    }
}

double hidden_spread(const std::vector<std::vector<double>>& vectors) {
    const size_t n = vectors.size();
    if (n < 2) return 0.0;
    std::vector<double> dists;
    dists.reserve(n * (n - 1) / 2);
    for (size_t a = 0; a + 1 < n; ++a) {
        for (size_t b = a + 1; b < n; ++b) {
            double sq = 0.0;
            for (size_t d = 0; d < vectors[a].size(); ++d) {
                const double diff = vectors[a][d] - vectors[b][d];
                sq += diff * diff;
            }
            dists.push_back(std::sqrt(sq));
        }
    }
    double mean = 0.0;
    for (double d : dists) mean += d;
    mean /= static_cast<double>(dists.size());
    double var = 0.0;
    for (double d : dists) var += (d - mean) * (d - mean);
    var /= static_cast<double>(dists.size());
    return std::sqrt(var);
}

double hidden_spread(const std::vector<std::vector<double>>& h_all,
                     const std::vector<int>& claimed) {
    std::vector<std::vector<double>> sel;
    sel.reserve(claimed.size());
    for (int j : claimed) sel.push_back(h_all[j]);
    return hidden_spread(sel);
}

AssignmentMap relocate(const std::vector<std::vector<std::vector<double>>>& h,
                       const std::vector<std::vector<double>>& scores, const AssignmentMap& dp,
                       int recipient, double relocation_pct, RelocationDecision* decision) {
    const int n_experts = dp.n_experts();
    if (recipient < 0 || recipient >= n_experts) {
        throw std::invalid_argument("relocate: recipient index out of range");
    }
    if (!dp.claimed[recipient].empty()) {
        throw std::invalid_argument("relocate: recipient must have zero claimed points");
    }
    if (!(relocation_pct > 0.0 && relocation_pct < 1.0)) {
        throw std::invalid_argument("relocate: relocation percentage must be in (0,1)");
    }

    RelocationDecision local;
    RelocationDecision& dec = decision ? *decision : local;
    dec = RelocationDecision{};
    dec.recipient = recipient;
    dec.spreads.resize(n_experts);
    for (int e = 0; e < n_experts; ++e) {
        dec.spreads[e] = hidden_spread(h[e], dp.claimed[e]);
    }

    // donor: highest spread among experts that actually have point pairs
    int donor = -1;
    for (int e = 0; e < n_experts; ++e) {
        if (dp.claimed[e].size() < 2) continue;
        if (donor < 0 || dec.spreads[e] > dec.spreads[donor]) donor = e;
    }
    if (donor < 0) {
        dec.note = "no expert with at least two claimed points; relocation skipped";
        return dp;
    }
    dec.donor = donor;

    const auto& pool = dp.claimed[donor];
    const int n_move = static_cast<int>(
        std::ceil(relocation_pct * static_cast<double>(pool.size())));

    // ascending confidence; batch index breaks exact score ties
    std::vector<int> order = pool;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[donor][a] != scores[donor][b]) return scores[donor][a] < scores[donor][b];
        return a < b;
    });
    dec.moved_points.assign(order.begin(), order.begin() + n_move);
    std::sort(dec.moved_points.begin(), dec.moved_points.end());

    AssignmentMap out = dp;
    std::vector<int> keep;
    keep.reserve(pool.size() - n_move);
    size_t mi = 0;
    for (int j : pool) {
        if (mi < dec.moved_points.size() && dec.moved_points[mi] == j) {
            ++mi;
        } else {
            keep.push_back(j);
        }
    }
    out.claimed[donor] = std::move(keep);
    out.claimed[recipient] = dec.moved_points;
    dec.applied = true;
    return out;
}

} // namespace podnn
