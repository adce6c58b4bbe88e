#include "podnn/eval.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "podnn/rng.hpp"

namespace podnn {
namespace eval {

OracleDiscriminator::OracleDiscriminator(const LabelView& labels, int n_experts, uint64_t seed)
    : labels_(labels), designation_(n_experts, -1) {
    std::vector<int> mechs(labels.n_mechanisms());
    std::iota(mechs.begin(), mechs.end(), 0);
    Rng rng = Rng::stream(seed, 0x04ac1e);
    rng.shuffle(mechs);
    for (int e = 0; e < n_experts && e < static_cast<int>(mechs.size()); ++e) {
        designation_[e] = mechs[e];
    }
}

std::vector<std::vector<double>> OracleDiscriminator::scores(
    const std::vector<int64_t>& q_indices) const {
    std::vector<std::vector<double>> out(designation_.size(),
                                         std::vector<double>(q_indices.size(), 0.0));
    for (size_t j = 0; j < q_indices.size(); ++j) {
        const int label = labels_.label_of(q_indices[j]);
        for (size_t e = 0; e < designation_.size(); ++e) {
            if (designation_[e] == label) out[e][j] = 1.0;
        }
    }
    return out;
}

RunObserver::RunObserver(const DatasetPair& pair) : labels_(pair) {
    table_.n_mechanisms = pair.n_mechanisms();
}

std::vector<int> RunObserver::on_step(const StepRecord& rec) {
    const int n_exp = static_cast<int>(rec.scores.size());
    const int n_mech = labels_.n_mechanisms();
    if (table_.n_experts == 0) table_.n_experts = n_exp;

    std::vector<int> point_label(rec.q_ids.size());
    for (size_t j = 0; j < rec.q_ids.size(); ++j) {
        point_label[j] = labels_.label_of(rec.q_ids[j]);
    }

    MetricsRecord row;
    row.iteration = rec.iteration;
    row.standalone = rec.standalone;
    row.spread = rec.spreads;
    row.disc_objective = rec.disc_objective;
    row.orth_residual = rec.orth_residual;
    row.degenerate_skips = rec.degenerate_skips;
    row.reloc = rec.reloc;
    row.wall_ms = rec.wall_ms;

    row.mean_score.assign(n_exp, std::vector<double>(n_mech, std::nan("")));
    for (int e = 0; e < n_exp; ++e) {
        std::vector<double> sum(n_mech, 0.0);
        std::vector<int> cnt(n_mech, 0);
        for (size_t j = 0; j < rec.q_ids.size(); ++j) {
            sum[point_label[j]] += rec.scores[e][j];
            cnt[point_label[j]] += 1;
        }
        for (int m = 0; m < n_mech; ++m) {
            if (cnt[m] > 0) row.mean_score[e][m] = sum[m] / cnt[m];
        }
    }

    row.claims.assign(n_exp, std::vector<int>(n_mech, 0));
    row.majority.assign(n_exp, -1);
    row.score_std.assign(n_exp, 0.0);
    for (int e = 0; e < n_exp; ++e) {
        const auto& claimed = rec.competitive.claimed[e];
        for (int j : claimed) row.claims[e][point_label[j]] += 1;
        if (!claimed.empty()) {
            int best = 0;
            for (int m = 1; m < n_mech; ++m) {
                if (row.claims[e][m] > row.claims[e][best]) best = m;
            }
            row.majority[e] = best;
        }
        if (claimed.size() >= 2) {
            double mean = 0.0;
            for (int j : claimed) mean += rec.scores[e][j];
            mean /= static_cast<double>(claimed.size());
            double var = 0.0;
            for (int j : claimed) {
                var += (rec.scores[e][j] - mean) * (rec.scores[e][j] - mean);
            }
            row.score_std[e] = std::sqrt(var / static_cast<double>(claimed.size()));
        }
    }

    const std::vector<int> majority = row.majority;
    table_.rows.push_back(std::move(row));
    return majority;
}

double inversion_error(const Tensor& outputs, const Tensor& pre_images,
                       const MechanismSpec& spec) {
    if (outputs.shape != pre_images.shape) {
        throw std::invalid_argument("inversion_error: output/pre-image shape mismatch");
    }
    const int n = outputs.dim(0), h = outputs.dim(2), w = outputs.dim(3);
    const std::vector<uint8_t> mask = surviving_pixel_mask(spec, h, w);
    const int64_t plane = static_cast<int64_t>(h) * w;
    double acc = 0.0;
    int64_t count = 0;
    for (int i = 0; i < n; ++i) {
        const double* a = outputs.data() + i * plane;
        const double* b = pre_images.data() + i * plane;
        for (int64_t p = 0; p < plane; ++p) {
            if (!mask[static_cast<size_t>(p)]) continue;
            acc += (a[p] - b[p]) * (a[p] - b[p]);
            count += 1;
        }
    }
    if (count == 0) throw std::invalid_argument("inversion_error: no surviving pixels");
    return acc / static_cast<double>(count);
}

} // namespace eval
} // namespace podnn
