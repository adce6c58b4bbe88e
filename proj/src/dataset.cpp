#include "podnn/dataset.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "podnn/rng.hpp"

namespace podnn {

ImageBatch synthetic_images(uint64_t seed, int count, int height, int width) {
    if (count < 1 || height < 8 || width < 8) {
        throw std::invalid_argument("synthetic_images: need count >= 1 and canvas >= 8x8");
    }
    Tensor images({count, 1, height, width});
    const int64_t plane = static_cast<int64_t>(height) * width;
    for (int i = 0; i < count; ++i) {
        Rng rng = Rng::stream(seed, static_cast<uint64_t>(i));
        double* img = images.data() + i * plane;

        // 1-3 axis-aligned bars, kept one pixel inside the frame so that
        // translations produce a distinguishable boundary signature.
        const int n_bars = 1 + rng.below_int(3);
        for (int bar = 0; bar < n_bars; ++bar) {
            const bool horizontal = rng.below_int(2) == 0;
            const int thickness = 1 + rng.below_int(2);
            const double intensity = rng.uniform(0.55, 1.0);
            if (horizontal) {
                const int len = 5 + rng.below_int(width - 6);
                const int y0 = 1 + rng.below_int(std::max(1, height - 1 - thickness));
                const int x0 = 1 + rng.below_int(std::max(1, width - 1 - len));
                for (int y = y0; y < std::min(height - 1, y0 + thickness); ++y)
                    for (int x = x0; x < std::min(width - 1, x0 + len); ++x)
                        img[y * width + x] = intensity;
            } else {
                const int len = 5 + rng.below_int(height - 6);
                const int x0 = 1 + rng.below_int(std::max(1, width - 1 - thickness));
                const int y0 = 1 + rng.below_int(std::max(1, height - 1 - len));
                for (int y = y0; y < std::min(height - 1, y0 + len); ++y)
                    for (int x = x0; x < std::min(width - 1, x0 + thickness); ++x)
                        img[y * width + x] = intensity;
            }
        }

        // occasionally a small soft blob
        if (rng.below_int(2) == 0) {
            const int by = 2 + rng.below_int(height - 5);
            const int bx = 2 + rng.below_int(width - 5);
            const double peak = rng.uniform(0.6, 1.0);
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const double falloff = (dy == 0 && dx == 0) ? 1.0 : 0.5;
                    double& px = img[(by + dy) * width + (bx + dx)];
                    px = std::min(1.0, std::max(px, peak * falloff));
                }
        }
    }
    return ImageBatch(std::move(images));
}

namespace {

// Largest-remainder apportionment of `total` into weighted counts.
std::vector<int> stratified_counts(int total, const std::vector<double>& weights) {
    const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(wsum > 0.0)) throw std::invalid_argument("build_dataset: proportions must sum to > 0");
    const int n = static_cast<int>(weights.size());
    std::vector<int> counts(n);
    std::vector<std::pair<double, int>> remainders(n);
    int assigned = 0;
    for (int i = 0; i < n; ++i) {
        const double exact = total * weights[i] / wsum;
        counts[i] = static_cast<int>(exact);
        remainders[i] = {exact - counts[i], i};
        assigned += counts[i];
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int k = 0; k < total - assigned; ++k) counts[remainders[k % n].second] += 1;
    return counts;
}

ImageBatch gather(const ImageBatch& src, const std::vector<int>& idx, bool keep_ids) {
    const int h = src.height(), w = src.width();
    const int64_t plane = static_cast<int64_t>(h) * w;
    Tensor out({static_cast<int>(idx.size()), 1, h, w});
    std::vector<int64_t> ids;
    ids.reserve(idx.size());
    for (size_t k = 0; k < idx.size(); ++k) {
        const double* s = src.images.data() + static_cast<int64_t>(idx[k]) * plane;
        double* d = out.data() + static_cast<int64_t>(k) * plane;
        std::copy(s, s + plane, d);
        ids.push_back(keep_ids ? src.id_of(idx[k]) : static_cast<int64_t>(k));
    }
    return keep_ids ? ImageBatch(std::move(out), std::move(ids)) : ImageBatch(std::move(out));
}

} // namespace

DatasetPair build_dataset(const ImageBatch& base, const std::vector<MechanismSpec>& specs,
                          const std::vector<double>& proportions, uint64_t seed) {
    if (specs.empty()) {
        throw std::invalid_argument("build_dataset: mechanism spec list must not be empty");
    }
    if (!proportions.empty() && proportions.size() != specs.size()) {
        throw std::invalid_argument("build_dataset: proportions count does not match specs");
    }
    if (base.count() < 2) {
        throw std::invalid_argument("build_dataset: need at least 2 base images");
    }

    // Disjoint halves: originals on one side, pre-images of D_Q on the other,
    // so no paired supervision can leak.
    std::vector<int> order(base.count());
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng = Rng::stream(seed, 0x53504c49);
    split_rng.shuffle(order);

    const int n_q = base.count() / 2;
    const std::vector<int> q_src(order.begin(), order.begin() + n_q);
    const std::vector<int> p_src(order.begin() + n_q, order.end());

    DatasetPair pair;
    pair.specs_ = specs;
    pair.d_p_ = gather(base, p_src, false);

    const std::vector<double> weights =
        proportions.empty() ? std::vector<double>(specs.size(), 1.0) : proportions;
    const std::vector<int> counts = stratified_counts(n_q, weights);

    const int h = base.height(), w = base.width();
    const int64_t plane = static_cast<int64_t>(h) * w;
    pair.pre_images_ = Tensor({n_q, 1, h, w});
    pair.hidden_labels_.resize(n_q);
    Tensor q_images({n_q, 1, h, w});

    int cursor = 0;
    for (size_t m = 0; m < specs.size(); ++m) {
        if (counts[m] == 0) continue;
        std::vector<int> chunk(q_src.begin() + cursor, q_src.begin() + cursor + counts[m]);
        ImageBatch pre = gather(base, chunk, false);
        // element ids must be the final d_q indices so noise fields are
        // reproducible per element
        std::vector<int64_t> ids(chunk.size());
        for (size_t k = 0; k < chunk.size(); ++k) ids[k] = cursor + static_cast<int64_t>(k);
        pre = ImageBatch(std::move(pre.images), std::move(ids));
        const ImageBatch transformed = apply_mechanism(specs[m], pre);
        for (int k = 0; k < counts[m]; ++k) {
            const int dst = cursor + k;
            pair.hidden_labels_[dst] = static_cast<int>(m);
            std::copy(pre.images.data() + static_cast<int64_t>(k) * plane,
                      pre.images.data() + static_cast<int64_t>(k + 1) * plane,
                      pair.pre_images_.data() + static_cast<int64_t>(dst) * plane);
            std::copy(transformed.images.data() + static_cast<int64_t>(k) * plane,
                      transformed.images.data() + static_cast<int64_t>(k + 1) * plane,
                      q_images.data() + static_cast<int64_t>(dst) * plane);
        }
        cursor += counts[m];
    }

    std::vector<int64_t> q_ids(n_q);
    std::iota(q_ids.begin(), q_ids.end(), 0);
    pair.d_q_ = ImageBatch(std::move(q_images), std::move(q_ids));
    return pair;
}

namespace {

std::vector<int> epoch_batch(int dataset_size, int batch_size, uint64_t stream_seed,
                             int64_t iteration) {
    const int64_t batches_per_epoch = dataset_size / batch_size;
    const int64_t epoch = iteration / batches_per_epoch;
    const int64_t slot = iteration % batches_per_epoch;
    std::vector<int> perm(dataset_size);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = Rng::stream(stream_seed, static_cast<uint64_t>(epoch));
    rng.shuffle(perm);
    return std::vector<int>(perm.begin() + slot * batch_size,
                            perm.begin() + (slot + 1) * batch_size);
}

} // namespace

Minibatch sample_minibatch(const DatasetPair& pair, int batch_size, uint64_t seed,
                           int64_t iteration) {
    if (batch_size < 1) throw std::invalid_argument("sample_minibatch: batch_size must be >= 1");
    if (batch_size > pair.d_p().count() || batch_size > pair.d_q().count()) {
        throw std::invalid_argument("sample_minibatch: batch_size " + std::to_string(batch_size) +
                                    " exceeds dataset size (" + std::to_string(pair.d_p().count()) +
                                    " originals, " + std::to_string(pair.d_q().count()) +
                                    " transformed)");
    }
    Minibatch mb;
    mb.x_p = ImageBatch(
        gather(pair.d_p(), epoch_batch(pair.d_p().count(), batch_size, Rng::mix(seed, 0x5031),
                                       iteration),
               false)
            .images);
    const std::vector<int> q_rows =
        epoch_batch(pair.d_q().count(), batch_size, Rng::mix(seed, 0x5132), iteration);
    const int64_t plane = static_cast<int64_t>(pair.d_q().height()) * pair.d_q().width();
    Tensor xq({batch_size, 1, pair.d_q().height(), pair.d_q().width()});
    std::vector<int64_t> ids(q_rows.size());
    for (size_t k = 0; k < q_rows.size(); ++k) {
        const double* s = pair.d_q().images.data() + static_cast<int64_t>(q_rows[k]) * plane;
        std::copy(s, s + plane, xq.data() + static_cast<int64_t>(k) * plane);
        ids[k] = q_rows[k];
    }
    mb.x_q = ImageBatch(std::move(xq), std::move(ids));
    return mb;
}

} // namespace podnn
