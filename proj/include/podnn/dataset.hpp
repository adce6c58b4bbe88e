#pragma once

#include <cstdint>
#include <vector>

#include "podnn/mechanisms.hpp"
#include "podnn/tensor.hpp"

namespace podnn {

namespace eval {
class LabelView;  // the one gate to hidden labels, defined in the evaluation module
}

// Originals (D_P) and transformed points (D_Q). Which mechanism produced a
// given D_Q element, and its pre-image, are known only to this object; the
// training path sees images and element indices. Evaluation code reaches the
// labels through eval::LabelView.
class DatasetPair {
public:
    DatasetPair() = default;

    const ImageBatch& d_p() const { return d_p_; }
    const ImageBatch& d_q() const { return d_q_; }
    int n_mechanisms() const { return static_cast<int>(specs_.size()); }
    const std::vector<MechanismSpec>& specs() const { return specs_; }

    friend class eval::LabelView;
    friend DatasetPair build_dataset(const ImageBatch&, const std::vector<MechanismSpec>&,
                                     const std::vector<double>&, uint64_t);

private:
    ImageBatch d_p_;
    ImageBatch d_q_;
    std::vector<MechanismSpec> specs_;
    std::vector<int> hidden_labels_;  // per d_q element: producing mechanism index
    Tensor pre_images_;               // per d_q element: the original it was made from
};

// Random bars-and-blobs canvases, bundled so the whole suite runs without
// external data. Deterministic per (seed, index).
ImageBatch synthetic_images(uint64_t seed, int count, int height, int width);

// Splits `base` into disjoint halves (originals / pre-images), applies the
// mechanisms with exact stratified counts per `proportions` (uniform when
// empty; largest-remainder rounding otherwise).
DatasetPair build_dataset(const ImageBatch& base, const std::vector<MechanismSpec>& specs,
                          const std::vector<double>& proportions, uint64_t seed);

// Epoch-shuffled without-replacement minibatches, deterministic per
// (seed, iteration). P and Q use independent streams.
struct Minibatch {
    ImageBatch x_p;
    ImageBatch x_q;  // ids carry d_q element indices
};
Minibatch sample_minibatch(const DatasetPair& pair, int batch_size, uint64_t seed,
                           int64_t iteration);

} // namespace podnn
