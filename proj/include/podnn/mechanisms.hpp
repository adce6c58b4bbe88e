#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "podnn/tensor.hpp"

namespace podnn {

// Batch of grayscale images in [0,1], shape [N,1,H,W], with optional
// per-element provenance ids (dataset element indices, not labels).
struct ImageBatch {
    Tensor images;
    std::vector<int64_t> ids;

    ImageBatch() = default;
    explicit ImageBatch(Tensor t) : images(std::move(t)) { validate(); }
    ImageBatch(Tensor t, std::vector<int64_t> provenance)
        : images(std::move(t)), ids(std::move(provenance)) {
        validate();
    }

    int count() const { return images.ndim() == 4 ? images.dim(0) : 0; }
    int height() const { return images.dim(2); }
    int width() const { return images.dim(3); }

    int64_t id_of(int i) const { return ids.empty() ? i : ids[i]; }

    const double* image(int i) const {
        return images.data() + static_cast<int64_t>(i) * height() * width();
    }

private:
    void validate() const;
};

enum class Direction { left, right, up, down, up_left, up_right, down_left, down_right };

const char* direction_name(Direction d);
Direction direction_from_name(const std::string& name);

// Pixel shift applied to image content for one severity step.
struct Shift {
    int dx;
    int dy;
};
Shift direction_shift(Direction d);

enum class MechanismKind { translate, noise, contrast_invert };

// One invertible image transformation with its parameters. Deterministic
// given its seed.
struct MechanismSpec {
    MechanismKind kind = MechanismKind::contrast_invert;
    Direction direction = Direction::left;  // translate only
    int severity = 0;                       // translate only, in pixels
    double sigma = 0.0;                     // noise only
    uint64_t seed = 0;                      // noise only

    static MechanismSpec translate(Direction d, int severity);
    static MechanismSpec noise(double sigma, uint64_t seed);
    static MechanismSpec contrast_invert();

    std::string name() const;
    void validate() const;
};

// Applies the mechanism to every image. Translation fills vacated pixels
// with zeros; noise draws a fresh field per element id and clamps to [0,1].
ImageBatch apply_mechanism(const MechanismSpec& spec, const ImageBatch& images);

// Exact inverse for translate / contrast-invert. Noise has no pixel-exact
// inverse; callers holding the stored pre-images pass them and get them back.
ImageBatch ground_truth_inverse(const MechanismSpec& spec, const ImageBatch& images,
                                const ImageBatch* stored_pre_images = nullptr);

// 1 where a pixel survives apply-then-inverse (translations lose a border
// strip), 0 elsewhere. Row-major H*W.
std::vector<uint8_t> surviving_pixel_mask(const MechanismSpec& spec, int height, int width);

} // namespace podnn
