#include "podnn/mechanisms.hpp"

#include <array>
#include <stdexcept>

#include "podnn/rng.hpp"

namespace podnn {

void ImageBatch::validate() const {
    if (images.ndim() != 4 || images.dim(1) != 1) {
        throw std::invalid_argument("image batch must be shaped [N,1,H,W], got " +
                                    images.shape_str());
    }
    if (!ids.empty() && static_cast<int>(ids.size()) != images.dim(0)) {
        throw std::invalid_argument("image batch: provenance id count does not match batch size");
    }
}

namespace {

constexpr std::array<const char*, 8> kDirectionNames = {
    "left", "right", "up", "down", "up-left", "up-right", "down-left", "down-right"};

constexpr std::array<Shift, 8> kDirectionShifts = {{
    {-1, 0}, {1, 0}, {0, -1}, {0, 1}, {-1, -1}, {1, -1}, {-1, 1}, {1, 1},
}};

} // namespace

const char* direction_name(Direction d) { return kDirectionNames[static_cast<int>(d)]; }

Direction direction_from_name(const std::string& name) {
    for (size_t i = 0; i < kDirectionNames.size(); ++i) {
        if (name == kDirectionNames[i]) return static_cast<Direction>(i);
    }
    throw std::invalid_argument("unknown translation direction: " + name);
}

Shift direction_shift(Direction d) { return kDirectionShifts[static_cast<int>(d)]; }

MechanismSpec MechanismSpec::translate(Direction d, int severity) {
    MechanismSpec s;
    s.kind = MechanismKind::translate;
    s.direction = d;
    s.severity = severity;
    s.validate();
    return s;
}

MechanismSpec MechanismSpec::noise(double sigma, uint64_t seed) {
    MechanismSpec s;
    s.kind = MechanismKind::noise;
    s.sigma = sigma;
    s.seed = seed;
    s.validate();
    return s;
}

MechanismSpec MechanismSpec::contrast_invert() {
    MechanismSpec s;
    s.kind = MechanismKind::contrast_invert;
    return s;
}

void MechanismSpec::validate() const {
    if (kind == MechanismKind::translate && severity < 1) {
        throw std::invalid_argument("translate mechanism requires severity >= 1");
    }
    if (kind == MechanismKind::noise && !(sigma > 0.0)) {
        throw std::invalid_argument("noise mechanism requires sigma > 0");
    }
}

std::string MechanismSpec::name() const {
    switch (kind) {
        case MechanismKind::translate:
            return std::string("translate-") + direction_name(direction) + "-" +
                   std::to_string(severity) + "px";
        case MechanismKind::noise: {
            std::string s = "noise-" + std::to_string(sigma);
            while (!s.empty() && s.back() == '0') s.pop_back();
            if (!s.empty() && s.back() == '.') s.pop_back();
            return s;
        }
        case MechanismKind::contrast_invert:
            return "contrast-invert";
    }
    return "unknown";
}

namespace {

// out[y][x] = in[y-dy][x-dx], zero fill at vacated pixels
Tensor shift_images(const Tensor& in, int dx, int dy) {
    const int n = in.dim(0), h = in.dim(2), w = in.dim(3);
    Tensor out(in.shape);
    for (int i = 0; i < n; ++i) {
        const double* src = in.data() + static_cast<int64_t>(i) * h * w;
        double* dst = out.data() + static_cast<int64_t>(i) * h * w;
        for (int y = 0; y < h; ++y) {
            const int sy = y - dy;
            if (sy < 0 || sy >= h) continue;
            for (int x = 0; x < w; ++x) {
                const int sx = x - dx;
                if (sx < 0 || sx >= w) continue;
                dst[y * w + x] = src[sy * w + sx];
            }
        }
    }
    return out;
}

} // namespace

ImageBatch apply_mechanism(const MechanismSpec& spec, const ImageBatch& images) {
    spec.validate();
    const int h = images.height(), w = images.width();
    switch (spec.kind) {
        case MechanismKind::translate: {
            if (spec.severity >= h || spec.severity >= w) {
                throw std::invalid_argument("translate severity " + std::to_string(spec.severity) +
                                            " must be smaller than the image size " +
                                            std::to_string(h) + "x" + std::to_string(w));
            }
            const Shift s = direction_shift(spec.direction);
            return ImageBatch(shift_images(images.images, s.dx * spec.severity, s.dy * spec.severity),
                              images.ids);
        }
        case MechanismKind::noise: {
            Tensor out = images.images;
            const int64_t plane = static_cast<int64_t>(h) * w;
            for (int i = 0; i < images.count(); ++i) {
                Rng rng = Rng::stream(spec.seed, static_cast<uint64_t>(images.id_of(i)));
                double* p = out.data() + i * plane;
                for (int64_t j = 0; j < plane; ++j) {
                    double v = p[j] + rng.normal(0.0, spec.sigma);
                    if (v < 0.0) v = 0.0;
                    if (v > 1.0) v = 1.0;
                    p[j] = v;
                }
            }
            return ImageBatch(std::move(out), images.ids);
        }
        case MechanismKind::contrast_invert: {
            Tensor out = images.images;
            for (int64_t i = 0; i < out.size(); ++i) out[i] = 1.0 - out[i];
            return ImageBatch(std::move(out), images.ids);
        }
    }
    throw std::invalid_argument("apply_mechanism: unknown mechanism kind");
}

ImageBatch ground_truth_inverse(const MechanismSpec& spec, const ImageBatch& images,
                                const ImageBatch* stored_pre_images) {
    switch (spec.kind) {
        case MechanismKind::translate: {
            const Shift s = direction_shift(spec.direction);
            return ImageBatch(
                shift_images(images.images, -s.dx * spec.severity, -s.dy * spec.severity),
                images.ids);
        }
        case MechanismKind::contrast_invert:
            return apply_mechanism(spec, images);
        case MechanismKind::noise: {
            if (stored_pre_images == nullptr) {
                throw std::invalid_argument(
                    "ground_truth_inverse: noise has no pixel inverse; stored pre-images required");
            }
            return *stored_pre_images;
        }
    }
    throw std::invalid_argument("ground_truth_inverse: unknown mechanism kind");
}

std::vector<uint8_t> surviving_pixel_mask(const MechanismSpec& spec, int height, int width) {
    std::vector<uint8_t> mask(static_cast<size_t>(height) * width, 1);
    if (spec.kind != MechanismKind::translate) return mask;
    const Shift s = direction_shift(spec.direction);
    const int dx = s.dx * spec.severity;
    const int dy = s.dy * spec.severity;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const bool ok = (y + dy >= 0 && y + dy < height && x + dx >= 0 && x + dx < width);
            if (!ok) mask[static_cast<size_t>(y) * width + x] = 0;
        }
    }
    return mask;
}

} // namespace podnn
