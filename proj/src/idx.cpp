#include "podnn/idx.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace podnn {

namespace {

constexpr uint32_t kImageMagic = 0x00000803;
constexpr uint32_t kLabelMagic = 0x00000801;

uint32_t read_be32(std::istream& in, int64_t& offset, const char* what) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (in.gcount() != 4) {
        throw IdxError(std::string("idx: truncated file while reading ") + what, offset);
    }
    offset += 4;
    return (static_cast<uint32_t>(buf[0]) << 24) | (static_cast<uint32_t>(buf[1]) << 16) |
           (static_cast<uint32_t>(buf[2]) << 8) | static_cast<uint32_t>(buf[3]);
}

void write_be32(std::ostream& out, uint32_t v) {
    const unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                                  static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

} // namespace

ImageBatch load_idx_images(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) {
        throw std::runtime_error("idx: cannot open file: " + path);
    }
    int64_t offset = 0;
    const uint32_t magic = read_be32(in, offset, "magic");
    if (magic != kImageMagic) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "idx: bad image magic 0x%08x", magic);
        throw IdxError(buf, 0);
    }
    const uint32_t n = read_be32(in, offset, "image count");
    const uint32_t h = read_be32(in, offset, "height");
    const uint32_t w = read_be32(in, offset, "width");
    if (h == 0 || w == 0 || h > 4096 || w > 4096) {
        throw IdxError("idx: implausible image dimensions", 8);
    }

    const int64_t total = static_cast<int64_t>(n) * h * w;
    std::vector<unsigned char> raw(static_cast<size_t>(total));
    in.read(reinterpret_cast<char*>(raw.data()), total);
    if (in.gcount() != total) {
        throw IdxError("idx: truncated pixel data", offset + in.gcount());
    }

    Tensor images({static_cast<int>(n), 1, static_cast<int>(h), static_cast<int>(w)});
    for (int64_t i = 0; i < total; ++i) images[i] = raw[i] / 255.0;
    return ImageBatch(std::move(images));
}

std::vector<uint8_t> load_idx_labels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) {
        throw std::runtime_error("idx: cannot open file: " + path);
    }
    int64_t offset = 0;
    const uint32_t magic = read_be32(in, offset, "magic");
    if (magic != kLabelMagic) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "idx: bad label magic 0x%08x", magic);
        throw IdxError(buf, 0);
    }
    const uint32_t n = read_be32(in, offset, "label count");
    std::vector<uint8_t> labels(n);
    in.read(reinterpret_cast<char*>(labels.data()), n);
    if (in.gcount() != static_cast<int64_t>(n)) {
        throw IdxError("idx: truncated label data", offset + in.gcount());
    }
    return labels;
}

void save_idx_images(const std::string& path, const ImageBatch& batch) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out.is_open()) {
        throw std::runtime_error("idx: cannot write file: " + path);
    }
    write_be32(out, kImageMagic);
    write_be32(out, static_cast<uint32_t>(batch.count()));
    write_be32(out, static_cast<uint32_t>(batch.height()));
    write_be32(out, static_cast<uint32_t>(batch.width()));
    const Tensor& t = batch.images;
    std::vector<unsigned char> raw(static_cast<size_t>(t.size()));
    for (int64_t i = 0; i < t.size(); ++i) {
        double v = t[i];
        if (v < 0.0) v = 0.0;
        if (v > 1.0) v = 1.0;
        raw[static_cast<size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out.good()) {
        throw std::runtime_error("idx: write failed: " + path);
    }
}

} // namespace podnn
