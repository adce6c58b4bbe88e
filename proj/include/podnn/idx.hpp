#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "podnn/mechanisms.hpp"
#include "podnn/tensor.hpp"

namespace podnn {

// IDX binary container (big-endian), as used by the MNIST family.
// Image files carry magic 0x00000803, label files 0x00000801.

struct IdxError : std::runtime_error {
    IdxError(const std::string& msg, int64_t byte_offset)
        : std::runtime_error(msg + " (at byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    int64_t offset;
};

// Reads an image file; pixels are scaled to [0,1] by /255.
ImageBatch load_idx_images(const std::string& path);

std::vector<uint8_t> load_idx_labels(const std::string& path);

// Writes pixels back as unsigned bytes (values are clamped then rounded).
void save_idx_images(const std::string& path, const ImageBatch& batch);

} // namespace podnn
