#pragma once

#include <string>
#include <vector>

#include "podnn/tensor.hpp"

namespace podnn {

// Binary PGM (P5) grid writer: one row of tiles per entry, tiles separated by
// a one-pixel mid-gray gutter. All tiles must share one image shape.
void write_pgm_grid(const std::string& path, const std::vector<Tensor>& tile_rows);

} // namespace podnn
