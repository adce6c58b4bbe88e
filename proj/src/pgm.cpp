#include "podnn/pgm.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace podnn {

void write_pgm_grid(const std::string& path, const std::vector<Tensor>& tile_rows) {
    if (tile_rows.empty()) throw std::invalid_argument("pgm: no tile rows");
    const int h = tile_rows[0].dim(2), w = tile_rows[0].dim(3);
    int cols = 0;
    for (const Tensor& row : tile_rows) {
        if (row.ndim() != 4 || row.dim(1) != 1 || row.dim(2) != h || row.dim(3) != w) {
            throw std::invalid_argument("pgm: tile rows disagree on image shape");
        }
        cols = std::max(cols, row.dim(0));
    }
    const int rows = static_cast<int>(tile_rows.size());
    const int gw = cols * w + (cols - 1);
    const int gh = rows * h + (rows - 1);
    std::vector<unsigned char> canvas(static_cast<size_t>(gw) * gh, 128);

    for (int r = 0; r < rows; ++r) {
        const Tensor& tiles = tile_rows[r];
        for (int c = 0; c < tiles.dim(0); ++c) {
            const double* img = tiles.data() + static_cast<int64_t>(c) * h * w;
            const int oy = r * (h + 1), ox = c * (w + 1);
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    double v = img[y * w + x];
                    if (v < 0.0) v = 0.0;
                    if (v > 1.0) v = 1.0;
                    canvas[static_cast<size_t>(oy + y) * gw + ox + x] =
                        static_cast<unsigned char>(std::lround(v * 255.0));
                }
            }
        }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out.is_open()) throw std::runtime_error("pgm: cannot write " + path);
    out << "P5\n" << gw << " " << gh << "\n255\n";
    out.write(reinterpret_cast<const char*>(canvas.data()),
              static_cast<std::streamsize>(canvas.size()));
    if (!out.good()) throw std::runtime_error("pgm: write failed: " + path);
}

} // namespace podnn
