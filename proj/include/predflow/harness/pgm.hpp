#pragma once

#include <filesystem>

#include "predflow/types.hpp"

namespace predflow {

// Grayscale raster; values are in [0, maxval].
struct GrayImage {
  RowMat values;
  int maxval = 255;

  Index height() const { return values.rows(); }
  Index width() const { return values.cols(); }
};

// Accepts P2 (ASCII) and P5 (binary, 8 or 16 bit). Throws IoError / BadFormat.
GrayImage read_pgm(const std::filesystem::path& path);
// Always writes 8-bit P5; values are rounded and clamped to [0, 255].
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

// Lays out each row of `filters` as a tile_h x tile_w tile (row-major), with
// one-pixel black separators between tiles. Each row is min-max scaled to
// [0, 255] on its own; a constant row renders mid-gray. `grid_cols` of 0
// picks ceil(sqrt(rows)).
GrayImage render_filter_grid(const Mat& filters, Index tile_h, Index tile_w, Index grid_cols = 0);

}  // namespace predflow
