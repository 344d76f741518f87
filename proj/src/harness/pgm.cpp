#include "predflow/harness/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "predflow/errors.hpp"

namespace predflow {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      if (!tok.empty()) break;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

long header_int(std::istream& in, const char* what) {
  const std::string tok = header_token(in);
  try {
    std::size_t used = 0;
    const long v = std::stol(tok, &used);
    if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::logic_error&) {
    throw BadFormat(std::string("bad PGM ") + what + " '" + tok + "'");
  }
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string magic = header_token(in);
  if (magic != "P2" && magic != "P5") throw BadFormat(path.string() + " is not a PGM file");
  const long w = header_int(in, "width");
  const long h = header_int(in, "height");
  const long maxval = header_int(in, "maxval");
  if (maxval > 65535) throw BadFormat("PGM maxval out of range");

  GrayImage img{RowMat(h, w), static_cast<int>(maxval)};
  if (magic == "P2") {
    for (long i = 0; i < h * w; ++i) {
      long v;
      if (!(in >> v) || v < 0 || v > maxval) throw BadFormat("truncated or invalid P2 pixel data");
      img.values.data()[i] = static_cast<double>(v);
    }
    return img;
  }
  const int bytes = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> raw(static_cast<std::size_t>(h * w * bytes));
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw BadFormat("truncated P5 pixel data in " + path.string());
  }
  for (long i = 0; i < h * w; ++i) {
    const unsigned v = bytes == 1 ? raw[i] : (raw[2 * i] << 8u) | raw[2 * i + 1];
    img.values.data()[i] = static_cast<double>(v);
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << image.width() << ' ' << image.height() << "\n255\n";
  const double k = 255.0 / image.maxval;
  std::vector<unsigned char> raw(static_cast<std::size_t>(image.values.size()));
  for (Index i = 0; i < image.values.size(); ++i) {
    raw[i] = static_cast<unsigned char>(std::clamp(std::lround(image.values.data()[i] * k), 0L, 255L));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

GrayImage render_filter_grid(const Mat& filters, Index tile_h, Index tile_w, Index grid_cols) {
  if (tile_h < 1 || tile_w < 1) throw DimensionMismatch("tile shape must be positive");
  require_dim(tile_h * tile_w, filters.cols(), "filter length vs tile shape");
  const Index n = filters.rows();
  if (n == 0) throw DimensionMismatch("no filters to render");
  const Index cols =
      grid_cols > 0 ? grid_cols : static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(n))));
  const Index rows = (n + cols - 1) / cols;
  GrayImage img{RowMat::Zero(rows * tile_h + rows - 1, cols * tile_w + cols - 1), 255};
  for (Index f = 0; f < n; ++f) {
    const double lo = filters.row(f).minCoeff();
    const double hi = filters.row(f).maxCoeff();
    const Index top = (f / cols) * (tile_h + 1);
    const Index left = (f % cols) * (tile_w + 1);
    for (Index r = 0; r < tile_h; ++r) {
      for (Index c = 0; c < tile_w; ++c) {
        const double v = filters(f, r * tile_w + c);
        img.values(top + r, left + c) = hi > lo ? 255.0 * (v - lo) / (hi - lo) : 128.0;
      }
    }
  }
  return img;
}

}  // namespace predflow
