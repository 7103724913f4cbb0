#include "mer/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "mer/error.hpp"
#include "mer/tsr.hpp"

namespace mer {

namespace {

void skip_space_and_comments(const std::vector<unsigned char>& b, std::size_t& pos) {
  while (pos < b.size()) {
    if (std::isspace(b[pos])) {
      ++pos;
    } else if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
}

std::size_t read_header_int(const std::vector<unsigned char>& b, std::size_t& pos, const char* what) {
  skip_space_and_comments(b, pos);
  const std::size_t start = pos;
  std::size_t v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + static_cast<std::size_t>(b[pos] - '0');
    if (v > 1u << 20) throw ParseError(std::string("PGM: ") + what + " too large", start);
    ++pos;
  }
  if (pos == start) throw ParseError(std::string("PGM: expected ") + what, start);
  return v;
}

}  // namespace

Tensor decode_pgm(const std::vector<unsigned char>& b) {
  if (b.size() < 2 || b[0] != 'P' || b[1] != '5') throw ParseError("PGM: missing P5 magic", 0);
  std::size_t pos = 2;
  const std::size_t w = read_header_int(b, pos, "width");
  const std::size_t h = read_header_int(b, pos, "height");
  const std::size_t maxval_at = pos;
  const std::size_t maxval = read_header_int(b, pos, "maxval");
  if (w == 0 || h == 0) throw ParseError("PGM: zero-sized image", maxval_at);
  if (maxval != 255) throw ParseError("PGM: only maxval 255 is supported", maxval_at);
  if (pos >= b.size() || !std::isspace(b[pos])) throw ParseError("PGM: missing separator after header", pos);
  ++pos;
  if (b.size() - pos < w * h) throw ParseError("PGM: truncated pixel data", b.size());
  std::vector<float> px(w * h);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<float>(b[pos + i]) / 255.0f;
  return Tensor({1, h, w}, std::move(px));
}

Tensor load_pgm(const std::filesystem::path& path) {
  try {
    return decode_pgm(read_file_bytes(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

std::vector<unsigned char> encode_pgm(const Tensor& img) {
  std::size_t h, w;
  if (img.rank() == 3 && img.dim(0) == 1) {
    h = img.dim(1);
    w = img.dim(2);
  } else if (img.rank() == 2) {
    h = img.dim(0);
    w = img.dim(1);
  } else {
    throw DimensionError("PGM: expected [1,H,W] or [H,W], got " + shape_str(img.shape()));
  }
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(out.size() + h * w);
  for (float v : img.data()) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    out.push_back(static_cast<unsigned char>(std::lround(c * 255.0f)));
  }
  return out;
}

void save_pgm(const std::filesystem::path& path, const Tensor& img) { write_file_bytes(path, encode_pgm(img)); }

Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  if (img.rank() != 3) throw DimensionError("resize_bilinear: expected [C,H,W], got " + shape_str(img.shape()));
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (out_h == 0 || out_w == 0) throw ParameterError("resize_bilinear: output size must be positive");
  if (h == out_h && w == out_w) return Tensor(img.shape(), std::vector<float>(img.data().begin(), img.data().end()));

  struct Tap {
    std::size_t i0, i1;
    double w1;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      t[i] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(h, out_h);
  const auto tx = taps(w, out_w);
  auto in = img.data();
  std::vector<float> out(c * out_h * out_w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* src = in.data() + ch * h * w;
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        const Tap& a = ty[y];
        const Tap& b = tx[x];
        const double top = src[a.i0 * w + b.i0] * (1.0 - b.w1) + src[a.i0 * w + b.i1] * b.w1;
        const double bot = src[a.i1 * w + b.i0] * (1.0 - b.w1) + src[a.i1 * w + b.i1] * b.w1;
        out[(ch * out_h + y) * out_w + x] = static_cast<float>(top * (1.0 - a.w1) + bot * a.w1);
      }
  }
  return Tensor({c, out_h, out_w}, std::move(out));
}

Tensor grid_split(const Tensor& frame, std::size_t n) {
  if (frame.rank() != 3 || frame.dim(0) != 1)
    throw DimensionError("grid_split: expected [1,H,W], got " + shape_str(frame.shape()));
  const std::size_t h = frame.dim(1), w = frame.dim(2);
  if (n == 0 || h % n != 0 || w % n != 0)
    throw GeometryError("grid_split: " + std::to_string(h) + "x" + std::to_string(w) + " frame is not divisible into a " +
                        std::to_string(n) + "x" + std::to_string(n) + " grid");
  const std::size_t ph = h / n, pw = w / n;
  auto in = frame.data();
  std::vector<float> out(h * w);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      float* dst = out.data() + (r * n + c) * ph * pw;
      for (std::size_t y = 0; y < ph; ++y)
        std::copy_n(in.data() + (r * ph + y) * w + c * pw, pw, dst + y * pw);
    }
  return Tensor({n * n, ph, pw}, std::move(out));
}

Tensor grid_merge(const Tensor& tiles, std::size_t n) {
  if (tiles.rank() != 3 || tiles.dim(0) != n * n)
    throw DimensionError("grid_merge: expected [n*n,h,w], got " + shape_str(tiles.shape()));
  const std::size_t ph = tiles.dim(1), pw = tiles.dim(2), w = pw * n;
  auto in = tiles.data();
  std::vector<float> out(tiles.numel());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const float* src = in.data() + (r * n + c) * ph * pw;
      for (std::size_t y = 0; y < ph; ++y) std::copy_n(src + y * pw, pw, out.data() + (r * ph + y) * w + c * pw);
    }
  return Tensor({1, ph * n, w}, std::move(out));
}

Tensor grid_patches(const Tensor& frame, std::size_t n, std::size_t out_size) {
  return resize_bilinear(grid_split(frame, n), out_size, out_size);
}

}  // namespace mer
