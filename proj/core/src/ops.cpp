#include "mer/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "mer/error.hpp"
#include "mer/gradcheck.hpp"

namespace mer {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

struct ConvGeom {
  std::size_t cin, h, w, kh, kw, ho, wo;
  int stride, pad;
};

// Output columns [lo, hi) whose input column ox*stride - pad + k lies inside [0, w).
std::pair<std::size_t, std::size_t> valid_cols(const ConvGeom& g, std::size_t k) {
  const long off = static_cast<long>(k) - g.pad;
  const long s = g.stride;
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long hi = (static_cast<long>(g.w) - 1 - off) < 0 ? 0 : (static_cast<long>(g.w) - 1 - off) / s + 1;
  lo = std::min<long>(lo, static_cast<long>(g.wo));
  hi = std::clamp<long>(hi, lo, static_cast<long>(g.wo));
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

bool same_size_unit_stride(const ConvGeom& g) { return g.stride == 1 && g.ho == g.h && g.wo == g.w; }

// Destination index range [lo, hi) of a plane shifted by `shift` that maps
// inside a source plane of `n` values.
std::pair<long, long> shifted_range(long shift, long n) { return {std::max(0L, -shift), std::min(n, n - shift)}; }

// Same-size stride-1 unfold: each (c, ky, kx) row is the image plane shifted
// by (ky - pad) * w + (kx - pad), with the wrapped border columns zeroed.
void im2col_same(const float* img, const ConvGeom& g, float* col) {
  const long h = static_cast<long>(g.h), w = static_cast<long>(g.w), n = h * w;
  for (std::size_t c = 0; c < g.cin; ++c) {
    const float* src = img + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        float* dst = col + ((c * g.kh + ky) * g.kw + kx) * static_cast<std::size_t>(n);
        const long dy = static_cast<long>(ky) - g.pad, dx = static_cast<long>(kx) - g.pad;
        const auto [lo, hi] = shifted_range(dy * w + dx, n);
        std::fill(dst, dst + lo, 0.0f);
        if (hi > lo) std::copy(src + lo + dy * w + dx, src + hi + dy * w + dx, dst + lo);
        std::fill(dst + std::max(lo, hi), dst + n, 0.0f);
        if (dx > 0)
          for (long y = 0; y < h; ++y) std::fill(dst + y * w + w - dx, dst + y * w + w, 0.0f);
        else if (dx < 0)
          for (long y = 0; y < h; ++y) std::fill(dst + y * w, dst + y * w - dx, 0.0f);
      }
    }
  }
}

// Adjoint of im2col_same. Clobbers the wrapped border entries of col.
void col2im_same(float* col, const ConvGeom& g, float* img) {
  const long h = static_cast<long>(g.h), w = static_cast<long>(g.w), n = h * w;
  for (std::size_t c = 0; c < g.cin; ++c) {
    float* dst = img + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        float* src = col + ((c * g.kh + ky) * g.kw + kx) * static_cast<std::size_t>(n);
        const long dy = static_cast<long>(ky) - g.pad, dx = static_cast<long>(kx) - g.pad;
        if (dx > 0)
          for (long y = 0; y < h; ++y) std::fill(src + y * w + w - dx, src + y * w + w, 0.0f);
        else if (dx < 0)
          for (long y = 0; y < h; ++y) std::fill(src + y * w, src + y * w - dx, 0.0f);
        const auto [lo, hi] = shifted_range(dy * w + dx, n);
        float* d = dst + dy * w + dx;
        for (long i = lo; i < hi; ++i) d[i] += src[i];
      }
    }
  }
}

// Unfolds one image [Cin,H,W] into col [Cin*kh*kw, ho*wo].
void im2col(const float* img, const ConvGeom& g, float* col) {
  if (same_size_unit_stride(g)) return im2col_same(img, g, col);
  const std::size_t plane = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    const float* src = img + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        float* dst = col + ((c * g.kh + ky) * g.kw + kx) * plane;
        const auto [lo, hi] = valid_cols(g, kx);
        const long xoff = static_cast<long>(kx) - g.pad;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          float* row = dst + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(row, row + g.wo, 0.0f);
            continue;
          }
          std::fill(row, row + lo, 0.0f);
          std::fill(row + hi, row + g.wo, 0.0f);
          const float* srow = src + iy * static_cast<long>(g.w) + xoff;
          if (g.stride == 1) {
            std::copy(srow + lo, srow + hi, row + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) row[ox] = srow[static_cast<long>(ox) * g.stride];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters col back into img (accumulating). col is
// used as scratch.
void col2im(float* col, const ConvGeom& g, float* img) {
  if (same_size_unit_stride(g)) return col2im_same(col, g, img);
  const std::size_t plane = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    float* dst = img + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const float* src = col + ((c * g.kh + ky) * g.kw + kx) * plane;
        const auto [lo, hi] = valid_cols(g, kx);
        const long xoff = static_cast<long>(kx) - g.pad;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          float* drow = dst + iy * static_cast<long>(g.w) + xoff;
          const float* row = src + oy * g.wo;
          if (g.stride == 1) {
            for (std::size_t ox = lo; ox < hi; ++ox) drow[ox] += row[ox];
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) drow[static_cast<long>(ox) * g.stride] += row[ox];
          }
        }
      }
    }
  }
}

std::size_t conv_out(std::size_t in, std::size_t k, int stride, int pad, const char* axis) {
  const long span = static_cast<long>(in) + 2L * pad - static_cast<long>(k);
  if (span < 0 || span % stride != 0)
    throw GeometryError(std::string("conv2d: ") + axis + " extent " + std::to_string(in) + " with kernel " +
                        std::to_string(k) + ", stride " + std::to_string(stride) + ", padding " +
                        std::to_string(pad) + " gives a non-integral output size");
  return static_cast<std::size_t>(span / stride + 1);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias, int stride, int padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (stride < 1) throw ParameterError("conv2d: stride must be >= 1");
  if (padding < 0) throw ParameterError("conv2d: padding must be >= 0");
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != cin)
    throw DimensionError("conv2d: weight expects " + std::to_string(weight.dim(1)) + " input channels, got " +
                         std::to_string(cin));
  if (kh % 2 == 0 || kw % 2 == 0) throw ParameterError("conv2d: kernel sides must be odd");
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout))
    throw DimensionError("conv2d: bias must have shape [" + std::to_string(cout) + "]");

  ConvGeom g{cin, h, w, kh, kw, conv_out(h, kh, stride, padding, "height"), conv_out(w, kw, stride, padding, "width"),
             stride, padding};
  const std::size_t plane = g.ho * g.wo;
  const std::size_t patch = cin * kh * kw;

  std::vector<float> out(n * cout * plane);
  std::vector<float> col(patch * plane);
  ConstMap wm(weight.data().data(), cout, patch);
  for (std::size_t b = 0; b < n; ++b) {
    im2col(input.data().data() + b * cin * h * w, g, col.data());
    MutMap om(out.data() + b * cout * plane, cout, plane);
    om.noalias() = wm * ConstMap(col.data(), patch, plane);
    if (bias) {
      auto bd = bias->data();
      for (std::size_t c = 0; c < cout; ++c) om.row(c).array() += bd[c];
    }
  }

  std::vector<Tensor> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return make_result({n, cout, g.ho, g.wo}, std::move(out), inputs,
                     [input, weight, g, n, cout, has_bias](std::span<const float> gout, const GradSinks& sinks) {
                       const std::size_t plane = g.ho * g.wo;
                       const std::size_t patch = g.cin * g.kh * g.kw;
                       const std::size_t img = g.cin * g.h * g.w;
                       auto gx = sinks.at(0);
                       auto gw = sinks.at(1);
                       std::span<float> gb = has_bias ? sinks.at(2) : std::span<float>{};
                       ConstMap wm(weight.data().data(), cout, patch);
                       std::vector<float> col(patch * plane);
                       RowMat dw = RowMat::Zero(cout, patch);
                       for (std::size_t b = 0; b < n; ++b) {
                         ConstMap dy(gout.data() + b * cout * plane, cout, plane);
                         if (!gw.empty()) {
                           im2col(input.data().data() + b * img, g, col.data());
                           dw.noalias() += dy * ConstMap(col.data(), patch, plane).transpose();
                         }
                         if (!gb.empty())
                           for (std::size_t c = 0; c < cout; ++c) {
                             double s = 0.0;
                             const float* r = gout.data() + (b * cout + c) * plane;
                             for (std::size_t i = 0; i < plane; ++i) s += r[i];
                             gb[c] += static_cast<float>(s);
                           }
                         if (!gx.empty()) {
                           MutMap(col.data(), patch, plane).noalias() = wm.transpose() * dy;
                           col2im(col.data(), g, gx.data() + b * img);
                         }
                       }
                       if (!gw.empty()) {
                         MutMap gwm(gw.data(), cout, patch);
                         gwm += dw;
                       }
                     });
}

Tensor conv1d(const Tensor& input, const Tensor& kernel) {
  require_rank(input, 3, "conv1d input");
  require_rank(kernel, 1, "conv1d kernel");
  if (input.dim(1) != 1) throw DimensionError("conv1d: input must be [N,1,C], got " + shape_str(input.shape()));
  const std::size_t k = kernel.dim(0);
  if (k % 2 == 0) throw ParameterError("conv1d: kernel size must be odd, got " + std::to_string(k));
  const std::size_t n = input.dim(0), c = input.dim(2);
  const long half = static_cast<long>(k / 2);
  auto x = input.data();
  auto wk = kernel.data();
  std::vector<float> out(n * c, 0.0f);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < c; ++i) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) {
        const long j = static_cast<long>(i) + static_cast<long>(t) - half;
        if (j >= 0 && j < static_cast<long>(c)) acc += static_cast<double>(wk[t]) * x[b * c + j];
      }
      out[b * c + i] = static_cast<float>(acc);
    }
  return make_result(input.shape(), std::move(out), {input, kernel},
                     [input, kernel, n, c, k, half](std::span<const float> gout, const GradSinks& sinks) {
                       auto gx = sinks.at(0);
                       auto gk = sinks.at(1);
                       auto x = input.data();
                       auto wk = kernel.data();
                       for (std::size_t b = 0; b < n; ++b)
                         for (std::size_t i = 0; i < c; ++i) {
                           const float go = gout[b * c + i];
                           for (std::size_t t = 0; t < k; ++t) {
                             const long j = static_cast<long>(i) + static_cast<long>(t) - half;
                             if (j < 0 || j >= static_cast<long>(c)) continue;
                             if (!gx.empty()) gx[b * c + j] += wk[t] * go;
                             if (!gk.empty()) gk[t] += x[b * c + j] * go;
                           }
                         }
                     });
}

Tensor relu(const Tensor& x) {
  std::vector<float> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
  if (auto* pattern = detail::activation_pattern_sink())
    for (std::size_t i = 0; i < out.size(); ++i) detail::fold_pattern(*pattern, in[i] > 0.0f ? 1 : 0);
  return make_result(x.shape(), std::move(out), {x},
                     [x](std::span<const float> gout, const GradSinks& sinks) {
                       auto gx = sinks.at(0);
                       auto in = x.data();
                       for (std::size_t i = 0; i < gx.size(); ++i)
                         gx[i] += in[i] > 0.0f ? gout[i] : 0.0f;
                     });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<float> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0f / (1.0f + std::exp(-in[i]));
  std::vector<float> saved = out;
  return make_result(x.shape(), std::move(out), {x},
                     [s = std::move(saved)](std::span<const float> gout, const GradSinks& sinks) {
                       auto gx = sinks.at(0);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i] * s[i] * (1.0f - s[i]);
                     });
}

Tensor log(const Tensor& x) {
  std::vector<float> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(in[i] > 0.0f)) throw ParameterError("log: non-positive input");
    out[i] = std::log(in[i]);
  }
  return make_result(x.shape(), std::move(out), {x}, [x](std::span<const float> gout, const GradSinks& sinks) {
    auto gx = sinks.at(0);
    auto in = x.data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i] / in[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<float> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](std::span<const float> gout, const GradSinks& sinks) {
    for (std::size_t s = 0; s < 2; ++s) {
      auto g = sinks.at(s);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<float> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](std::span<const float> gout, const GradSinks& sinks) {
    auto ga = sinks.at(0);
    auto gb = sinks.at(1);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i];
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gout[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<float> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const float> gout, const GradSinks& sinks) {
    auto ga = sinks.at(0);
    auto gb = sinks.at(1);
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i] * y[i];
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gout[i] * x[i];
  });
}

Tensor scale(const Tensor& x, float s) {
  std::vector<float> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * s;
  return make_result(x.shape(), std::move(out), {x}, [s](std::span<const float> gout, const GradSinks& sinks) {
    auto gx = sinks.at(0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i] * s;
  });
}

Tensor channel_scale(const Tensor& x, const Tensor& m) {
  require_rank(x, 4, "channel_scale input");
  require_rank(m, 4, "channel_scale weights");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (m.dim(0) != n || m.dim(1) != c || m.dim(2) != 1 || m.dim(3) != 1)
    throw DimensionError("channel_scale: weights " + shape_str(m.shape()) + " do not match " + shape_str(x.shape()));
  std::vector<float> out(x.numel());
  auto xd = x.data();
  auto md = m.data();
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t i = 0; i < plane; ++i) out[p * plane + i] = xd[p * plane + i] * md[p];
  return make_result(x.shape(), std::move(out), {x, m},
                     [x, m, n, c, plane](std::span<const float> gout, const GradSinks& sinks) {
                       auto gx = sinks.at(0);
                       auto gm = sinks.at(1);
                       auto xd = x.data();
                       auto md = m.data();
                       for (std::size_t p = 0; p < n * c; ++p) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < plane; ++i) {
                           const float g = gout[p * plane + i];
                           if (!gx.empty()) gx[p * plane + i] += g * md[p];
                           acc += static_cast<double>(g) * xd[p * plane + i];
                         }
                         if (!gm.empty()) gm[p] += static_cast<float>(acc);
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (first.size() < 2) throw DimensionError("concat: inputs need rank >= 2");
  const std::size_t n = first[0];
  std::size_t inner = 1;
  for (std::size_t i = 2; i < first.size(); ++i) inner *= first[i];
  std::size_t total_c = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || s[0] != n || !std::equal(s.begin() + 2, s.end(), first.begin() + 2))
      throw DimensionError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
    widths.push_back(s[1] * inner);
    total_c += s[1];
  }
  const std::size_t row = total_c * inner;
  std::vector<float> out(n * row);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto d = parts[k].data();
    for (std::size_t b = 0; b < n; ++b)
      std::copy_n(d.begin() + b * widths[k], widths[k], out.begin() + b * row + off);
    off += widths[k];
  }
  Shape shape = first;
  shape[1] = total_c;
  return make_result(shape, std::move(out), parts,
                     [widths, n, row](std::span<const float> gout, const GradSinks& sinks) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         auto g = sinks.at(k);
                         if (!g.empty())
                           for (std::size_t b = 0; b < n; ++b)
                             for (std::size_t i = 0; i < widths[k]; ++i) g[b * widths[k] + i] += gout[b * row + off + i];
                         off += widths[k];
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<float> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, [](std::span<const float> gout, const GradSinks& sinks) {
    auto gx = sinks.at(0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i];
  });
}

Tensor flatten(const Tensor& x) {
  const std::size_t n = x.dim(0);
  return reshape(x, {n, x.numel() / n});
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  const std::size_t n = x.dim(0), d = x.dim(1), k = weight.dim(0);
  if (weight.dim(1) != d)
    throw DimensionError("linear: weight " + shape_str(weight.shape()) + " does not accept input " + shape_str(x.shape()));
  if (bias.rank() != 1 || bias.dim(0) != k) throw DimensionError("linear: bias must have shape [" + std::to_string(k) + "]");
  std::vector<float> out(n * k);
  MutMap om(out.data(), n, k);
  om.noalias() = ConstMap(x.data().data(), n, d) * ConstMap(weight.data().data(), k, d).transpose();
  auto bd = bias.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] += bd[j];
  return make_result({n, k}, std::move(out), {x, weight, bias},
                     [x, weight, n, d, k](std::span<const float> gout, const GradSinks& sinks) {
                       ConstMap dy(gout.data(), n, k);
                       if (auto gx = sinks.at(0); !gx.empty())
                         MutMap(gx.data(), n, d) += dy * ConstMap(weight.data().data(), k, d);
                       if (auto gw = sinks.at(1); !gw.empty())
                         MutMap(gw.data(), k, d) += dy.transpose() * ConstMap(x.data().data(), n, d);
                       if (auto gb = sinks.at(2); !gb.empty())
                         for (std::size_t j = 0; j < k; ++j) {
                           double s = 0.0;
                           for (std::size_t r = 0; r < n; ++r) s += gout[r * k + j];
                           gb[j] += static_cast<float>(s);
                         }
                     });
}

Tensor max_pool2d(const Tensor& x) {
  require_rank(x, 4, "max_pool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw GeometryError("max_pool2d: 2x2/stride-2 pooling needs even extents, got " + shape_str(x.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  std::vector<float> out(n * c * ho * wo);
  std::vector<std::uint32_t> arg(out.size());
  auto* pattern = detail::activation_pattern_sink();
  auto in = x.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const float* src = in.data() + p * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (2 * oy) * w + 2 * ox;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t q : cand)
          if (src[q] > src[best]) best = q;
        const std::size_t o = p * ho * wo + oy * wo + ox;
        out[o] = src[best];
        arg[o] = static_cast<std::uint32_t>(p * h * w + best);
        if (pattern) detail::fold_pattern(*pattern, best);
      }
  }
  return make_result({n, c, ho, wo}, std::move(out), {x},
                     [arg = std::move(arg)](std::span<const float> gout, const GradSinks& sinks) {
                       auto gx = sinks.at(0);
                       for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += gout[o];
                     });
}

Tensor global_pool(const Tensor& x, PoolMode mode) {
  require_rank(x, 4, "global_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<float> out(n * c);
  std::vector<std::uint32_t> arg;
  auto in = x.data();
  if (mode == PoolMode::Avg) {
    for (std::size_t p = 0; p < n * c; ++p) {
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += in[p * plane + i];
      out[p] = static_cast<float>(s / static_cast<double>(plane));
    }
  } else {
    arg.resize(n * c);
    auto* pattern = detail::activation_pattern_sink();
    for (std::size_t p = 0; p < n * c; ++p) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < plane; ++i)
        if (in[p * plane + i] > in[p * plane + best]) best = i;
      out[p] = in[p * plane + best];
      arg[p] = static_cast<std::uint32_t>(best);
      if (pattern) detail::fold_pattern(*pattern, best);
    }
  }
  return make_result({n, c, 1, 1}, std::move(out), {x},
                     [mode, plane, arg = std::move(arg)](std::span<const float> gout, const GradSinks& sinks) {
                       auto gx = sinks.at(0);
                       if (mode == PoolMode::Avg) {
                         const float inv = 1.0f / static_cast<float>(plane);
                         for (std::size_t p = 0; p < gout.size(); ++p)
                           for (std::size_t i = 0; i < plane; ++i) gx[p * plane + i] += gout[p] * inv;
                       } else {
                         for (std::size_t p = 0; p < gout.size(); ++p) gx[p * plane + arg[p]] += gout[p];
                       }
                     });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (float v : x.data()) s += v;
  return make_result({1}, {static_cast<float>(s)}, {x}, [](std::span<const float> gout, const GradSinks& sinks) {
    auto gx = sinks.at(0);
    for (auto& g : gx) g += gout[0];
  });
}

Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (float v : x.data()) s += v;
  const double count = static_cast<double>(x.numel());
  return make_result({1}, {static_cast<float>(s / count)}, {x},
                     [count](std::span<const float> gout, const GradSinks& sinks) {
                       auto gx = sinks.at(0);
                       const float g = static_cast<float>(gout[0] / count);
                       for (auto& v : gx) v += g;
                     });
}

Tensor softmax_temperature(const Tensor& z, float temperature) {
  require_rank(z, 2, "softmax_temperature");
  if (!(temperature > 0.0f)) throw ParameterError("softmax_temperature: T must be positive");
  const std::size_t n = z.dim(0), k = z.dim(1);
  auto in = z.data();
  std::vector<float> out(n * k);
  for (std::size_t r = 0; r < n; ++r) {
    const float* row = in.data() + r * k;
    const float mx = *std::max_element(row, row + k);
    double denom = 0.0;
    std::vector<double> e(k);
    for (std::size_t j = 0; j < k; ++j) {
      e[j] = std::exp(static_cast<double>(row[j] - mx) / temperature);
      denom += e[j];
    }
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = static_cast<float>(e[j] / denom);
  }
  std::vector<float> saved = out;
  return make_result(z.shape(), std::move(out), {z},
                     [q = std::move(saved), n, k, temperature](std::span<const float> gout, const GradSinks& sinks) {
                       auto gz = sinks.at(0);
                       for (std::size_t r = 0; r < n; ++r) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < k; ++j) dot += static_cast<double>(gout[r * k + j]) * q[r * k + j];
                         for (std::size_t j = 0; j < k; ++j)
                           gz[r * k + j] += static_cast<float>(q[r * k + j] * (gout[r * k + j] - dot) / temperature);
                       }
                     });
}

}  // namespace mer
