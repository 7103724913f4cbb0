#include "mer/flow.hpp"

#include <algorithm>
#include <vector>

#include "mer/error.hpp"

namespace mer {

Tensor horn_schunck_flow(const Tensor& frame_a, const Tensor& frame_b, float lambda_smooth, int iterations) {
  if (iterations < 1) throw ParameterError("horn_schunck_flow: iterations must be >= 1");
  if (!(lambda_smooth > 0.0f)) throw ParameterError("horn_schunck_flow: lambda must be positive");
  if (frame_a.shape() != frame_b.shape())
    throw DimensionError("horn_schunck_flow: frames differ " + shape_str(frame_a.shape()) + " vs " +
                         shape_str(frame_b.shape()));
  if (frame_a.rank() != 3 || frame_a.dim(0) != 1)
    throw DimensionError("horn_schunck_flow: expected [1,H,W], got " + shape_str(frame_a.shape()));

  const long h = static_cast<long>(frame_a.dim(1)), w = static_cast<long>(frame_a.dim(2));
  const auto n = static_cast<std::size_t>(h * w);
  auto a = frame_a.data();
  auto b = frame_b.data();
  auto at = [&](long y, long x) {
    y = std::clamp(y, 0L, h - 1);
    x = std::clamp(x, 0L, w - 1);
    return static_cast<std::size_t>(y * w + x);
  };

  std::vector<double> ix(n), iy(n), it(n), denom(n);
  const double lam2 = static_cast<double>(lambda_smooth) * lambda_smooth;
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      auto mean = [&](std::size_t i) { return 0.5 * (static_cast<double>(a[i]) + b[i]); };
      const std::size_t i = at(y, x);
      ix[i] = 0.5 * (mean(at(y, x + 1)) - mean(at(y, x - 1)));
      iy[i] = 0.5 * (mean(at(y + 1, x)) - mean(at(y - 1, x)));
      it[i] = static_cast<double>(b[i]) - a[i];
      denom[i] = lam2 + ix[i] * ix[i] + iy[i] * iy[i];
    }

  std::vector<double> u(n, 0.0), v(n, 0.0), un(n), vn(n);
  for (int k = 0; k < iterations; ++k) {
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        auto avg = [&](const std::vector<double>& f) {
          return (f[at(y - 1, x)] + f[at(y + 1, x)] + f[at(y, x - 1)] + f[at(y, x + 1)]) / 6.0 +
                 (f[at(y - 1, x - 1)] + f[at(y - 1, x + 1)] + f[at(y + 1, x - 1)] + f[at(y + 1, x + 1)]) / 12.0;
        };
        const std::size_t i = at(y, x);
        const double ub = avg(u), vb = avg(v);
        const double c = (ix[i] * ub + iy[i] * vb + it[i]) / denom[i];
        un[i] = ub - ix[i] * c;
        vn[i] = vb - iy[i] * c;
      }
    u.swap(un);
    v.swap(vn);
  }

  std::vector<float> out(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<float>(u[i]);
    out[n + i] = static_cast<float>(v[i]);
  }
  return Tensor({2, frame_a.dim(1), frame_a.dim(2)}, std::move(out));
}

}  // namespace mer
