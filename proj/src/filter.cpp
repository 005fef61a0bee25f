#include "yoda/filter.hpp"

#include <algorithm>
#include <cmath>

namespace yoda {

std::vector<double> gaussian_kernel(double sigma, int radius) {
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

namespace {

// Filter along one axis. stride/len describe the axis, `lines` enumerates the
// start offsets of every line along it.
void filter_axis(const std::vector<double>& in, std::vector<double>& out, std::size_t len, std::size_t stride,
                 const std::vector<std::size_t>& starts, const std::vector<double>& k, Boundary boundary) {
  const int radius = static_cast<int>(k.size() / 2);
  const long n = static_cast<long>(len);
  for (std::size_t start : starts) {
    for (long i = 0; i < n; ++i) {
      double acc = 0.0;
      double wsum = 0.0;
      for (int j = -radius; j <= radius; ++j) {
        long p = i + j;
        if (p < 0 || p >= n) {
          if (boundary == Boundary::renormalize) continue;
          p = std::clamp(p, 0L, n - 1);
        }
        acc += k[j + radius] * in[start + static_cast<std::size_t>(p) * stride];
        wsum += k[j + radius];
      }
      out[start + static_cast<std::size_t>(i) * stride] = boundary == Boundary::renormalize ? acc / wsum : acc;
    }
  }
}

}  // namespace

std::vector<double> gaussian_filter(std::span<const double> data, const Dims& dims, double sigma, int radius,
                                    Boundary boundary) {
  const auto k = gaussian_kernel(sigma, radius);
  std::vector<double> a(data.begin(), data.end());
  std::vector<double> b(a.size());

  std::vector<std::size_t> starts;
  // x lines
  starts.clear();
  for (std::size_t z = 0; z < dims.d; ++z)
    for (std::size_t y = 0; y < dims.h; ++y) starts.push_back((z * dims.h + y) * dims.w);
  filter_axis(a, b, dims.w, 1, starts, k, boundary);
  // y lines
  starts.clear();
  for (std::size_t z = 0; z < dims.d; ++z)
    for (std::size_t x = 0; x < dims.w; ++x) starts.push_back(z * dims.h * dims.w + x);
  filter_axis(b, a, dims.h, dims.w, starts, k, boundary);
  // z lines
  starts.clear();
  for (std::size_t y = 0; y < dims.h; ++y)
    for (std::size_t x = 0; x < dims.w; ++x) starts.push_back(y * dims.w + x);
  filter_axis(a, b, dims.d, dims.h * dims.w, starts, k, boundary);
  return b;
}

Volume gaussian_filter(const Volume& v, double sigma, int radius, Boundary boundary) {
  std::vector<double> in(v.data().begin(), v.data().end());
  const auto out = gaussian_filter(in, v.dims(), sigma, radius, boundary);
  Volume result(v.dims(), v.spacing());
  for (std::size_t i = 0; i < out.size(); ++i) result[i] = static_cast<float>(out[i]);
  return result;
}

}  // namespace yoda
