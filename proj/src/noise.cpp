#include "yoda/noise.hpp"

#include <cmath>

#include "yoda/error.hpp"
#include "yoda/filter.hpp"

namespace yoda {

namespace {

void check_params(const NoiseParams& p) {
  if (!(p.sigma >= 0.0F) || !std::isfinite(p.sigma)) {
    throw Error(ErrorCode::InvalidParam, "noise sigma must be >= 0");
  }
  if (p.relative && p.sigma > 1.0F) throw Error(ErrorCode::InvalidParam, "relative sigma must lie in [0, 1]");
}

}  // namespace

float resolve_sigma(const NoiseParams& p, const Volume& reference) {
  check_params(p);
  if (!p.relative) return p.sigma;
  return p.sigma * (reference.max() - reference.min());
}

Volume gaussian_field(const Dims& dims, Rng& rng, Spacing spacing) {
  Volume out(dims, spacing);
  for (float& v : out.data()) v = static_cast<float>(rng.normal());
  return out;
}

Volume add_rician(const Volume& x_clean, const NoiseParams& p) {
  const double sigma = resolve_sigma(p, x_clean);
  if (sigma == 0.0) return x_clean;
  Rng rng(p.seed);
  Volume out(x_clean.dims(), x_clean.spacing());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double re = x_clean[i] + sigma * rng.normal();
    const double im = sigma * rng.normal();
    out[i] = static_cast<float>(std::hypot(re, im));
  }
  return out;
}

Volume add_gaussian(const Volume& x_clean, const NoiseParams& p) {
  const double sigma = resolve_sigma(p, x_clean);
  if (sigma == 0.0) return x_clean;
  Rng rng(p.seed);
  Volume out(x_clean.dims(), x_clean.spacing());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(x_clean[i] + sigma * rng.normal());
  return out;
}

Volume add_noise(const Volume& x_clean, const NoiseParams& p) {
  return p.kind == NoiseKind::rician ? add_rician(x_clean, p) : add_gaussian(x_clean, p);
}

namespace {

void check_stack(std::span<const Volume> volumes) {
  if (volumes.empty()) throw Error(ErrorCode::EmptyInput, "averaging needs at least one volume");
  for (const auto& v : volumes) require_same_dims(volumes.front().dims(), v.dims(), "averaging");
}

}  // namespace

Volume rms_average(std::span<const Volume> volumes) {
  check_stack(volumes);
  const std::size_t n = volumes.front().size();
  std::vector<double> acc(n, 0.0);
  for (const auto& v : volumes) {
    for (std::size_t i = 0; i < n; ++i) acc[i] += static_cast<double>(v[i]) * v[i];
  }
  Volume out(volumes.front().dims(), volumes.front().spacing());
  const double inv = 1.0 / static_cast<double>(volumes.size());
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(std::sqrt(acc[i] * inv));
  return out;
}

Volume mean_average(std::span<const Volume> volumes) {
  check_stack(volumes);
  const std::size_t n = volumes.front().size();
  std::vector<double> acc(n, 0.0);
  for (const auto& v : volumes) {
    for (std::size_t i = 0; i < n; ++i) acc[i] += v[i];
  }
  Volume out(volumes.front().dims(), volumes.front().spacing());
  const double inv = 1.0 / static_cast<double>(volumes.size());
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(acc[i] * inv);
  return out;
}

Mask erode6(const Mask& m) {
  const Dims& d = m.dims();
  Mask out(d);
  for (std::size_t z = 0; z < d.d; ++z) {
    for (std::size_t y = 0; y < d.h; ++y) {
      for (std::size_t x = 0; x < d.w; ++x) {
        const std::size_t i = (z * d.h + y) * d.w + x;
        if (!m[i]) continue;
        const bool interior = z > 0 && z + 1 < d.d && y > 0 && y + 1 < d.h && x > 0 && x + 1 < d.w;
        if (!interior) continue;
        const std::size_t plane = d.h * d.w;
        const bool keep = m[i - 1] && m[i + 1] && m[i - d.w] && m[i + d.w] && m[i - plane] && m[i + plane];
        out.set(i, keep);
      }
    }
  }
  return out;
}

float estimate_wm_noise(const Volume& x, const Mask& wm_mask) {
  require_same_dims(x.dims(), wm_mask.dims(), "estimate_wm_noise");
  const Mask core = erode6(wm_mask);
  if (core.empty()) throw Error(ErrorCode::EmptyMask, "WM mask is empty after boundary erosion");
  // Whole-raster blur; residuals are only read inside the eroded core.
  const Volume smooth = gaussian_filter(x, 1.1, 2, Boundary::replicate);
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!core[i]) continue;
    const double r = static_cast<double>(x[i]) - smooth[i];
    acc += r * r;
    ++n;
  }
  return static_cast<float>(std::sqrt(acc / static_cast<double>(n)));
}

float expected_mse(float sigma, float sigma_hat, float clean_mse) {
  return clean_mse + sigma * sigma + sigma_hat * sigma_hat;
}

}  // namespace yoda
