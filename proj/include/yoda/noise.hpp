#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "yoda/rng.hpp"
#include "yoda/volume.hpp"

namespace yoda {

enum class NoiseKind { rician, gaussian };

struct NoiseParams {
  float sigma = 0.0F;
  NoiseKind kind = NoiseKind::rician;
  std::uint64_t seed = 0;
  /// When set, `sigma` is a fraction of (max - min) of the reference volume.
  bool relative = false;
};

/// Absolute noise std for `p` against `reference`.
float resolve_sigma(const NoiseParams& p, const Volume& reference);

/// Standard normal field with the given dims drawn from `rng`.
Volume gaussian_field(const Dims& dims, Rng& rng, Spacing spacing = {});

/// |x' + n_re + i n_im| with n_re, n_im ~ N(0, sigma^2) per voxel.
Volume add_rician(const Volume& x_clean, const NoiseParams& p);
/// x' + n with n ~ N(0, sigma^2).
Volume add_gaussian(const Volume& x_clean, const NoiseParams& p);
/// Dispatches on p.kind.
Volume add_noise(const Volume& x_clean, const NoiseParams& p);

/// Per-voxel sqrt(mean of squares).
Volume rms_average(std::span<const Volume> volumes);
Volume mean_average(std::span<const Volume> volumes);

/// 6-neighbourhood erosion; out-of-raster neighbours count as outside.
Mask erode6(const Mask& m);

/// RMS of x minus its 5-tap Gaussian blur (sigma 1.1) over the eroded WM mask.
float estimate_wm_noise(const Volume& x, const Mask& wm_mask);

/// Expected MSE between two independently noised images of clean MSE `clean_mse`.
float expected_mse(float sigma, float sigma_hat, float clean_mse);

}  // namespace yoda
