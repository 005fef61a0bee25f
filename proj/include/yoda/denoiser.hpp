#pragma once

#include <cstddef>
#include <vector>

#include "yoda/schedule.hpp"
#include "yoda/volume.hpp"

namespace yoda {

/// 2.5D denoiser input: a slab of the latent plus one slab per conditioning
/// modality, all centred on the same slice along the same axis.
struct DenoiserInput {
  Slab latent;
  std::vector<Slab> conditions;
  std::size_t t = 0;
  Axis axis = Axis::axial;
};

void validate_input(const DenoiserInput& in);

/// Slab-in, slice-out predictor. Implementations must be safe to call
/// concurrently (predict is read-only on the model).
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual PredictionKind output_kind() const = 0;
  /// Slab width the model consumes (odd).
  virtual std::size_t slab_width() const = 0;
  /// Prediction for the centre slice; data has dims (1, rows, cols).
  virtual Prediction predict(const DenoiserInput& in, const NoiseSchedule& sch) const = 0;
};

/// E[X0 | x_t] for X0 ~ N(mu, s2) and x_t = sqrt(ab) X0 + sqrt(1 - ab) eps.
double gaussian_posterior_mean(double x_t, double mu, double s2, double alpha_bar);

/// Exact MMSE denoiser for a Gaussian conditional X0 | C ~ N(mu(C), s^2).
/// mu(C) is supplied as the per-voxel translation of the case's conditions.
class OracleGaussianDenoiser final : public Denoiser {
 public:
  OracleGaussianDenoiser(Volume mean, double prior_var, PredictionKind kind = PredictionKind::v,
                         std::size_t slab_width = 1);

  PredictionKind output_kind() const override { return kind_; }
  std::size_t slab_width() const override { return slab_width_; }
  Prediction predict(const DenoiserInput& in, const NoiseSchedule& sch) const override;

  const Volume& mean() const noexcept { return mean_; }
  double prior_var() const noexcept { return prior_var_; }

 private:
  Volume mean_;
  double prior_var_;
  PredictionKind kind_;
  std::size_t slab_width_;
};

}  // namespace yoda
