#include "yoda/denoiser.hpp"

#include <cmath>

#include "yoda/error.hpp"

namespace yoda {

void validate_input(const DenoiserInput& in) {
  const auto& ref = in.latent;
  for (const auto& c : in.conditions) {
    if (c.axis != ref.axis || c.center_index != ref.center_index || c.n_slices != ref.n_slices ||
        !(c.data.dims() == ref.data.dims())) {
      throw Error(ErrorCode::DimMismatch, "condition slab does not match latent slab");
    }
  }
  if (ref.axis != in.axis) throw Error(ErrorCode::DimMismatch, "slab axis differs from input axis");
}

double gaussian_posterior_mean(double x_t, double mu, double s2, double alpha_bar) {
  const double denom = alpha_bar * s2 + (1.0 - alpha_bar);
  if (denom <= 0.0) return x_t;
  return (std::sqrt(alpha_bar) * s2 * x_t + (1.0 - alpha_bar) * mu) / denom;
}

OracleGaussianDenoiser::OracleGaussianDenoiser(Volume mean, double prior_var, PredictionKind kind,
                                               std::size_t slab_width)
    : mean_(std::move(mean)), prior_var_(prior_var), kind_(kind), slab_width_(slab_width) {
  if (!(prior_var >= 0.0)) throw Error(ErrorCode::InvalidParam, "oracle prior variance must be >= 0");
  if (slab_width % 2 == 0) throw Error(ErrorCode::InvalidSlabWidth, "oracle slab width must be odd");
}

Prediction OracleGaussianDenoiser::predict(const DenoiserInput& in, const NoiseSchedule& sch) const {
  validate_input(in);
  const auto center = in.latent.center();
  const Slab mu = extract_slab(mean_, in.axis, in.latent.center_index, 1);
  const auto mu_plane = mu.center();
  if (mu_plane.size() != center.size()) throw Error(ErrorCode::DimMismatch, "oracle mean does not match latent");

  const double ab = sch.alpha_bar(in.t);
  const Dims plane_dims = mu.data.dims();
  Volume x_t(plane_dims, std::vector<float>(center.begin(), center.end()));
  Volume x0(plane_dims);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    x0[i] = static_cast<float>(gaussian_posterior_mean(center[i], mu_plane[i], prior_var_, ab));
  }
  return from_x0(x_t, x0, kind_, in.t, sch);
}

}  // namespace yoda
