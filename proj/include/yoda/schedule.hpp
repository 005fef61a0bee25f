#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "yoda/volume.hpp"

namespace yoda {

enum class ScheduleKind { linear, cosine };
enum class PredictionKind { v, epsilon, x0 };

const char* to_string(PredictionKind kind);
PredictionKind prediction_kind_from_string(const std::string& name);

/// Diffusion noise schedule. Time steps are 0-based: t in [0, T) corresponds
/// to step t + 1 of the usual 1-based notation.
class NoiseSchedule {
 public:
  static NoiseSchedule linear(std::size_t steps, double beta_start = 1e-4, double beta_end = 0.02);
  static NoiseSchedule cosine(std::size_t steps, double s = 0.008);

  ScheduleKind kind() const noexcept { return kind_; }
  std::size_t steps() const noexcept { return beta_.size(); }
  double beta(std::size_t t) const { return beta_.at(t); }
  double alpha_bar(std::size_t t) const { return alpha_bar_.at(t); }
  const std::vector<double>& betas() const noexcept { return beta_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }

  /// Kind and parameters only; tables are rebuilt on load.
  nlohmann::json to_json() const;
  static NoiseSchedule from_json(const nlohmann::json& j);

 private:
  NoiseSchedule(ScheduleKind kind, std::vector<double> beta, double p0, double p1);

  ScheduleKind kind_;
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
  double param0_;
  double param1_;
};

struct Prediction {
  PredictionKind kind = PredictionKind::v;
  Volume data;
};

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Volume forward_diffuse(const Volume& x0, std::size_t t, const Volume& eps, const NoiseSchedule& sch);
/// sqrt(abar_t) eps - sqrt(1 - abar_t) x0
Volume v_target(const Volume& x0, const Volume& eps, std::size_t t, const NoiseSchedule& sch);
/// Clean-image estimate implied by a prediction of any kind at latent x_t.
Volume to_x0(const Volume& x_t, const Prediction& pred, std::size_t t, const NoiseSchedule& sch);
/// Noise implied by an x0 estimate at latent x_t.
Volume to_epsilon(const Volume& x_t, const Volume& x0_hat, std::size_t t, const NoiseSchedule& sch);
/// Express the clean estimate x0_hat at latent x_t as a prediction of `kind`.
Prediction from_x0(const Volume& x_t, const Volume& x0_hat, PredictionKind kind, std::size_t t,
                   const NoiseSchedule& sch);
/// Latent for the next backward step.
Volume renoise(const Volume& x0_hat, std::size_t t_next, const Volume& eps, const NoiseSchedule& sch);

}  // namespace yoda
