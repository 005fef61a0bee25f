#include "yoda/schedule.hpp"

#include <cmath>
#include <numbers>

#include "yoda/error.hpp"

namespace yoda {

const char* to_string(PredictionKind kind) {
  switch (kind) {
    case PredictionKind::v: return "v";
    case PredictionKind::epsilon: return "epsilon";
    case PredictionKind::x0: return "x0";
  }
  return "v";
}

PredictionKind prediction_kind_from_string(const std::string& name) {
  if (name == "v") return PredictionKind::v;
  if (name == "epsilon" || name == "eps") return PredictionKind::epsilon;
  if (name == "x0") return PredictionKind::x0;
  throw Error(ErrorCode::UnsupportedKind, "unknown prediction kind '" + name + "'");
}

NoiseSchedule::NoiseSchedule(ScheduleKind kind, std::vector<double> beta, double p0, double p1)
    : kind_(kind), beta_(std::move(beta)), param0_(p0), param1_(p1) {
  alpha_bar_.resize(beta_.size());
  double prod = 1.0;
  for (std::size_t t = 0; t < beta_.size(); ++t) {
    prod *= 1.0 - beta_[t];
    alpha_bar_[t] = prod;
  }
}

NoiseSchedule NoiseSchedule::linear(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 1 || !(beta_start > 0.0) || beta_start > beta_end || !(beta_end < 1.0)) {
    throw Error(ErrorCode::InvalidParam, "linear schedule needs T >= 1 and 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> beta(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(steps - 1);
    beta[t] = beta_start + frac * (beta_end - beta_start);
  }
  return NoiseSchedule(ScheduleKind::linear, std::move(beta), beta_start, beta_end);
}

NoiseSchedule NoiseSchedule::cosine(std::size_t steps, double s) {
  if (steps < 1 || !(s > 0.0)) throw Error(ErrorCode::InvalidParam, "cosine schedule needs T >= 1 and s > 0");
  auto f = [&](double t) {
    const double c = std::cos((t / static_cast<double>(steps) + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  constexpr double kMaxBeta = 0.999;
  std::vector<double> beta(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    beta[t] = std::min(1.0 - f(static_cast<double>(t + 1)) / f(static_cast<double>(t)), kMaxBeta);
  }
  return NoiseSchedule(ScheduleKind::cosine, std::move(beta), s, 0.0);
}

nlohmann::json NoiseSchedule::to_json() const {
  if (kind_ == ScheduleKind::linear) {
    return {{"kind", "linear"}, {"T", steps()}, {"beta_start", param0_}, {"beta_end", param1_}};
  }
  return {{"kind", "cosine"}, {"T", steps()}, {"s", param0_}};
}

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
  const std::string kind = j.value("kind", "linear");
  const std::size_t steps = j.value("T", std::size_t{1000});
  if (kind == "linear") return linear(steps, j.value("beta_start", 1e-4), j.value("beta_end", 0.02));
  if (kind == "cosine") return cosine(steps, j.value("s", 0.008));
  throw Error(ErrorCode::InvalidParam, "unknown schedule kind '" + kind + "'");
}

namespace {

void check_t(std::size_t t, const NoiseSchedule& sch) {
  if (t >= sch.steps()) throw Error(ErrorCode::IndexOutOfRange, "time step outside schedule");
}

// a * x + b * y, evaluated in double.
Volume combine(double a, const Volume& x, double b, const Volume& y) {
  require_same_dims(x.dims(), y.dims(), "schedule algebra");
  Volume out(x.dims(), x.spacing());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(a * x[i] + b * y[i]);
  return out;
}

}  // namespace

Volume forward_diffuse(const Volume& x0, std::size_t t, const Volume& eps, const NoiseSchedule& sch) {
  check_t(t, sch);
  const double ab = sch.alpha_bar(t);
  return combine(std::sqrt(ab), x0, std::sqrt(1.0 - ab), eps);
}

Volume v_target(const Volume& x0, const Volume& eps, std::size_t t, const NoiseSchedule& sch) {
  check_t(t, sch);
  const double ab = sch.alpha_bar(t);
  return combine(std::sqrt(ab), eps, -std::sqrt(1.0 - ab), x0);
}

Volume to_x0(const Volume& x_t, const Prediction& pred, std::size_t t, const NoiseSchedule& sch) {
  check_t(t, sch);
  const double ab = sch.alpha_bar(t);
  switch (pred.kind) {
    case PredictionKind::v: return combine(std::sqrt(ab), x_t, -std::sqrt(1.0 - ab), pred.data);
    case PredictionKind::epsilon: {
      if (ab < 1e-8) {
        throw Error(ErrorCode::NumericallySingular, "epsilon prediction at alpha_bar " + std::to_string(ab));
      }
      const double inv = 1.0 / std::sqrt(ab);
      return combine(inv, x_t, -std::sqrt(1.0 - ab) * inv, pred.data);
    }
    case PredictionKind::x0: require_same_dims(x_t.dims(), pred.data.dims(), "to_x0"); return pred.data;
  }
  throw Error(ErrorCode::UnsupportedKind, "to_x0");
}

Volume to_epsilon(const Volume& x_t, const Volume& x0_hat, std::size_t t, const NoiseSchedule& sch) {
  check_t(t, sch);
  const double ab = sch.alpha_bar(t);
  if (1.0 - ab < 1e-12) return Volume(x_t.dims(), x_t.spacing());
  const double inv = 1.0 / std::sqrt(1.0 - ab);
  return combine(inv, x_t, -std::sqrt(ab) * inv, x0_hat);
}

Prediction from_x0(const Volume& x_t, const Volume& x0_hat, PredictionKind kind, std::size_t t,
                   const NoiseSchedule& sch) {
  check_t(t, sch);
  const double ab = sch.alpha_bar(t);
  switch (kind) {
    case PredictionKind::x0: return {kind, x0_hat};
    case PredictionKind::epsilon: return {kind, to_epsilon(x_t, x0_hat, t, sch)};
    case PredictionKind::v: {
      // x0 = sqrt(ab) x_t - sqrt(1-ab) v  =>  v = (sqrt(ab) x_t - x0) / sqrt(1-ab)
      if (1.0 - ab < 1e-12) return {kind, Volume(x_t.dims(), x_t.spacing())};
      const double inv = 1.0 / std::sqrt(1.0 - ab);
      return {kind, combine(std::sqrt(ab) * inv, x_t, -inv, x0_hat)};
    }
  }
  throw Error(ErrorCode::UnsupportedKind, "from_x0");
}

Volume renoise(const Volume& x0_hat, std::size_t t_next, const Volume& eps, const NoiseSchedule& sch) {
  return forward_diffuse(x0_hat, t_next, eps, sch);
}

}  // namespace yoda
