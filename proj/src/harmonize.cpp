#include "yoda/harmonize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "yoda/error.hpp"

namespace yoda {

const char* to_string(GammaVariant v) {
  switch (v) {
    case GammaVariant::generalized: return "generalized";
    case GammaVariant::simple_gamma: return "simple_gamma";
    case GammaVariant::linear: return "linear";
    case GammaVariant::none: return "none";
  }
  return "generalized";
}

GammaVariant gamma_variant_from_string(const std::string& s) {
  if (s == "generalized") return GammaVariant::generalized;
  if (s == "simple_gamma" || s == "simple") return GammaVariant::simple_gamma;
  if (s == "linear") return GammaVariant::linear;
  if (s == "none") return GammaVariant::none;
  throw Error(ErrorCode::InvalidParam, "unknown gamma variant '" + s + "'");
}

namespace {

void check_params(const GammaParams& p) {
  if (!(1.0 + p.a > 0.0) || !(1.0 + p.gamma > 0.0) || !std::isfinite(p.c)) {
    throw Error(ErrorCode::InvalidParam, "gamma parameters need 1 + a > 0 and 1 + gamma > 0");
  }
}

bool valid(std::span<const GammaParams> theta) {
  return std::all_of(theta.begin(), theta.end(), [](const GammaParams& p) {
    return 1.0 + p.a > 0.0 && 1.0 + p.gamma > 0.0 && std::isfinite(p.a) && std::isfinite(p.gamma) &&
           std::isfinite(p.c);
  });
}

struct FreeMask {
  bool a = true;
  bool gamma = true;
  bool c = true;
};

FreeMask free_params(GammaVariant v) {
  switch (v) {
    case GammaVariant::generalized: return {true, true, true};
    case GammaVariant::simple_gamma: return {false, true, false};
    case GammaVariant::linear: return {true, false, true};
    case GammaVariant::none: return {false, false, false};
  }
  return {};
}

}  // namespace

std::vector<float> gamma_apply(std::span<const float> slice, const GammaParams& p, double eps_pos) {
  check_params(p);
  std::vector<float> out(slice.size());
  for (std::size_t i = 0; i < slice.size(); ++i) {
    const double x = std::max(static_cast<double>(slice[i]), eps_pos);
    out[i] = static_cast<float>((1.0 + p.a) * std::pow(x, 1.0 + p.gamma) + p.c);
  }
  return out;
}

HarmonizeObjective::HarmonizeObjective(std::vector<std::vector<double>> slices,
                                       std::vector<std::vector<std::uint8_t>> weights, double penalty,
                                       double eps_pos)
    : weights_(std::move(weights)), penalty_(penalty) {
  if (slices.size() < 2) throw Error(ErrorCode::InvalidParam, "harmonization needs at least two slices");
  if (weights_.size() != slices.size()) throw Error(ErrorCode::DimMismatch, "one weight plane per slice");
  if (!(eps_pos > 0.0)) throw Error(ErrorCode::InvalidParam, "eps_pos must be > 0");
  if (penalty < 0.0) throw Error(ErrorCode::InvalidParam, "penalty must be >= 0");
  const std::size_t plane = slices.front().size();
  log_x_.resize(slices.size());
  frozen_.resize(slices.size());
  for (std::size_t j = 0; j < slices.size(); ++j) {
    if (slices[j].size() != plane || weights_[j].size() != plane) {
      throw Error(ErrorCode::DimMismatch, "slices must share a plane size");
    }
    log_x_[j].resize(plane);
    for (std::size_t p = 0; p < plane; ++p) log_x_[j][p] = std::log(std::max(slices[j][p], eps_pos));
    frozen_[j] = std::none_of(weights_[j].begin(), weights_[j].end(), [](std::uint8_t w) { return w != 0; });
  }
  pair_count_.resize(slices.size() - 1);
  for (std::size_t j = 0; j + 1 < slices.size(); ++j) {
    std::size_t n = 0;
    for (std::size_t p = 0; p < plane; ++p) n += (weights_[j][p] != 0 && weights_[j + 1][p] != 0) ? 1 : 0;
    pair_count_[j] = static_cast<double>(n);
  }
}

double HarmonizeObjective::value(std::span<const GammaParams> theta) const {
  return value_and_gradient(theta, {});
}

double HarmonizeObjective::value_and_gradient(std::span<const GammaParams> theta, std::span<GammaParams> grad) const {
  const std::size_t n = n_slices();
  if (theta.size() != n) throw Error(ErrorCode::DimMismatch, "one parameter set per slice");
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != n) throw Error(ErrorCode::DimMismatch, "one gradient slot per slice");
  const std::size_t plane = log_x_.front().size();

  // powered[j][p] = x^(1 + gamma_j); mapped = (1 + a) powered + c
  std::vector<std::vector<double>> powered(n, std::vector<double>(plane));
  std::vector<std::vector<double>> mapped(n, std::vector<double>(plane));
  for (std::size_t j = 0; j < n; ++j) {
    const double e = 1.0 + theta[j].gamma;
    const double g = 1.0 + theta[j].a;
    for (std::size_t p = 0; p < plane; ++p) {
      powered[j][p] = std::exp(e * log_x_[j][p]);
      mapped[j][p] = g * powered[j][p] + theta[j].c;
    }
  }

  std::vector<std::vector<double>> d_mapped;
  if (want_grad) d_mapped.assign(n, std::vector<double>(plane, 0.0));
  const double pair_norm = 1.0 / static_cast<double>(n - 1);
  double data = 0.0;
  for (std::size_t j = 0; j + 1 < n; ++j) {
    if (pair_count_[j] == 0.0) continue;
    const double scale = pair_norm / pair_count_[j];
    double sum = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      if (weights_[j][p] == 0 || weights_[j + 1][p] == 0) continue;
      const double d = mapped[j][p] - mapped[j + 1][p];
      sum += d * d;
      if (want_grad) {
        d_mapped[j][p] += 2.0 * scale * d;
        d_mapped[j + 1][p] -= 2.0 * scale * d;
      }
    }
    data += scale * sum;
  }

  double reg = 0.0;
  for (const auto& t : theta) reg += t.a * t.a + t.gamma * t.gamma + t.c * t.c;

  if (want_grad) {
    for (std::size_t j = 0; j < n; ++j) {
      GammaParams g{2.0 * penalty_ * theta[j].a, 2.0 * penalty_ * theta[j].gamma, 2.0 * penalty_ * theta[j].c};
      const double gain = 1.0 + theta[j].a;
      for (std::size_t p = 0; p < plane; ++p) {
        const double dm = d_mapped[j][p];
        if (dm == 0.0) continue;
        g.a += dm * powered[j][p];
        g.gamma += dm * gain * powered[j][p] * log_x_[j][p];
        g.c += dm;
      }
      grad[j] = g;
    }
  }
  return data + penalty_ * reg;
}

namespace {

struct Normalised {
  std::vector<std::vector<double>> slices;
  std::vector<std::vector<std::uint8_t>> weights;
  double lo = 0.0;
  double hi = 1.0;
};

Normalised normalise(const Volume& oriented, const std::optional<Mask>& fg_oriented) {
  Normalised n;
  const Dims& d = oriented.dims();
  const std::size_t plane = d.h * d.w;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < oriented.size(); ++i) {
    if (fg_oriented && !(*fg_oriented)[i]) continue;
    lo = std::min(lo, static_cast<double>(oriented[i]));
    hi = std::max(hi, static_cast<double>(oriented[i]));
  }
  if (!std::isfinite(lo)) throw Error(ErrorCode::EmptyMask, "harmonization foreground is empty");
  n.lo = lo;
  n.hi = hi;
  const double span = hi > lo ? hi - lo : 1.0;
  n.slices.assign(d.d, std::vector<double>(plane));
  n.weights.assign(d.d, std::vector<std::uint8_t>(plane, 1));
  for (std::size_t j = 0; j < d.d; ++j) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t i = j * plane + p;
      n.slices[j][p] = (oriented[i] - lo) / span;
      if (fg_oriented) n.weights[j][p] = (*fg_oriented)[i] ? 1 : 0;
    }
  }
  return n;
}

}  // namespace

HarmonizeResult harmonize_slices(const Volume& v, Axis axis, const HarmonizeConfig& cfg, GammaVariant variant) {
  if (!(cfg.learning_rate > 0.0)) throw Error(ErrorCode::InvalidParam, "learning rate must be > 0");
  if (cfg.foreground) require_same_dims(v.dims(), cfg.foreground->dims(), "harmonize foreground");
  const std::size_t n_slices = v.dims().along(axis);
  if (n_slices < 2) throw Error(ErrorCode::InvalidParam, "harmonization needs at least two slices");

  HarmonizeResult r;
  r.params.assign(n_slices, GammaParams{});
  if (variant == GammaVariant::none) {
    r.corrected = v;
    return r;
  }

  const Volume oriented = reorient(v, axis);
  std::optional<Mask> fg;
  if (cfg.foreground) fg = Mask::from_volume(reorient(cfg.foreground->to_volume(), axis));
  Normalised norm = normalise(oriented, fg);
  const HarmonizeObjective objective(norm.slices, norm.weights, cfg.penalty, cfg.eps_pos);
  const FreeMask free = free_params(variant);

  std::vector<GammaParams> theta(n_slices), grad(n_slices), trial(n_slices);
  double current = objective.value_and_gradient(theta, grad);
  r.objective.push_back(current);
  double lr = cfg.learning_rate;
  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    bool accepted = false;
    while (lr > 1e-12) {
      for (std::size_t j = 0; j < n_slices; ++j) {
        trial[j] = theta[j];
        if (objective.frozen(j)) continue;
        if (free.a) trial[j].a -= lr * grad[j].a;
        if (free.gamma) trial[j].gamma -= lr * grad[j].gamma;
        if (free.c) trial[j].c -= lr * grad[j].c;
      }
      if (valid(trial)) {
        const double next = objective.value(trial);
        if (next <= current) {
          theta.swap(trial);
          current = objective.value_and_gradient(theta, grad);
          accepted = true;
          break;
        }
      }
      lr *= 0.5;
      ++r.rejected_steps;
    }
    if (!accepted) break;
    r.objective.push_back(current);
  }

  Volume out = oriented;
  const std::size_t plane = oriented.dims().h * oriented.dims().w;
  const double span = norm.hi > norm.lo ? norm.hi - norm.lo : 1.0;
  for (std::size_t j = 0; j < n_slices; ++j) {
    const double e = 1.0 + theta[j].gamma;
    const double g = 1.0 + theta[j].a;
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t i = j * plane + p;
      if (fg && !(*fg)[i]) continue;
      const double x = std::max(norm.slices[j][p], cfg.eps_pos);
      out[i] = static_cast<float>(norm.lo + span * (g * std::pow(x, e) + theta[j].c));
    }
  }
  r.corrected = restore_orientation(out, axis);
  r.params = std::move(theta);
  return r;
}

Volume harmonize_variant(const Volume& v, Axis axis, const HarmonizeConfig& cfg, GammaVariant variant) {
  return harmonize_slices(v, axis, cfg, variant).corrected;
}

double adjacent_slice_mse(const Volume& v, Axis axis, const std::optional<Mask>& foreground) {
  if (foreground) require_same_dims(v.dims(), foreground->dims(), "adjacent_slice_mse");
  const Volume o = reorient(v, axis);
  std::optional<Mask> fg;
  if (foreground) fg = Mask::from_volume(reorient(foreground->to_volume(), axis));
  const std::size_t n = o.dims().d;
  const std::size_t plane = o.dims().h * o.dims().w;
  if (n < 2) return 0.0;
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t j = 0; j + 1 < n; ++j) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t a = j * plane + p;
      const std::size_t b = a + plane;
      if (fg && (!(*fg)[a] || !(*fg)[b])) continue;
      const double d = static_cast<double>(o[a]) - o[b];
      sum += d * d;
      ++count;
    }
    if (count == 0) continue;
    total += sum / static_cast<double>(count);
    ++pairs;
  }
  return pairs == 0 ? 0.0 : total / static_cast<double>(pairs);
}

void write_trace_csv(const HarmonizeResult& r, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  f.precision(17);
  f << "step,objective\n";
  for (std::size_t k = 0; k < r.objective.size(); ++k) f << k << ',' << r.objective[k] << '\n';
}

}  // namespace yoda
