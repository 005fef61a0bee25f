#include "yoda/sampler.hpp"

#include <algorithm>
#include <chrono>

#include "yoda/error.hpp"
#include "yoda/noise.hpp"
#include "yoda/parallel.hpp"
#include "yoda/rng.hpp"

namespace yoda {

const char* to_string(SampleMode m) {
  switch (m) {
    case SampleMode::diffusion: return "diffusion";
    case SampleMode::regression: return "regression";
    case SampleMode::expa: return "expa";
  }
  return "diffusion";
}

const char* to_string(ViewPolicy p) {
  switch (p) {
    case ViewPolicy::axial_only: return "axial_only";
    case ViewPolicy::orthogonal_cycle: return "orthogonal_cycle";
    case ViewPolicy::orthogonal_random: return "orthogonal_random";
    case ViewPolicy::regression_three_view: return "regression_three_view";
  }
  return "axial_only";
}

const char* to_string(Combiner c) { return c == Combiner::rms ? "rms" : "mean"; }

SampleMode sample_mode_from_string(const std::string& s) {
  if (s == "diffusion") return SampleMode::diffusion;
  if (s == "regression") return SampleMode::regression;
  if (s == "expa") return SampleMode::expa;
  throw Error(ErrorCode::InvalidParam, "unknown sampling mode '" + s + "'");
}

ViewPolicy view_policy_from_string(const std::string& s) {
  if (s == "axial_only") return ViewPolicy::axial_only;
  if (s == "orthogonal_cycle") return ViewPolicy::orthogonal_cycle;
  if (s == "orthogonal_random") return ViewPolicy::orthogonal_random;
  if (s == "regression_three_view") return ViewPolicy::regression_three_view;
  throw Error(ErrorCode::InvalidParam, "unknown view policy '" + s + "'");
}

Combiner combiner_from_string(const std::string& s) {
  if (s == "rms") return Combiner::rms;
  if (s == "mean") return Combiner::mean;
  throw Error(ErrorCode::InvalidParam, "unknown combiner '" + s + "'");
}

SamplerConfig SamplerConfig::diffusion_defaults(std::size_t steps) {
  SamplerConfig cfg;
  cfg.t_trunc = steps / 4;
  return cfg;
}

nlohmann::json to_json(const SamplerConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"T_trunc", c.t_trunc},
          {"n_ex", c.n_ex},
          {"view_policy", to_string(c.view_policy)},
          {"n_slices", c.n_slices},
          {"combiner", to_string(c.combiner)},
          {"view_combiner", to_string(c.view_combiner)},
          {"regression_latent", c.regression_latent == RegressionLatent::noise ? "noise" : "zeros"},
          {"seed", c.seed},
          {"keep_replicates", c.keep_replicates}};
}

SamplerConfig sampler_config_from_json(const nlohmann::json& j) {
  SamplerConfig c;
  if (j.contains("mode")) c.mode = sample_mode_from_string(j.at("mode").get<std::string>());
  c.t_trunc = j.value("T_trunc", c.t_trunc);
  c.n_ex = j.value("n_ex", c.n_ex);
  if (j.contains("view_policy")) c.view_policy = view_policy_from_string(j.at("view_policy").get<std::string>());
  c.n_slices = j.value("n_slices", c.n_slices);
  if (j.contains("combiner")) c.combiner = combiner_from_string(j.at("combiner").get<std::string>());
  if (j.contains("view_combiner")) c.view_combiner = combiner_from_string(j.at("view_combiner").get<std::string>());
  if (j.contains("regression_latent")) {
    const auto s = j.at("regression_latent").get<std::string>();
    if (s != "noise" && s != "zeros") throw Error(ErrorCode::InvalidParam, "regression_latent: noise|zeros");
    c.regression_latent = s == "noise" ? RegressionLatent::noise : RegressionLatent::zeros;
  }
  c.seed = j.value("seed", c.seed);
  c.keep_replicates = j.value("keep_replicates", c.keep_replicates);
  return c;
}

namespace {

void check_config(const SamplerConfig& cfg, std::size_t steps) {
  if (cfg.n_ex == 0) throw Error(ErrorCode::InvalidParam, "n_ex must be >= 1");
  if (cfg.mode != SampleMode::regression && cfg.t_trunc >= steps) throw Error(ErrorCode::InvalidParam, "T_trunc must be < T");
  if (cfg.n_slices % 2 == 0) throw Error(ErrorCode::InvalidSlabWidth, "n_slices must be odd");
}

void check_conditions(std::span<const Volume> conditions) {
  if (conditions.empty()) throw Error(ErrorCode::EmptyInput, "sampling needs at least one condition");
  for (const auto& c : conditions) require_same_dims(conditions.front().dims(), c.dims(), "conditions");
}

// Stream tags for the per-replicate noise draws.
constexpr std::uint64_t kPriorTag = 0x5052494FULL;
constexpr std::uint64_t kStepTag = 0x53544550ULL;

Volume prior_draw(const SamplerConfig& cfg, std::size_t replicate, const Dims& dims, Spacing spacing) {
  Rng rng(cfg.seed, {kPriorTag, replicate});
  return gaussian_field(dims, rng, spacing);
}

// Noise entering the latent at time t_next. Keyed by t so full and truncated
// runs with the same seed share the draws of the steps they have in common.
Volume step_draw(const SamplerConfig& cfg, std::size_t replicate, std::size_t t_next, const Dims& dims,
                 Spacing spacing) {
  Rng rng(cfg.seed, {kStepTag, replicate, t_next});
  return gaussian_field(dims, rng, spacing);
}

Volume run_trajectory(const Denoiser& den, std::span<const Volume> conditions, const SamplerConfig& cfg,
                      const NoiseSchedule& sch, std::size_t replicate, int workers) {
  const auto steps = step_sequence(sch.steps(), cfg.t_trunc);
  const auto axes = plan_views(cfg.view_policy == ViewPolicy::regression_three_view ? ViewPolicy::axial_only
                                                                                    : cfg.view_policy,
                               steps, derive_seed(cfg.seed, {replicate}));
  const Dims dims = conditions.front().dims();
  const Spacing spacing = conditions.front().spacing();
  Volume latent = prior_draw(cfg, replicate, dims, spacing);
  Volume x0;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    x0 = denoise_volume(den, latent, conditions, steps[k], axes[k], sch, workers);
    if (k + 1 < steps.size()) {
      const std::size_t t_next = steps[k + 1];
      latent = renoise(x0, t_next, step_draw(cfg, replicate, t_next, dims, spacing), sch);
    }
  }
  return x0;
}

Volume combine(std::span<const Volume> volumes, Combiner c) {
  return c == Combiner::rms ? rms_average(volumes) : mean_average(volumes);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::size_t nfe_count(const SamplerConfig& cfg, std::size_t /*steps*/, std::size_t n_views_regression) {
  if (cfg.mode == SampleMode::regression) return n_views_regression;
  return cfg.n_ex * (cfg.t_trunc + 1);
}

std::vector<std::size_t> step_sequence(std::size_t steps, std::size_t t_trunc) {
  if (steps == 0) throw Error(ErrorCode::InvalidParam, "schedule has no steps");
  if (t_trunc >= steps) throw Error(ErrorCode::InvalidParam, "T_trunc must be < T");
  std::vector<std::size_t> seq{steps - 1};
  for (std::size_t t = t_trunc; t > 0; --t) seq.push_back(t - 1);
  return seq;
}

std::vector<Axis> plan_views(ViewPolicy policy, std::span<const std::size_t> t_sequence, std::uint64_t seed) {
  static constexpr Axis kCycle[3] = {Axis::axial, Axis::coronal, Axis::sagittal};
  std::vector<Axis> plan;
  switch (policy) {
    case ViewPolicy::axial_only: plan.assign(t_sequence.size(), Axis::axial); break;
    case ViewPolicy::orthogonal_cycle:
      for (std::size_t p = 0; p < t_sequence.size(); ++p) plan.push_back(kCycle[p % 3]);
      break;
    case ViewPolicy::orthogonal_random:
      for (std::size_t p = 0; p < t_sequence.size(); ++p) plan.push_back(kCycle[Rng(seed, {p}).below(3)]);
      break;
    case ViewPolicy::regression_three_view: plan.assign(kCycle, kCycle + 3); break;
  }
  return plan;
}

Volume denoise_volume(const Denoiser& den, const Volume& latent, std::span<const Volume> conditions,
                      std::size_t t, Axis axis, const NoiseSchedule& sch, int workers) {
  for (const auto& c : conditions) require_same_dims(latent.dims(), c.dims(), "denoise_volume");
  const std::size_t depth = latent.dims().along(axis);
  const std::size_t width = den.slab_width();
  std::vector<Volume> planes(depth);
  parallel_for(depth, workers, [&](std::size_t i) {
    DenoiserInput in;
    in.axis = axis;
    in.t = t;
    in.latent = extract_slab(latent, axis, i, width);
    in.conditions.reserve(conditions.size());
    for (const auto& c : conditions) in.conditions.push_back(extract_slab(c, axis, i, in.latent.n_slices));
    Prediction pred = den.predict(in, sch);
    const auto center = in.latent.center();
    Volume x_t(pred.data.dims(), std::vector<float>(center.begin(), center.end()));
    planes[i] = to_x0(x_t, pred, t, sch);
  });
  Volume out(latent.dims(), latent.spacing());
  for (std::size_t i = 0; i < depth; ++i) insert_slice(out, axis, i, planes[i].data());
  return out;
}

SampleResult sample_diffusion(const Denoiser& den, std::span<const Volume> conditions, const SamplerConfig& cfg,
                              const NoiseSchedule& sch) {
  check_conditions(conditions);
  check_config(cfg, sch.steps());
  const auto t0 = std::chrono::steady_clock::now();
  SampleResult r;
  r.output = run_trajectory(den, conditions, cfg, sch, 0, cfg.workers);
  SamplerConfig one = cfg;
  one.n_ex = 1;
  one.mode = SampleMode::diffusion;
  r.nfe = nfe_count(one, sch.steps(), 1);
  if (cfg.keep_replicates) r.per_replicate.push_back(r.output);
  r.wallclock = seconds_since(t0);
  return r;
}

SampleResult sample_regression(const Denoiser& den, std::span<const Volume> conditions, const SamplerConfig& cfg,
                               const NoiseSchedule& sch) {
  check_conditions(conditions);
  check_config(cfg, sch.steps());
  const auto t0 = std::chrono::steady_clock::now();
  const Dims dims = conditions.front().dims();
  const Spacing spacing = conditions.front().spacing();
  const Volume latent = cfg.regression_latent == RegressionLatent::noise ? prior_draw(cfg, 0, dims, spacing)
                                                                         : Volume(dims, spacing);
  const std::size_t t = sch.steps() - 1;
  const std::vector<std::size_t> single{t};
  const auto views = cfg.view_policy == ViewPolicy::regression_three_view
                         ? plan_views(ViewPolicy::regression_three_view, single)
                         : std::vector<Axis>{Axis::axial};
  std::vector<Volume> preds(views.size());
  for (std::size_t v = 0; v < views.size(); ++v) {
    preds[v] = denoise_volume(den, latent, conditions, t, views[v], sch, cfg.workers);
  }
  SampleResult r;
  r.output = preds.size() == 1 ? preds.front() : combine(preds, cfg.view_combiner);
  r.nfe = views.size();
  if (cfg.keep_replicates) r.per_replicate = std::move(preds);
  r.wallclock = seconds_since(t0);
  return r;
}

SampleResult sample_expa(const Denoiser& den, std::span<const Volume> conditions, const SamplerConfig& cfg,
                         const NoiseSchedule& sch) {
  check_conditions(conditions);
  check_config(cfg, sch.steps());
  const auto t0 = std::chrono::steady_clock::now();
  const int workers = std::max(1, cfg.workers);
  // Replicates in parallel; slabs get what is left over.
  const int outer = static_cast<int>(std::min<std::size_t>(cfg.n_ex, static_cast<std::size_t>(workers)));
  const int inner = std::max(1, workers / outer);
  std::vector<Volume> finals(cfg.n_ex);
  parallel_for(cfg.n_ex, outer, [&](std::size_t rep) {
    finals[rep] = run_trajectory(den, conditions, cfg, sch, rep, inner);
  });
  SampleResult r;
  r.output = finals.size() == 1 ? finals.front() : combine(finals, cfg.combiner);
  SamplerConfig counted = cfg;
  counted.mode = SampleMode::expa;
  r.nfe = nfe_count(counted, sch.steps(), 1);
  if (cfg.keep_replicates) r.per_replicate = std::move(finals);
  r.wallclock = seconds_since(t0);
  return r;
}

SampleResult sample(const Denoiser& den, std::span<const Volume> conditions, const SamplerConfig& cfg,
                    const NoiseSchedule& sch) {
  switch (cfg.mode) {
    case SampleMode::diffusion: return sample_diffusion(den, conditions, cfg, sch);
    case SampleMode::regression: return sample_regression(den, conditions, cfg, sch);
    case SampleMode::expa: return sample_expa(den, conditions, cfg, sch);
  }
  throw Error(ErrorCode::InvalidParam, "unknown sampling mode");
}

}  // namespace yoda
