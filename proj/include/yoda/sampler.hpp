#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "yoda/denoiser.hpp"
#include "yoda/schedule.hpp"
#include "yoda/volume.hpp"

namespace yoda {

enum class SampleMode { diffusion, regression, expa };
enum class ViewPolicy { axial_only, orthogonal_cycle, orthogonal_random, regression_three_view };
enum class Combiner { rms, mean };
enum class RegressionLatent { noise, zeros };

const char* to_string(SampleMode m);
const char* to_string(ViewPolicy p);
const char* to_string(Combiner c);
SampleMode sample_mode_from_string(const std::string& s);
ViewPolicy view_policy_from_string(const std::string& s);
Combiner combiner_from_string(const std::string& s);

struct SamplerConfig {
  SampleMode mode = SampleMode::diffusion;
  /// Start of the dense backward phase (1-based); 0 means regression.
  /// T - 1 is full sampling. diffusion_defaults() uses T / 4.
  std::size_t t_trunc = 250;
  std::size_t n_ex = 1;
  ViewPolicy view_policy = ViewPolicy::orthogonal_cycle;
  std::size_t n_slices = 5;
  Combiner combiner = Combiner::rms;
  /// Combines the per-view regression predictions.
  Combiner view_combiner = Combiner::mean;
  RegressionLatent regression_latent = RegressionLatent::noise;
  std::uint64_t seed = 0;
  bool keep_replicates = false;
  int workers = 1;

  static SamplerConfig diffusion_defaults(std::size_t steps);
};

nlohmann::json to_json(const SamplerConfig& cfg);
SamplerConfig sampler_config_from_json(const nlohmann::json& j);

struct SampleResult {
  Volume output;
  std::size_t nfe = 0;
  std::vector<Volume> per_replicate;
  double wallclock = 0.0;
};

/// Full-volume denoiser evaluations a configuration costs.
std::size_t nfe_count(const SamplerConfig& cfg, std::size_t steps, std::size_t n_views_regression);

/// 0-based time indices visited by one trajectory: T-1, then T_trunc-1 down to 0.
std::vector<std::size_t> step_sequence(std::size_t steps, std::size_t t_trunc);

/// Axis for each position of `t_sequence`. regression_three_view returns the
/// three axes for a single step. orthogonal_random draws from `seed`.
std::vector<Axis> plan_views(ViewPolicy policy, std::span<const std::size_t> t_sequence, std::uint64_t seed = 0);

/// x_hat_{t->0} for the whole volume, denoised slab-wise along `axis` with the
/// denoiser's slab width. Every slab reads the same pre-step latent.
Volume denoise_volume(const Denoiser& den, const Volume& latent, std::span<const Volume> conditions,
                      std::size_t t, Axis axis, const NoiseSchedule& sch, int workers);

SampleResult sample_diffusion(const Denoiser& den, std::span<const Volume> conditions, const SamplerConfig& cfg,
                              const NoiseSchedule& sch);
SampleResult sample_regression(const Denoiser& den, std::span<const Volume> conditions, const SamplerConfig& cfg,
                               const NoiseSchedule& sch);
SampleResult sample_expa(const Denoiser& den, std::span<const Volume> conditions, const SamplerConfig& cfg,
                         const NoiseSchedule& sch);
/// Dispatch on cfg.mode.
SampleResult sample(const Denoiser& den, std::span<const Volume> conditions, const SamplerConfig& cfg,
                    const NoiseSchedule& sch);

}  // namespace yoda
