#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "yoda/volume.hpp"

namespace yoda {

/// Generalized gamma map (1 + a) x^(1 + gamma) + c for one slice.
struct GammaParams {
  double a = 0.0;
  double gamma = 0.0;
  double c = 0.0;

  bool operator==(const GammaParams&) const = default;
};

enum class GammaVariant { generalized, simple_gamma, linear, none };

const char* to_string(GammaVariant v);
GammaVariant gamma_variant_from_string(const std::string& s);

struct HarmonizeConfig {
  double learning_rate = 10.0;
  std::size_t max_steps = 2000;
  double penalty = 0.02;
  /// Voxels that take part in the data term; all voxels when unset.
  std::optional<Mask> foreground;
  double eps_pos = 1e-4;
};

struct HarmonizeResult {
  Volume corrected;
  std::vector<GammaParams> params;  ///< one per slice along the axis
  std::vector<double> objective;    ///< objective at step 0 and after each accepted step
  std::size_t rejected_steps = 0;
};

/// x clamped to eps_pos, then mapped. Throws InvalidParam unless 1 + a > 0 and 1 + gamma > 0.
std::vector<float> gamma_apply(std::span<const float> slice, const GammaParams& p, double eps_pos = 1e-4);

/// Slice-coherence objective over normalised slices of equal size.
/// `slices[j]` holds slice j, `weights[j]` 1 for data voxels and 0 elsewhere.
/// Gradient is written as (a, gamma, c) per slice when `grad` is non-empty.
class HarmonizeObjective {
 public:
  HarmonizeObjective(std::vector<std::vector<double>> slices, std::vector<std::vector<std::uint8_t>> weights,
                     double penalty, double eps_pos);

  std::size_t n_slices() const noexcept { return log_x_.size(); }
  double value(std::span<const GammaParams> theta) const;
  double value_and_gradient(std::span<const GammaParams> theta, std::span<GammaParams> grad) const;
  /// Slices without any data voxel contribute no gradient and stay at identity.
  bool frozen(std::size_t j) const { return frozen_.at(j); }

 private:
  std::vector<std::vector<double>> log_x_;
  std::vector<std::vector<std::uint8_t>> weights_;
  std::vector<double> pair_count_;
  std::vector<bool> frozen_;
  double penalty_;
};

/// Optimises per-slice gamma maps along `axis` so adjacent slices agree.
/// Intensities are normalised to [0, 1] by the foreground range first.
HarmonizeResult harmonize_slices(const Volume& v, Axis axis, const HarmonizeConfig& cfg,
                                 GammaVariant variant = GammaVariant::generalized);

/// Corrected volume only.
Volume harmonize_variant(const Volume& v, Axis axis, const HarmonizeConfig& cfg, GammaVariant variant);

/// Mean squared difference between adjacent slices along `axis`, averaged over pairs.
double adjacent_slice_mse(const Volume& v, Axis axis, const std::optional<Mask>& foreground = std::nullopt);

void write_trace_csv(const HarmonizeResult& r, const std::filesystem::path& path);

}  // namespace yoda
