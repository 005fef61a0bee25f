#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "yoda/harmonize.hpp"
#include "yoda/noise.hpp"
#include "yoda/volume.hpp"

namespace yoda {

/// Tissue classes of the phantom, in label order.
enum class Tissue : std::uint8_t { background = 0, gm = 1, wm = 2, lesion = 3 };

struct Ellipsoid {
  std::array<double, 3> center{};  ///< (z, y, x) in voxels
  std::array<double, 3> radii{};   ///< (z, y, x) in voxels
};

struct LesionSpec {
  std::array<double, 3> center{};  ///< (z, y, x) in voxels
  double radius_mm = 3.0;
  /// Intensity offset per condition modality; target offset in `target_delta`.
  std::vector<double> condition_delta;
  double target_delta = 0.3;
};

/// Piecewise intensities per tissue class (background, gm, wm) for one modality.
struct ModalityContrast {
  std::array<double, 3> tissue{0.0, 0.5, 0.8};
};

/// Target mean inside tissue: k0 + k1 c1 + k2 c2 + k3 c1 c2 (+ lesion delta), clamped to [0, 1].
/// With one condition, c2 is taken as 0.
struct TranslationSpec {
  std::array<double, 4> k{0.05, 0.1, 0.6, 0.5};
};

struct PhantomSpec {
  Dims grid{48, 48, 48};
  Spacing spacing{};
  Ellipsoid outer;  ///< tissue boundary; the shell between outer and inner is GM
  Ellipsoid inner;  ///< WM core
  std::vector<LesionSpec> lesions;
  std::vector<ModalityContrast> conditions;
  TranslationSpec translation;
  /// Partial-volume smoothing of the tissue boundaries, in voxels.
  double edge_sigma = 0.7;
  /// Amplitude of the smooth random texture added to each condition.
  double texture_amplitude = 0.03;
  double texture_sigma = 2.0;
  /// Peak relative amplitude of a multiplicative quadratic bias field on the conditions.
  double bias_amplitude = 0.05;
  std::vector<NoiseParams> condition_noise;
  NoiseParams target_noise{0.03F, NoiseKind::rician, 0, false};
  /// Std of the target around the translation (0 makes the target a deterministic function of C).
  double conditional_std = 0.0;
  std::uint64_t seed = 0;

  /// Two-condition brain-like default on `grid` with geometry and lesions jittered by `seed`.
  static PhantomSpec desk_default(Dims grid, std::uint64_t seed, std::size_t n_lesions = 3);
};

nlohmann::json to_json(const PhantomSpec& s);
PhantomSpec phantom_spec_from_json(const nlohmann::json& j);

struct PhantomCase {
  std::vector<Volume> conditions;
  Volume target_clean;
  Volume target_noisy;
  /// Translation f(C): the conditional mean of the clean target given C.
  Volume translation;
  Mask tissue;
  Mask wm;  ///< WM core without lesion voxels
  Mask lesion;
  std::vector<std::uint32_t> lesion_labels;  ///< 1-based per lesion spec; 0 elsewhere
  std::vector<std::uint8_t> tissue_class;    ///< Tissue per voxel
};

/// Deterministic given spec.seed. Throws InvalidSpec on degenerate geometry.
PhantomCase generate(const PhantomSpec& spec);

/// Voxel-wise translation f(c, class) used by generate().
double translate(const TranslationSpec& t, std::span<const double> c, Tissue cls, double lesion_delta);

/// Translation f evaluated on `conditions` with the spec's coefficients and the
/// case's tissue classes and lesion labels.
Volume apply_translation(const PhantomSpec& spec, std::span<const Volume> conditions,
                         const std::vector<std::uint8_t>& tissue_class,
                         const std::vector<std::uint32_t>& lesion_labels);

/// Applies pattern[j] to slice j along `axis`.
Volume inject_slice_gamma(const Volume& v, Axis axis, std::span<const GammaParams> pattern, double eps_pos = 1e-4);

/// Writes conditions, targets, translation and masks as YVOL plus manifest.json into `dir`.
nlohmann::json save_case(const PhantomCase& c, const PhantomSpec& spec, const std::filesystem::path& dir);
PhantomCase load_case(const std::filesystem::path& dir);
/// Spec stored in a saved case's manifest.
PhantomSpec load_case_spec(const std::filesystem::path& dir);

}  // namespace yoda
