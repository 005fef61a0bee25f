#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "yoda/volume.hpp"

namespace yoda {

struct SsimOptions {
  double sigma = 1.5;
  int radius = 5;  ///< window 2 * radius + 1 = 11 per axis
  double k1 = 0.01;
  double k2 = 0.03;
  /// Fixed data range; by default (max - min) of the masked reference.
  std::optional<double> data_range;
};

/// Mean local SSIM over mask voxels, computed on the mask's bounding box.
double ssim3d(const Volume& x_hat, const Volume& x_ref, const Mask& mask, const SsimOptions& opt = {});

/// Masked mean squared difference.
double mse(const Volume& x_hat, const Volume& x_ref, const Mask& mask);

/// 10 log10(range^2 / mse) with range from the masked reference; +inf when mse is 0.
double psnr(const Volume& x_hat, const Volume& x_ref, const Mask& mask);
double psnr_from_mse(double mse, double range);

/// Masked (max - min) of `v`.
double masked_range(const Volume& v, const Mask& mask);

/// 26-connected component labels, 1-based; 0 is background. Labels follow raster order of first voxel.
std::vector<std::uint32_t> label_components(const Mask& m, std::size_t* n_components = nullptr);

struct LesionCnr {
  std::uint32_t label = 0;
  std::size_t voxels = 0;
  std::size_t shell_voxels = 0;
  double cnr = 0.0;
};

struct CnrReport {
  double value = 0.0;
  std::vector<LesionCnr> lesions;
  std::vector<std::uint32_t> skipped;  ///< lesions with an empty or flat WM shell
};

struct CnrOptions {
  double shell_mm = 3.0;
  /// Lesion-volume weighted average when set, plain mean over lesions otherwise.
  bool volume_weighted = true;
};

/// Per-lesion (mean lesion - mean WM shell) / std WM shell, aggregated across lesions.
/// Throws NoValidLesions when every lesion is skipped.
CnrReport cnr_report(const Volume& x, const std::vector<std::uint32_t>& lesion_labels, const Mask& wm_mask,
                     const CnrOptions& opt = {});
double cnr(const Volume& x, const Mask& lesion_mask, const Mask& wm_mask, const CnrOptions& opt = {});

struct MetricReport {
  double ssim = 0.0;
  double psnr_db = 0.0;
  double mse = 0.0;
  std::optional<double> cnr;
  std::optional<double> sigma_wm;
  std::size_t voxel_count = 0;
};

struct EvalMasks {
  Mask tissue;
  std::optional<Mask> wm;
  std::optional<Mask> lesion;
};

MetricReport evaluate(const Volume& x_hat, const Volume& x_ref, const EvalMasks& masks);

nlohmann::json to_json(const MetricReport& r);

/// Number as written to CSV: shortest round-trip form, "inf"/"nan" for non-finite values.
std::string format_number(double v);

}  // namespace yoda
