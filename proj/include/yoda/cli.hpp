#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "yoda/denoiser.hpp"
#include "yoda/phantom.hpp"
#include "yoda/sampler.hpp"
#include "yoda/schedule.hpp"

namespace yoda::cli {

/// Parsed global flags shared by every subcommand.
struct GlobalOptions {
  std::filesystem::path config;
  std::filesystem::path out = ".";
  std::optional<std::uint64_t> seed;
  int workers = 0;  ///< 0 resolves through $YODA_LAB_WORKERS, then the hardware
};

/// Entry point of the yoda_lab tool. Returns the process exit code:
/// 0 on success, 1 for an invalid configuration, 2 for usage errors.
int run(const std::vector<std::string>& args);

/// Column order of curve and robust CSVs.
inline constexpr const char* kCurveHeader =
    "case_id,mode,T_trunc,n_ex,views,nfe,ssim,psnr_db,sigma_wm,cnr,wallclock_s";

/// 64-bit FNV-1a of the compact JSON dump.
std::string config_hash(const nlohmann::json& j);

/// Denoiser described by a config block: {"kind": "oracle", "prior_var": s2}
/// with `oracle_mean` as mu(C), or {"kind": "neural", "weights": stem}.
std::unique_ptr<Denoiser> make_denoiser(const nlohmann::json& j, const Volume& oracle_mean,
                                        const std::filesystem::path& base);

struct GridPoint {
  std::string case_id;
  SampleMode mode = SampleMode::diffusion;
  std::size_t t_trunc = 0;
  std::size_t n_ex = 1;
  std::size_t views = 1;
  std::size_t nfe = 0;
  double ssim = 0.0;
  double psnr_db = 0.0;
  double sigma_wm = 0.0;
  std::optional<double> cnr;
  double wallclock = 0.0;
};

std::string csv_row(const GridPoint& p);

}  // namespace yoda::cli
