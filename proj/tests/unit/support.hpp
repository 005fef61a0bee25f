#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "yoda/error.hpp"
#include "yoda/rng.hpp"
#include "yoda/volume.hpp"

namespace yoda::test {

inline Volume random_volume(Dims dims, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Volume v(dims);
  Rng rng(seed);
  for (auto& x : v.data()) x = static_cast<float>(lo + (hi - lo) * rng.uniform());
  return v;
}

inline Volume constant_volume(Dims dims, float value) { return Volume(dims, {}, value); }

inline double mean_of(const Volume& v) {
  double s = 0.0;
  for (float x : v.data()) s += x;
  return s / static_cast<double>(v.size());
}

inline double std_of(const Volume& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (float x : v.data()) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

inline double max_abs_diff(const Volume& a, const Volume& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

inline bool bit_identical(const Volume& a, const Volume& b) {
  return a.dims() == b.dims() && std::equal(a.data().begin(), a.data().end(), b.data().begin(), [](float x, float y) {
           return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
         });
}

/// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("yoda_lab_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

template <typename Fn>
ErrorCode error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a yoda::Error");
  return ErrorCode::IoError;
}

}  // namespace yoda::test
