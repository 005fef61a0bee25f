#include <doctest.h>

#include <numbers>

#include "support.hpp"
#include "yoda/noise.hpp"

using namespace yoda;

namespace {

NoiseParams params(float sigma, NoiseKind kind, std::uint64_t seed) {
  NoiseParams p;
  p.sigma = sigma;
  p.kind = kind;
  p.seed = seed;
  return p;
}

const Dims kMillion{100, 100, 100};

Mask ball_mask(Dims dims, double radius) {
  Mask m(dims);
  const double cz = (dims.d - 1) / 2.0, cy = (dims.h - 1) / 2.0, cx = (dims.w - 1) / 2.0;
  for (std::size_t z = 0; z < dims.d; ++z)
    for (std::size_t y = 0; y < dims.h; ++y)
      for (std::size_t x = 0; x < dims.w; ++x) {
        const double r2 = (z - cz) * (z - cz) + (y - cy) * (y - cy) + (x - cx) * (x - cx);
        m.set((z * dims.h + y) * dims.w + x, r2 <= radius * radius);
      }
  return m;
}

}  // namespace

TEST_CASE("zero sigma is the identity") {
  const Volume v = test::random_volume({8, 8, 8}, 1);
  CHECK(test::bit_identical(add_rician(v, params(0.0F, NoiseKind::rician, 3)), v));
  CHECK(test::bit_identical(add_gaussian(v, params(0.0F, NoiseKind::gaussian, 3)), v));
}

TEST_CASE("Rician noise on a zero signal follows the Rayleigh mean") {
  const Volume out = add_rician(Volume(kMillion), params(1.0F, NoiseKind::rician, 11));
  CHECK(test::mean_of(out) == doctest::Approx(std::sqrt(std::numbers::pi / 2.0)).epsilon(0.01));
}

TEST_CASE("Rician noise at high SNR matches the root-mean-square limit") {
  const Volume out = add_rician(test::constant_volume(kMillion, 10.0F), params(0.5F, NoiseKind::rician, 12));
  // Reference from an independent draw of |x + n1 + i n2|.
  Rng rng(99);
  double s = 0.0;
  const int n = 1'000'000;
  for (int i = 0; i < n; ++i) s += std::hypot(10.0 + 0.5 * rng.normal(), 0.5 * rng.normal());
  const double mc = s / n;
  CHECK(test::mean_of(out) == doctest::Approx(std::sqrt(100.0 + 2.0 * 0.25)).epsilon(0.005));
  CHECK(test::mean_of(out) == doctest::Approx(mc).epsilon(0.001));
}

TEST_CASE("Gaussian noise statistics") {
  const Volume a = add_gaussian(Volume(kMillion), params(0.2F, NoiseKind::gaussian, 21));
  const Volume b = add_gaussian(Volume(kMillion), params(0.2F, NoiseKind::gaussian, 22));
  CHECK(test::std_of(a) == doctest::Approx(0.2).epsilon(0.01));
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += double(a[i]) * b[i];
    saa += double(a[i]) * a[i];
    sbb += double(b[i]) * b[i];
  }
  CHECK(std::abs(sab / std::sqrt(saa * sbb)) < 0.01);
  CHECK(test::bit_identical(a, add_gaussian(Volume(kMillion), params(0.2F, NoiseKind::gaussian, 21))));
}

TEST_CASE("relative sigma scales with the reference range") {
  const Volume v = test::random_volume({8, 8, 8}, 2, 0.0, 4.0);
  NoiseParams p = params(0.1F, NoiseKind::gaussian, 1);
  p.relative = true;
  CHECK(resolve_sigma(p, v) == doctest::Approx(0.1 * (v.max() - v.min())));
  p.relative = false;
  CHECK(resolve_sigma(p, v) == doctest::Approx(0.1));
}

TEST_CASE("rms_average") {
  const Volume v = test::random_volume({6, 6, 6}, 3);
  const std::vector<Volume> same(5, v);
  CHECK(test::max_abs_diff(rms_average(same), v) < 1e-6);
  const std::vector<Volume> pair{Volume(v.dims()), v};
  const Volume r = rms_average(pair);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(r[i] == doctest::Approx(v[i] / std::sqrt(2.0)).epsilon(1e-6));
}

TEST_CASE("rms of magnitude replicates follows the averaging law") {
  const Dims dims{16, 16, 16};
  std::vector<Volume> reps;
  for (std::size_t k = 0; k < 256; ++k) {
    reps.push_back(add_rician(test::constant_volume(dims, 1.0F), params(0.5F, NoiseKind::rician, 100 + k)));
  }
  CHECK(test::mean_of(rms_average(reps)) == doctest::Approx(std::sqrt(1.5)).epsilon(0.01));
}

TEST_CASE("mean_average") {
  const Volume v = test::random_volume({6, 6, 6}, 4, -1.0, 1.0);
  const std::vector<Volume> same(4, v);
  CHECK(test::max_abs_diff(mean_average(same), v) < 1e-6);
  Volume neg = v;
  for (auto& x : neg.data()) x = -x;
  const std::vector<Volume> pm{v, neg};
  CHECK(test::max_abs_diff(mean_average(pm), Volume(v.dims())) == 0.0);

  const Dims dims{16, 16, 16};
  std::vector<Volume> reps;
  for (std::size_t k = 0; k < 256; ++k) {
    reps.push_back(add_gaussian(test::constant_volume(dims, 1.0F), params(0.5F, NoiseKind::gaussian, 500 + k)));
  }
  const double ratio = test::std_of(mean_average(reps)) / test::std_of(reps.front());
  CHECK(ratio == doctest::Approx(1.0 / 16.0).epsilon(0.15));
}

TEST_CASE("averaging rejects empty and mismatched input") {
  CHECK(test::error_code_of([] { rms_average(std::vector<Volume>{}); }) == ErrorCode::EmptyInput);
  const std::vector<Volume> bad{Volume(Dims{2, 2, 2}), Volume(Dims{2, 2, 3})};
  CHECK(test::error_code_of([&] { mean_average(bad); }) == ErrorCode::DimMismatch);
}

TEST_CASE("erode6 removes boundary voxels") {
  const Mask full(Dims{5, 5, 5}, true);
  const Mask e = erode6(full);
  CHECK(e.count() == 27);
  CHECK(e[(2 * 5 + 2) * 5 + 2]);
  CHECK_FALSE(e[0]);
}

TEST_CASE("WM noise estimator") {
  const Dims dims{48, 48, 48};
  const Mask wm = ball_mask(dims, 18.0);
  const Volume clean = test::constant_volume(dims, 0.8F);
  CHECK(estimate_wm_noise(clean, wm) == doctest::Approx(0.0).epsilon(1e-9));
  std::vector<float> est;
  for (float s : {0.01F, 0.02F, 0.03F, 0.06F}) {
    est.push_back(estimate_wm_noise(add_gaussian(clean, params(s, NoiseKind::gaussian, 7)), wm));
  }
  CHECK(est[0] == doctest::Approx(0.01).epsilon(0.15));
  CHECK(est[2] == doctest::Approx(0.03).epsilon(0.15));
  CHECK(est[3] > est[1]);
  for (std::size_t i = 1; i < est.size(); ++i) CHECK(est[i] > est[i - 1]);
  CHECK(test::error_code_of([&] { estimate_wm_noise(clean, Mask(dims)); }) == ErrorCode::EmptyMask);
}

TEST_CASE("expected_mse") {
  CHECK(expected_mse(0.0F, 0.0F, 0.25F) == doctest::Approx(0.25));
  CHECK(expected_mse(0.1F, 0.2F, 0.0F) == doctest::Approx(0.05));
}

TEST_CASE("MSE between independently noised copies") {
  const Volume clean = test::random_volume(kMillion, 8);
  const Volume a = add_gaussian(clean, params(0.1F, NoiseKind::gaussian, 31));
  const Volume b = add_gaussian(clean, params(0.2F, NoiseKind::gaussian, 32));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (double(a[i]) - b[i]) * (double(a[i]) - b[i]);
  CHECK(s / double(a.size()) == doctest::Approx(0.05).epsilon(0.03));
}
