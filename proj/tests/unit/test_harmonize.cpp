#include <doctest.h>

#include "support.hpp"
#include "yoda/harmonize.hpp"
#include "yoda/metrics.hpp"
#include "yoda/phantom.hpp"

using namespace yoda;

namespace {

std::vector<GammaParams> alternating(std::size_t n, GammaParams odd) {
  std::vector<GammaParams> p(n);
  for (std::size_t j = 1; j < n; j += 2) p[j] = odd;
  return p;
}

/// Smooth positive volume that varies slowly across slices.
Volume smooth_volume(Dims dims) {
  Volume v(dims);
  for (std::size_t z = 0; z < dims.d; ++z)
    for (std::size_t y = 0; y < dims.h; ++y)
      for (std::size_t x = 0; x < dims.w; ++x) {
        v.at(z, y, x) = static_cast<float>(0.2 + 0.3 * std::sin(0.3 * y) * std::sin(0.2 * x) + 0.3 + 0.01 * z);
      }
  return v;
}

HarmonizeConfig quick(std::size_t steps) {
  HarmonizeConfig c;
  c.max_steps = steps;
  return c;
}

}  // namespace

TEST_CASE("gamma_apply") {
  const std::vector<float> s{0.1F, 0.5F, 0.9F};
  CHECK(gamma_apply(s, {}) == s);
  const std::vector<float> zero(4, 0.0F);
  for (float x : gamma_apply(zero, {0.0, 0.0, 0.5})) CHECK(x == doctest::Approx(0.5 + 1e-4).epsilon(1e-6));
  const auto doubled = gamma_apply(s, {1.0, 0.0, 0.0});
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(doubled[i] == doctest::Approx(2.0 * s[i]));
  const auto squared = gamma_apply(s, {0.0, 1.0, 0.0});
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(squared[i] == doctest::Approx(s[i] * s[i]));
  CHECK(test::error_code_of([&] { gamma_apply(s, {-1.0, 0.0, 0.0}); }) == ErrorCode::InvalidParam);
  CHECK(test::error_code_of([&] { gamma_apply(s, {0.0, -1.5, 0.0}); }) == ErrorCode::InvalidParam);
}

TEST_CASE("harmonization objective gradient matches finite differences") {
  Rng rng(1);
  const std::size_t n = 6, plane = 40;
  std::vector<std::vector<double>> slices(n, std::vector<double>(plane));
  std::vector<std::vector<std::uint8_t>> weights(n, std::vector<std::uint8_t>(plane, 1));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < plane; ++p) {
      slices[j][p] = 0.05 + 0.9 * rng.uniform();
      weights[j][p] = rng.uniform() < 0.8 ? 1 : 0;
    }
  const HarmonizeObjective obj(slices, weights, 0.01, 1e-4);
  std::vector<GammaParams> theta(n);
  for (auto& t : theta) t = {0.2 * rng.normal(), 0.2 * rng.normal(), 0.1 * rng.normal()};
  std::vector<GammaParams> grad(n);
  const double f = obj.value_and_gradient(theta, grad);
  CHECK(f == doctest::Approx(obj.value(theta)));
  const double h = 1e-4;
  for (std::size_t j = 0; j < n; ++j) {
    for (int k = 0; k < 3; ++k) {
      auto member = [k](GammaParams& g) -> double& { return k == 0 ? g.a : (k == 1 ? g.gamma : g.c); };
      auto up = theta, down = theta;
      member(up[j]) += h;
      member(down[j]) -= h;
      const double fd = (obj.value(up) - obj.value(down)) / (2.0 * h);
      const double analytic = member(grad[j]);
      CHECK(std::abs(fd - analytic) <= 1e-3 * std::max(std::abs(fd), 1e-8));
    }
  }
}

TEST_CASE("objective terms by hand") {
  // Two slices with a constant offset d: data term d^2, penalty on theta.
  const HarmonizeObjective obj({{0.5, 0.5}, {0.7, 0.7}}, {{1, 1}, {1, 1}}, 0.1, 1e-4);
  const std::vector<GammaParams> id(2);
  CHECK(obj.value(id) == doctest::Approx(0.04));
  const std::vector<GammaParams> shift{{0.0, 0.0, 0.2}, {}};
  CHECK(obj.value(shift) == doctest::Approx(0.1 * 0.04));
  const HarmonizeObjective empty({{0.5}, {0.7}, {0.6}}, {{1}, {0}, {1}}, 0.0, 1e-4);
  CHECK(empty.frozen(1));
  CHECK_FALSE(empty.frozen(0));
}

TEST_CASE("uniform volume keeps identity parameters") {
  const Volume v(Dims{12, 10, 10}, {}, 0.6F);
  const auto r = harmonize_slices(smooth_volume({12, 10, 10}), Axis::axial, quick(2000));
  for (const auto& p : harmonize_slices(v, Axis::axial, quick(2000)).params) {
    CHECK(std::abs(p.a) < 1e-3);
    CHECK(std::abs(p.gamma) < 1e-3);
    CHECK(std::abs(p.c) < 1e-3);
  }
  CHECK(r.objective.back() <= r.objective.front());
}

TEST_CASE("alternating slice gains are largely removed") {
  const Volume clean = smooth_volume({16, 20, 20});
  for (Axis axis : {Axis::axial, Axis::coronal, Axis::sagittal}) {
    const std::size_t n = clean.dims().along(axis);
    const Volume bad = inject_slice_gamma(clean, axis, alternating(n, {0.10, 0.0, 0.0}));
    const double before = adjacent_slice_mse(bad, axis);
    CHECK(before > 0.0);
    const auto r = harmonize_slices(bad, axis, quick(2000));
    CHECK(adjacent_slice_mse(r.corrected, axis) < 0.5 * before);
    CHECK(r.objective.back() < r.objective.front());
    CHECK(r.params.size() == n);
    for (std::size_t k = 1; k < r.objective.size(); ++k) CHECK(r.objective[k] <= r.objective[k - 1]);
  }
}

TEST_CASE("variant none leaves the volume unchanged") {
  const Volume v = inject_slice_gamma(smooth_volume({8, 8, 8}), Axis::axial, alternating(8, {0.1, 0.0, 0.0}));
  CHECK(test::bit_identical(harmonize_variant(v, Axis::axial, quick(100), GammaVariant::none), v));
}

TEST_CASE("linear variant suffices for a pure gain perturbation") {
  const Volume clean = smooth_volume({16, 16, 16});
  const Volume bad = inject_slice_gamma(clean, Axis::axial, alternating(16, {0.10, 0.0, 0.0}));
  const double lin = adjacent_slice_mse(harmonize_variant(bad, Axis::axial, quick(2000), GammaVariant::linear), Axis::axial);
  const double gen = adjacent_slice_mse(harmonize_variant(bad, Axis::axial, quick(2000), GammaVariant::generalized), Axis::axial);
  CHECK(lin <= gen * 1.05 + 1e-9);
  const double before = adjacent_slice_mse(bad, Axis::axial);
  CHECK(lin < 0.5 * before);
}

TEST_CASE("simple gamma cannot express offsets") {
  const Volume clean = smooth_volume({16, 16, 16});
  const Volume bad = inject_slice_gamma(clean, Axis::axial, alternating(16, {0.0, 0.0, 0.05}));
  const auto simple = harmonize_slices(bad, Axis::axial, quick(2000), GammaVariant::simple_gamma);
  const auto linear = harmonize_slices(bad, Axis::axial, quick(2000), GammaVariant::linear);
  CHECK(simple.objective.back() > linear.objective.back());
  for (const auto& p : simple.params) {
    CHECK(p.a == 0.0);
    CHECK(p.c == 0.0);
  }
  for (const auto& p : linear.params) CHECK(p.gamma == 0.0);
}

TEST_CASE("gain-capable corrections beat gamma-only and no correction on a phantom") {
  const PhantomSpec spec = PhantomSpec::desk_default({32, 32, 32}, 5);
  const PhantomCase pc = generate(spec);
  const Volume& clean = pc.target_clean;
  std::vector<GammaParams> pattern(32);
  for (std::size_t j = 0; j < 32; ++j) {
    if (j % 2 == 1) pattern[j] = {0.1, 0.0, 0.0};
  }
  const Volume bad = inject_slice_gamma(clean, Axis::axial, pattern);
  HarmonizeConfig cfg = quick(2000);
  cfg.foreground = pc.tissue;
  auto score = [&](GammaVariant v) { return ssim3d(harmonize_variant(bad, Axis::axial, cfg, v), clean, pc.tissue); };
  const double gen = score(GammaVariant::generalized);
  const double lin = score(GammaVariant::linear);
  const double simple = score(GammaVariant::simple_gamma);
  const double none = score(GammaVariant::none);
  MESSAGE("generalized " << gen << " linear " << lin << " simple " << simple << " none " << none);
  CHECK(gen > simple);
  CHECK(lin > simple);
  CHECK(simple > none);
  CHECK(std::abs(gen - lin) < 2e-3);
}

TEST_CASE("foreground restriction leaves background voxels untouched") {
  const PhantomCase pc = generate(PhantomSpec::desk_default({24, 24, 24}, 6));
  std::vector<GammaParams> pattern = alternating(24, {0.1, 0.0, 0.0});
  const Volume bad = inject_slice_gamma(pc.target_clean, Axis::axial, pattern);
  HarmonizeConfig cfg = quick(300);
  cfg.foreground = pc.tissue;
  const Volume out = harmonize_variant(bad, Axis::axial, cfg, GammaVariant::generalized);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!pc.tissue[i]) CHECK(out[i] == bad[i]);
  }
  cfg.foreground = Mask(bad.dims());
  CHECK(test::error_code_of([&] { harmonize_slices(bad, Axis::axial, cfg); }) == ErrorCode::EmptyMask);
}

TEST_CASE("variant names") {
  for (auto v : {GammaVariant::generalized, GammaVariant::simple_gamma, GammaVariant::linear, GammaVariant::none}) {
    CHECK(gamma_variant_from_string(to_string(v)) == v);
  }
  CHECK(test::error_code_of([] { gamma_variant_from_string("cubic"); }) == ErrorCode::InvalidParam);
}
