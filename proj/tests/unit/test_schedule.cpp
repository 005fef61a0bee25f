#include <doctest.h>

#include <numbers>

#include "support.hpp"
#include "yoda/noise.hpp"
#include "yoda/schedule.hpp"

using namespace yoda;

namespace {

double rel_error(const Volume& a, const Volume& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (double(a[i]) - b[i]) * (double(a[i]) - b[i]);
    den += double(b[i]) * b[i];
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("linear schedule") {
  const auto one = NoiseSchedule::linear(1, 1e-4, 0.02);
  REQUIRE(one.steps() == 1);
  CHECK(one.alpha_bar(0) == doctest::Approx(1.0 - 1e-4));

  const auto sch = NoiseSchedule::linear(1000);
  double prod = 1.0;
  for (std::size_t t = 0; t < 1000; ++t) {
    const double beta = 1e-4 + (0.02 - 1e-4) * static_cast<double>(t) / 999.0;
    prod *= 1.0 - beta;
    CHECK(sch.alpha_bar(t) == doctest::Approx(prod).epsilon(1e-12));
  }
  CHECK(sch.alpha_bar(999) < 1e-4);
  for (std::size_t t = 1; t < 1000; ++t) CHECK(sch.alpha_bar(t) < sch.alpha_bar(t - 1));

  CHECK(test::error_code_of([] { NoiseSchedule::linear(0); }) == ErrorCode::InvalidParam);
  CHECK(test::error_code_of([] { NoiseSchedule::linear(10, 0.1, 0.01); }) == ErrorCode::InvalidParam);
}

TEST_CASE("cosine schedule") {
  const auto sch = NoiseSchedule::cosine(1000);
  const double s = 0.008;
  auto f = [&](double t) {
    const double c = std::cos((t / 1000.0 + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  CHECK(sch.alpha_bar(0) > 0.99);
  for (std::size_t t : {0UL, 100UL, 500UL, 900UL}) CHECK(sch.alpha_bar(t) == doctest::Approx(f(t + 1.0) / f(0.0)).epsilon(1e-9));
  for (std::size_t t = 1; t < 1000; ++t) CHECK(sch.alpha_bar(t) < sch.alpha_bar(t - 1));
  for (double b : sch.betas()) CHECK(b <= 0.999);
  CHECK(sch.alpha_bar(500) > NoiseSchedule::linear(1000).alpha_bar(500));
}

TEST_CASE("schedule JSON roundtrip") {
  for (const auto& sch : {NoiseSchedule::linear(200, 2e-4, 0.03), NoiseSchedule::cosine(300, 0.01)}) {
    const auto back = NoiseSchedule::from_json(sch.to_json());
    CHECK(back.kind() == sch.kind());
    CHECK(back.alpha_bars() == sch.alpha_bars());
  }
  CHECK(test::error_code_of([] { NoiseSchedule::from_json({{"kind", "sigmoid"}}); }) == ErrorCode::InvalidParam);
}

TEST_CASE("forward_diffuse limits and variance") {
  const Volume x0 = test::random_volume({8, 8, 8}, 1);
  const Volume eps = test::random_volume({8, 8, 8}, 2, -1.0, 1.0);
  const auto clean = NoiseSchedule::linear(1, 1e-12, 1e-12);
  CHECK(test::max_abs_diff(forward_diffuse(x0, 0, eps, clean), x0) < 1e-5);
  const auto sch = NoiseSchedule::linear(1000);
  const double leak = std::sqrt(sch.alpha_bar(999));
  CHECK(test::max_abs_diff(forward_diffuse(x0, 999, eps, sch), eps) <= leak + 1e-6);

  // Per-voxel variance over resampled noise for a constant x0.
  const Volume c = test::constant_volume({4, 4, 4}, 0.7F);
  const std::size_t t = 300;
  std::vector<double> s1(c.size()), s2(c.size());
  const int n = 20000;
  Rng rng(3);
  for (int k = 0; k < n; ++k) {
    const Volume e = gaussian_field(c.dims(), rng);
    const Volume xt = forward_diffuse(c, t, e, sch);
    for (std::size_t i = 0; i < c.size(); ++i) {
      s1[i] += xt[i];
      s2[i] += double(xt[i]) * xt[i];
    }
  }
  double var = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) var += s2[i] / n - (s1[i] / n) * (s1[i] / n);
  CHECK(var / double(c.size()) == doctest::Approx(1.0 - sch.alpha_bar(t)).epsilon(0.03));
}

TEST_CASE("v_target limits and expansion") {
  const Volume x0 = test::random_volume({6, 6, 6}, 4);
  const Volume eps = test::random_volume({6, 6, 6}, 5, -1.0, 1.0);
  const auto clean = NoiseSchedule::linear(1, 1e-12, 1e-12);
  CHECK(test::max_abs_diff(v_target(x0, eps, 0, clean), eps) < 1e-5);
  const auto noisy = NoiseSchedule::linear(1, 0.999999, 0.999999);
  CHECK(test::max_abs_diff(v_target(x0, eps, 0, noisy), [&] {
          Volume n = x0;
          for (auto& x : n.data()) x = -x;
          return n;
        }()) < 2e-3);

  const auto sch = NoiseSchedule::linear(1000);
  const std::size_t t = 420;
  const double ab = sch.alpha_bar(t);
  const Volume v = v_target(x0, eps, t, sch);
  double vv = 0.0, ee = 0.0, xx = 0.0, ex = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    vv += double(v[i]) * v[i];
    ee += double(eps[i]) * eps[i];
    xx += double(x0[i]) * x0[i];
    ex += double(eps[i]) * x0[i];
  }
  CHECK(vv == doctest::Approx(ab * ee + (1.0 - ab) * xx - 2.0 * std::sqrt(ab * (1.0 - ab)) * ex).epsilon(1e-5));
}

TEST_CASE("to_x0 inverts every prediction kind at every t") {
  const auto sch = NoiseSchedule::linear(1000);
  const Volume x0 = test::random_volume({16, 16, 16}, 6, 0.1, 1.0);
  Rng rng(7);
  const Volume eps = gaussian_field(x0.dims(), rng);
  for (std::size_t t = 0; t < 1000; t += 37) {
    const Volume xt = forward_diffuse(x0, t, eps, sch);
    CHECK(rel_error(to_x0(xt, {PredictionKind::v, v_target(x0, eps, t, sch)}, t, sch), x0) < 1e-5);
    CHECK(rel_error(to_x0(xt, {PredictionKind::epsilon, eps}, t, sch), x0) < 1e-5);
    CHECK(rel_error(to_x0(xt, {PredictionKind::x0, x0}, t, sch), x0) == 0.0);
  }
}

TEST_CASE("from_x0 and to_epsilon are consistent") {
  const auto sch = NoiseSchedule::cosine(100);
  const Volume x0 = test::random_volume({4, 4, 4}, 8);
  Rng rng(9);
  const Volume eps = gaussian_field(x0.dims(), rng);
  const std::size_t t = 60;
  const Volume xt = forward_diffuse(x0, t, eps, sch);
  for (auto kind : {PredictionKind::v, PredictionKind::epsilon, PredictionKind::x0}) {
    const Prediction p = from_x0(xt, x0, kind, t, sch);
    CHECK(p.kind == kind);
    CHECK(test::max_abs_diff(to_x0(xt, p, t, sch), x0) < 1e-4);
  }
  CHECK(test::max_abs_diff(to_epsilon(xt, x0, t, sch), eps) < 1e-4);
}

TEST_CASE("renoise") {
  const auto sch = NoiseSchedule::linear(1000);
  const Volume x0 = test::random_volume({6, 6, 6}, 10);
  Rng rng(11);
  const Volume eps = gaussian_field(x0.dims(), rng);
  CHECK(test::bit_identical(renoise(x0, 123, eps, sch), forward_diffuse(x0, 123, eps, sch)));
  const Volume scaled = renoise(x0, 123, Volume(x0.dims()), sch);
  for (std::size_t i = 0; i < x0.size(); ++i) CHECK(scaled[i] == doctest::Approx(std::sqrt(sch.alpha_bar(123)) * x0[i]));
  CHECK(test::error_code_of([&] { renoise(x0, 1000, eps, sch); }) == ErrorCode::IndexOutOfRange);
}

TEST_CASE("prediction kind names") {
  for (auto k : {PredictionKind::v, PredictionKind::epsilon, PredictionKind::x0}) CHECK(prediction_kind_from_string(to_string(k)) == k);
  CHECK(test::error_code_of([] { prediction_kind_from_string("score"); }) == ErrorCode::UnsupportedKind);
}
