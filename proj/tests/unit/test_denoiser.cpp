#include <doctest.h>

#include "support.hpp"
#include "yoda/denoiser.hpp"
#include "yoda/neural_denoiser.hpp"
#include "yoda/nn.hpp"
#include "yoda/filter.hpp"
#include "yoda/noise.hpp"

using namespace yoda;

namespace {

DenoiserInput make_input(const Volume& latent, const std::vector<Volume>& conditions, Axis axis, std::size_t index,
                         std::size_t width, std::size_t t) {
  DenoiserInput in;
  in.latent = extract_slab(latent, axis, index, width);
  for (const auto& c : conditions) in.conditions.push_back(extract_slab(c, axis, index, width));
  in.t = t;
  in.axis = axis;
  return in;
}

/// Posterior mean of X0 given x_t by self-normalised importance sampling from the prior.
double mc_posterior_mean(double x_t, double mu, double s2, double ab, int n, std::uint64_t seed) {
  Rng rng(seed);
  double num = 0.0, den = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x0 = mu + std::sqrt(s2) * rng.normal();
    const double r = x_t - std::sqrt(ab) * x0;
    const double w = std::exp(-r * r / (2.0 * (1.0 - ab)));
    num += w * x0;
    den += w;
  }
  return num / den;
}

NeuralConfig tiny_config(std::size_t width = 3, std::size_t n_cond = 1) {
  NeuralConfig c;
  c.slab_width = width;
  c.n_conditions = n_cond;
  c.channels = {4, 6, 8};
  c.time_embedding = 8;
  return c;
}

}  // namespace

TEST_CASE("Gaussian posterior mean matches a Monte-Carlo oracle") {
  CHECK(gaussian_posterior_mean(1.0, 0.0, 1.0, 0.5) == doctest::Approx(0.70710678).epsilon(1e-6));
  const double mc = mc_posterior_mean(1.0, 0.0, 1.0, 0.5, 1'000'000, 1);
  CHECK(gaussian_posterior_mean(1.0, 0.0, 1.0, 0.5) == doctest::Approx(mc).epsilon(0.005));
  for (auto [xt, mu, s2, ab] : {std::tuple{0.3, 0.5, 0.04, 0.9}, std::tuple{-0.7, 0.2, 0.25, 0.1}}) {
    CHECK(gaussian_posterior_mean(xt, mu, s2, ab) == doctest::Approx(mc_posterior_mean(xt, mu, s2, ab, 1'000'000, 2)).epsilon(0.005));
  }
  CHECK(gaussian_posterior_mean(0.42, 0.1, 0.5, 1.0) == doctest::Approx(0.42));
  CHECK(gaussian_posterior_mean(0.42, 0.1, 0.5, 0.0) == doctest::Approx(0.1));
  CHECK(gaussian_posterior_mean(0.42, 0.1, 0.0, 0.3) == doctest::Approx(0.1));
}

TEST_CASE("oracle denoiser limits") {
  const Volume mu = test::random_volume({6, 8, 10}, 1);
  const Volume xt = test::random_volume({6, 8, 10}, 2, -1.0, 1.0);
  for (auto kind : {PredictionKind::v, PredictionKind::epsilon, PredictionKind::x0}) {
    const OracleGaussianDenoiser den(mu, 0.1, kind);
    const auto nearly_clean = NoiseSchedule::linear(1, 1e-12, 1e-12);
    for (Axis axis : {Axis::axial, Axis::coronal, Axis::sagittal}) {
      const auto in = make_input(xt, {}, axis, 3, 1, 0);
      const Prediction p = den.predict(in, nearly_clean);
      CHECK(p.kind == kind);
      const Volume plane(p.data.dims(), std::vector<float>(in.latent.center().begin(), in.latent.center().end()));
      CHECK(test::max_abs_diff(to_x0(plane, p, 0, nearly_clean), plane) < 1e-4);
    }
  }
  const OracleGaussianDenoiser den(mu, 0.1, PredictionKind::x0);
  const auto noisy = NoiseSchedule::linear(1, 0.999999, 0.999999);
  const auto in = make_input(xt, {}, Axis::coronal, 5, 1, 0);
  const Prediction p = den.predict(in, noisy);
  const Slab mu_slab = extract_slab(mu, Axis::coronal, 5, 1);
  for (std::size_t i = 0; i < p.data.size(); ++i) CHECK(p.data[i] == doctest::Approx(mu_slab.center()[i]).epsilon(1e-3));
}

TEST_CASE("oracle denoiser validates input") {
  CHECK(test::error_code_of([] { OracleGaussianDenoiser(Volume(Dims{2, 2, 2}), -1.0); }) == ErrorCode::InvalidParam);
  CHECK(test::error_code_of([] { OracleGaussianDenoiser(Volume(Dims{2, 2, 2}), 0.1, PredictionKind::v, 2); }) ==
        ErrorCode::InvalidSlabWidth);
  const OracleGaussianDenoiser den(Volume(Dims{4, 4, 4}), 0.1);
  auto in = make_input(Volume(Dims{4, 4, 4}), {Volume(Dims{4, 4, 4})}, Axis::axial, 1, 1, 0);
  in.conditions[0].center_index = 2;
  CHECK(test::error_code_of([&] { den.predict(in, NoiseSchedule::linear(10)); }) == ErrorCode::DimMismatch);
}

TEST_CASE("neural denoiser shape, zero weights and determinism") {
  NeuralDenoiser den(tiny_config(3, 2), 5);
  const Volume x = test::random_volume({7, 9, 11}, 3);
  const std::vector<Volume> cond{test::random_volume({7, 9, 11}, 4), test::random_volume({7, 9, 11}, 5)};
  const auto sch = NoiseSchedule::linear(100);
  for (Axis axis : {Axis::axial, Axis::coronal, Axis::sagittal}) {
    const auto in = make_input(x, cond, axis, 2, 3, 40);
    const auto [rows, cols] = plane_shape(x.dims(), axis);
    const Prediction p = den.predict(in, sch);
    CHECK(p.data.dims() == Dims{1, rows, cols});
  }
  // Randomise every weight, then check repeatability and the zero-weight limit.
  Rng rng(6);
  for (auto& w : den.weights()) w = static_cast<float>(0.1 * rng.normal());
  den.ema_weights() = den.weights();
  const auto in = make_input(x, cond, Axis::axial, 3, 3, 40);
  const Prediction a = den.predict(in, sch);
  const Prediction b = den.predict(in, sch);
  CHECK(test::bit_identical(a.data, b.data));
  CHECK(test::max_abs_diff(a.data, Volume(a.data.dims())) > 0.0);
  std::fill(den.ema_weights().begin(), den.ema_weights().end(), 0.0F);
  CHECK(test::max_abs_diff(den.predict(in, sch).data, Volume(a.data.dims())) == 0.0);
  den.set_use_ema(false);
  CHECK(test::bit_identical(den.predict(in, sch).data, a.data));

  auto bad = in;
  bad.conditions.pop_back();
  CHECK(test::error_code_of([&] { den.predict(bad, sch); }) == ErrorCode::DimMismatch);
}

TEST_CASE("network input pads planes to multiples of four") {
  const Volume x = test::random_volume({5, 6, 7}, 7);
  const auto in = make_input(x, {x}, Axis::axial, 2, 1, 0);
  const auto t = make_network_input(in);
  CHECK(t.c == 2);
  CHECK(t.h == 8);
  CHECK(t.w == 8);
  CHECK(t.data[0] == x.at(2, 0, 0));
  CHECK(t.data[7] == x.at(2, 0, 6));
  CHECK(t.data[7 * 8 + 7] == x.at(2, 5, 6));
}

TEST_CASE("latent scaling feeds sqrt(alpha_bar) times the latent") {
  const auto sch = NoiseSchedule::linear(100);
  const Volume x = test::random_volume({6, 8, 8}, 11, -1.0, 1.0);
  const Volume c = test::random_volume({6, 8, 8}, 12);
  NeuralConfig on = tiny_config();
  NeuralConfig off = on;
  off.scale_latent = false;
  REQUIRE(on.scale_latent);
  NeuralDenoiser a(on, 13);
  NeuralDenoiser b(off, 13);
  Rng rng(14);
  for (auto& w : a.weights()) w = static_cast<float>(0.2 * rng.normal());
  a.ema_weights() = a.weights();
  b.weights() = a.weights();
  b.ema_weights() = a.weights();
  for (std::size_t t : {0UL, 42UL, 99UL}) {
    const double g = std::sqrt(sch.alpha_bar(t));
    Volume scaled = x;
    for (auto& v : scaled.data()) v = static_cast<float>(g * v);
    const auto in = make_input(x, {c}, Axis::coronal, 3, 3, t);
    const auto ref = make_input(scaled, {c}, Axis::coronal, 3, 3, t);
    CHECK(test::bit_identical(a.predict(in, sch).data, b.predict(ref, sch).data));
  }
  NeuralConfig back = neural_config_from_json(to_json(off));
  CHECK_FALSE(back.scale_latent);
}

TEST_CASE("network gradient matches central finite differences") {
  nn::UNetConfig cfg;
  cfg.in_channels = 3;
  cfg.channels = {3, 4, 5};
  cfg.time_embedding = 6;
  const nn::UNet<double> net(cfg);
  std::vector<double> params(net.parameter_count());
  Rng rng(8);
  for (auto& p : params) p = 0.3 * rng.normal();
  nn::Tensor<double> x(3, 8, 8);
  for (auto& v : x.data) v = rng.normal();
  std::vector<double> target(64), weight(64);
  for (std::size_t i = 0; i < 64; ++i) {
    target[i] = rng.normal();
    weight[i] = i % 3 == 0 ? 0.01 : 1.0;
  }
  const double t = 37.0;
  std::vector<double> grad(params.size(), 0.0);
  const double loss = sample_loss_and_grad(net, params, x, t, target, weight, grad);
  CHECK(std::isfinite(loss));

  std::vector<double> scratch(params.size());
  auto loss_at = [&](const std::vector<double>& p) {
    std::fill(scratch.begin(), scratch.end(), 0.0);
    return sample_loss_and_grad(net, p, x, t, target, weight, scratch);
  };
  // Every layer's first and last parameter plus a random sample.
  std::vector<std::size_t> probe;
  for (const auto& l : net.layers()) {
    probe.push_back(l.offset);
    probe.push_back(l.offset + l.size - 1);
  }
  for (int k = 0; k < 60; ++k) probe.push_back(rng.below(params.size()));
  const double h = 1e-5;
  int bad = 0;
  for (std::size_t i : probe) {
    auto p = params;
    p[i] = params[i] + h;
    const double up = loss_at(p);
    p[i] = params[i] - h;
    const double down = loss_at(p);
    const double fd = (up - down) / (2.0 * h);
    const double scale = std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
    if (std::abs(fd - grad[i]) / scale > 1e-4) {
      ++bad;
      MESSAGE("param " << i << " analytic " << grad[i] << " fd " << fd);
    }
  }
  CHECK(bad == 0);
}

TEST_CASE("time embedding is bounded and distinguishes steps") {
  const auto a = nn::time_embedding<double>(0.0, 16);
  const auto b = nn::time_embedding<double>(500.0, 16);
  REQUIRE(a.size() == 16);
  double diff = 0.0;
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(std::abs(a[i]) <= 1.0);
    diff += std::abs(a[i] - b[i]);
  }
  CHECK(diff > 0.1);
}

TEST_CASE("weights save and load") {
  const auto dir = test::temp_dir("weights");
  NeuralDenoiser den(tiny_config(), 9);
  Rng rng(10);
  for (auto& w : den.weights()) w = static_cast<float>(rng.normal());
  for (auto& w : den.ema_weights()) w = static_cast<float>(rng.normal());
  den.save(dir / "model");
  const NeuralDenoiser back = NeuralDenoiser::load(dir / "model");
  CHECK(back.weights() == den.weights());
  CHECK(back.ema_weights() == den.ema_weights());
  CHECK(to_json(back.config()) == to_json(den.config()));
  CHECK(test::error_code_of([&] { NeuralDenoiser::load(dir / "missing"); }) == ErrorCode::IoError);
}

namespace {

std::vector<TrainingCase> identity_dataset(std::size_t n, Dims dims, std::uint64_t seed) {
  std::vector<TrainingCase> ds;
  for (std::size_t k = 0; k < n; ++k) {
    Rng rng(seed, {k});
    const Volume c = gaussian_filter(gaussian_field(dims, rng), 1.5, 4, Boundary::replicate);
    ds.push_back({c, {c}, Mask(dims, true)});
  }
  return ds;
}

}  // namespace

TEST_CASE("EMA with zero decay tracks the weights") {
  NeuralDenoiser den(tiny_config(1), 11);
  TrainConfig tc;
  tc.ema_decay = 0.0;
  tc.batch_size = 2;
  tc.total_samples = 6;
  tc.learning_rate = 1e-3;
  train(den, identity_dataset(2, {8, 8, 8}, 1), tc, NoiseSchedule::linear(50));
  CHECK(den.ema_weights() == den.weights());
}

TEST_CASE("unit background weight reduces to the unmasked squared error") {
  nn::UNetConfig cfg;
  cfg.in_channels = 2;
  cfg.channels = {2, 3, 4};
  cfg.time_embedding = 4;
  const nn::UNet<double> net(cfg);
  std::vector<double> params(net.parameter_count());
  Rng rng(12);
  for (auto& p : params) p = 0.2 * rng.normal();
  nn::Tensor<double> x(2, 4, 8);
  for (auto& v : x.data) v = rng.normal();
  std::vector<double> target(32), ones(32, 1.0);
  for (auto& v : target) v = rng.normal();
  std::vector<double> grad(params.size(), 0.0);
  const double loss = sample_loss_and_grad(net, params, x, 3.0, target, ones, grad);
  const auto out = net.forward(params, x, 3.0);
  double plain = 0.0;
  for (std::size_t i = 0; i < 32; ++i) plain += (out[i] - target[i]) * (out[i] - target[i]);
  CHECK(loss == doctest::Approx(plain / 32.0).epsilon(1e-12));
}

TEST_CASE("training is deterministic and lowers the loss") {
  const auto ds = identity_dataset(3, {12, 12, 12}, 2);
  const auto sch = NoiseSchedule::linear(100);
  TrainConfig tc;
  tc.learning_rate = 3e-3;
  tc.batch_size = 4;
  tc.total_samples = 4 * 150;
  tc.seed = 5;
  NeuralDenoiser a(tiny_config(3), 13);
  const auto ra = train(a, ds, tc, sch);
  tc.workers = 3;
  NeuralDenoiser b(tiny_config(3), 13);
  const auto rb = train(b, ds, tc, sch);
  CHECK(ra.loss == rb.loss);
  CHECK(a.weights() == b.weights());
  CHECK(a.ema_weights() == b.ema_weights());
  REQUIRE(ra.loss.size() == 150);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    first += ra.loss[i];
    last += ra.loss[ra.loss.size() - 1 - i];
  }
  CHECK(last < 0.7 * first);
}

TEST_CASE("training config validation and JSON") {
  TrainConfig tc;
  tc.lr_schedule = LrSchedule::cosine;
  tc.seed = 77;
  const TrainConfig back = train_config_from_json(to_json(tc));
  CHECK(back.lr_schedule == LrSchedule::cosine);
  CHECK(back.seed == 77);
  CHECK(back.total_samples == tc.total_samples);
  CHECK(test::error_code_of([] { train_config_from_json({{"ema_decay", 1.0}}); }) == ErrorCode::InvalidParam);
  CHECK(test::error_code_of([] { train_config_from_json({{"learning_rate", 0.0}}); }) == ErrorCode::InvalidParam);
  NeuralDenoiser den(tiny_config(1), 1);
  CHECK(test::error_code_of([&] { train(den, {}, TrainConfig{}, NoiseSchedule::linear(10)); }) == ErrorCode::EmptyInput);
}
