#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "yoda/denoiser.hpp"
#include "yoda/nn.hpp"

namespace yoda {

struct NeuralConfig {
  std::size_t slab_width = 5;
  std::size_t n_conditions = 2;
  std::array<std::size_t, 3> channels{16, 32, 64};
  std::size_t time_embedding = 32;
  PredictionKind output_kind = PredictionKind::v;
  /// Feed sqrt(alpha_bar_t) * x_t instead of x_t so the latent fades out at high t.
  bool scale_latent = true;

  std::size_t in_channels() const noexcept { return slab_width * (1 + n_conditions); }
};

/// Toy 2.5D network: one model serves every slicing axis. Planes whose sides
/// are not multiples of 4 are edge-padded internally and cropped back.
class NeuralDenoiser final : public Denoiser {
 public:
  NeuralDenoiser(NeuralConfig config, std::uint64_t init_seed);

  PredictionKind output_kind() const override { return config_.output_kind; }
  std::size_t slab_width() const override { return config_.slab_width; }
  Prediction predict(const DenoiserInput& in, const NoiseSchedule& sch) const override;

  const NeuralConfig& config() const noexcept { return config_; }
  const nn::UNet<float>& network() const noexcept { return net_; }

  nn::Buffer<float>& weights() noexcept { return weights_; }
  const nn::Buffer<float>& weights() const noexcept { return weights_; }
  nn::Buffer<float>& ema_weights() noexcept { return ema_; }
  const nn::Buffer<float>& ema_weights() const noexcept { return ema_; }

  /// predict() reads the EMA shadow when set (the default).
  void set_use_ema(bool use) noexcept { use_ema_ = use; }
  bool use_ema() const noexcept { return use_ema_; }

  /// Flat f32 blob (weights then EMA shadow) plus a JSON manifest next to it.
  void save(const std::filesystem::path& stem) const;
  static NeuralDenoiser load(const std::filesystem::path& stem);

 private:
  NeuralConfig config_;
  nn::UNet<float> net_;
  nn::Buffer<float> weights_;
  nn::Buffer<float> ema_;
  bool use_ema_ = true;
};

/// Network input tensor for a denoiser input: latent slices then each
/// condition's slices, planes edge-padded to multiples of 4. Latent values are
/// multiplied by latent_gain.
nn::Tensor<float> make_network_input(const DenoiserInput& in, double latent_gain = 1.0);

enum class LrSchedule { constant, cosine };

struct TrainConfig {
  double learning_rate = 1e-4;
  /// cosine anneals the rate from learning_rate to 0 over the run.
  LrSchedule lr_schedule = LrSchedule::constant;
  std::size_t batch_size = 8;
  double ema_decay = 0.999;
  double background_weight = 0.01;
  std::size_t total_samples = 16000;  ///< slice samples; steps = total_samples / batch_size
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int workers = 1;

  std::size_t steps() const noexcept { return total_samples / std::max<std::size_t>(1, batch_size); }
};

struct TrainingCase {
  Volume target;
  std::vector<Volume> conditions;
  Mask loss_mask;
};

struct TrainResult {
  std::vector<double> loss;  ///< one entry per optimizer step
};

/// Gradient of the masked squared error for one slice sample, exposed for
/// gradient checks: returns the loss and accumulates into grad.
double sample_loss_and_grad(const nn::UNet<double>& net, std::span<const double> params,
                            const nn::Tensor<double>& input, double t, std::span<const double> target,
                            std::span<const double> weight, std::span<double> grad);

TrainResult train(NeuralDenoiser& model, const std::vector<TrainingCase>& dataset, const TrainConfig& cfg,
                  const NoiseSchedule& sch);

void write_loss_csv(const TrainResult& result, const std::filesystem::path& path);

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NeuralConfig& cfg);
NeuralConfig neural_config_from_json(const nlohmann::json& j);

}  // namespace yoda
