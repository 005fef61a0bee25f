#include "yoda/neural_denoiser.hpp"

#include <cmath>
#include <numbers>
#include <cstring>
#include <fstream>

#include "yoda/error.hpp"
#include "yoda/parallel.hpp"
#include "yoda/rng.hpp"

namespace yoda {

namespace {

std::size_t round_up4(std::size_t n) { return (n + 3) / 4 * 4; }

nn::UNetConfig unet_config(const NeuralConfig& c) {
  if (c.slab_width % 2 == 0) throw Error(ErrorCode::InvalidSlabWidth, "network slab width must be odd");
  return {c.in_channels(), c.channels, c.time_embedding};
}

template <typename S>
void pad_plane_into(std::span<const float> plane, std::size_t rows, std::size_t cols, S* dst, std::size_t prow,
                    std::size_t pcol, double gain = 1.0) {
  for (std::size_t y = 0; y < prow; ++y) {
    const std::size_t sy = std::min(y, rows - 1);
    for (std::size_t x = 0; x < pcol; ++x) {
      dst[y * pcol + x] = static_cast<S>(gain * plane[sy * cols + std::min(x, cols - 1)]);
    }
  }
}

template <typename S>
nn::Tensor<S> build_input(const Slab& latent, const std::vector<Slab>& conditions, std::size_t rows,
                          std::size_t cols, double latent_gain) {
  const std::size_t prow = round_up4(rows);
  const std::size_t pcol = round_up4(cols);
  const std::size_t n = latent.n_slices;
  nn::Tensor<S> t(n * (1 + conditions.size()), prow, pcol);
  std::size_t ch = 0;
  for (std::size_t k = 0; k < n; ++k, ++ch) {
    pad_plane_into(latent.slice(k), rows, cols, t.data.data() + ch * t.plane(), prow, pcol, latent_gain);
  }
  for (const auto& c : conditions) {
    for (std::size_t k = 0; k < n; ++k, ++ch) {
      pad_plane_into(c.slice(k), rows, cols, t.data.data() + ch * t.plane(), prow, pcol);
    }
  }
  return t;
}

double latent_gain(const NeuralConfig& c, const NoiseSchedule& sch, std::size_t t) {
  return c.scale_latent ? std::sqrt(sch.alpha_bar(t)) : 1.0;
}

}  // namespace

NeuralDenoiser::NeuralDenoiser(NeuralConfig config, std::uint64_t init_seed)
    : config_(config), net_(unet_config(config)), weights_(net_.parameter_count()) {
  net_.init(weights_, init_seed);
  ema_ = weights_;
}

nn::Tensor<float> make_network_input(const DenoiserInput& in, double latent_gain) {
  validate_input(in);
  const auto& d = in.latent.data.dims();
  return build_input<float>(in.latent, in.conditions, d.h, d.w, latent_gain);
}

Prediction NeuralDenoiser::predict(const DenoiserInput& in, const NoiseSchedule& sch) const {
  if (in.latent.n_slices != config_.slab_width || in.conditions.size() != config_.n_conditions) {
    throw Error(ErrorCode::DimMismatch, "denoiser input does not match network configuration");
  }
  if (in.t >= sch.steps()) throw Error(ErrorCode::IndexOutOfRange, "time step outside schedule");
  const auto x = make_network_input(in, latent_gain(config_, sch, in.t));
  const auto& params = use_ema_ ? ema_ : weights_;
  const auto out = net_.forward(params, x, static_cast<double>(in.t));
  const auto& d = in.latent.data.dims();
  Volume plane({1, d.h, d.w}, in.latent.data.spacing());
  for (std::size_t y = 0; y < d.h; ++y) {
    for (std::size_t xx = 0; xx < d.w; ++xx) plane[y * d.w + xx] = out[y * x.w + xx];
  }
  return {config_.output_kind, std::move(plane)};
}

// --- training ---------------------------------------------------------------

namespace {

template <typename S>
double loss_and_grad(const nn::UNet<S>& net, std::span<const S> params, const nn::Tensor<S>& input, double t,
                     std::span<const double> target, std::span<const double> weight, std::size_t rows,
                     std::size_t cols, double scale, std::span<S> grad) {
  thread_local typename nn::UNet<S>::Tape tape;
  const auto out = net.forward(params, input, t, tape);
  std::vector<S> d_out(out.size(), S(0));
  const double n = static_cast<double>(rows * cols);
  double loss = 0.0;
  for (std::size_t y = 0; y < rows; ++y) {
    for (std::size_t x = 0; x < cols; ++x) {
      const std::size_t i = y * cols + x;
      const double diff = static_cast<double>(out[y * input.w + x]) - target[i];
      loss += weight[i] * diff * diff;
      d_out[y * input.w + x] = static_cast<S>(scale * 2.0 * weight[i] * diff / n);
    }
  }
  net.backward(params, tape, d_out, grad);
  return loss / n;
}

struct SliceSample {
  nn::Tensor<float> input;
  std::vector<double> target;
  std::vector<double> weight;
  std::size_t rows = 0, cols = 0;
  std::size_t t = 0;
};

SliceSample draw_sample(const std::vector<TrainingCase>& dataset, const std::vector<RoiBox>& rois,
                        const std::vector<Volume>& masks, const NeuralConfig& nc, const TrainConfig& cfg, const NoiseSchedule& sch, std::size_t step,
                        std::size_t b) {
  Rng rng(cfg.seed, {0x7261696EULL, step, b});
  const std::size_t ci = rng.below(dataset.size());
  const auto axis = static_cast<Axis>(rng.below(3));
  const auto& roi = rois[ci];
  const auto a = static_cast<std::size_t>(axis);
  const std::size_t index = roi.lo[a] + rng.below(roi.hi[a] - roi.lo[a]);
  const std::size_t t = rng.below(sch.steps());
  const auto& c = dataset[ci];

  const Slab x_slab = extract_slab(c.target, axis, index, nc.slab_width);
  std::vector<Slab> cond;
  cond.reserve(c.conditions.size());
  for (const auto& v : c.conditions) cond.push_back(extract_slab(v, axis, index, nc.slab_width));
  const Slab m_slab = extract_slab(masks[ci], axis, index, 1);

  const double ab = sch.alpha_bar(t);
  const double sa = std::sqrt(ab);
  const double sb = std::sqrt(1.0 - ab);
  Slab latent = x_slab;
  std::vector<double> eps(x_slab.data.size());
  for (std::size_t i = 0; i < eps.size(); ++i) {
    eps[i] = rng.normal();
    latent.data[i] = static_cast<float>(sa * x_slab.data[i] + sb * eps[i]);
  }

  SliceSample s;
  s.rows = x_slab.data.dims().h;
  s.cols = x_slab.data.dims().w;
  s.t = t;
  const std::size_t plane = s.rows * s.cols;
  const std::size_t center = (nc.slab_width / 2) * plane;
  s.target.resize(plane);
  s.weight.resize(plane);
  const auto x0 = x_slab.center();
  const auto mask = m_slab.center();
  for (std::size_t i = 0; i < plane; ++i) {
    switch (nc.output_kind) {
      case PredictionKind::v: s.target[i] = sa * eps[center + i] - sb * x0[i]; break;
      case PredictionKind::epsilon: s.target[i] = eps[center + i]; break;
      case PredictionKind::x0: s.target[i] = x0[i]; break;
    }
    s.weight[i] = mask[i] > 0.5F ? 1.0 : cfg.background_weight;
  }
  s.input = build_input<float>(latent, cond, s.rows, s.cols, latent_gain(nc, sch, t));
  return s;
}

void check_train_config(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw Error(ErrorCode::InvalidParam, "learning rate must be > 0");
  if (!(cfg.ema_decay >= 0.0 && cfg.ema_decay < 1.0)) throw Error(ErrorCode::InvalidParam, "EMA decay in [0,1)");
  if (!(cfg.background_weight >= 0.0 && cfg.background_weight <= 1.0)) {
    throw Error(ErrorCode::InvalidParam, "background weight in [0,1]");
  }
  if (cfg.batch_size == 0) throw Error(ErrorCode::InvalidParam, "batch size must be > 0");
}

}  // namespace

double sample_loss_and_grad(const nn::UNet<double>& net, std::span<const double> params,
                            const nn::Tensor<double>& input, double t, std::span<const double> target,
                            std::span<const double> weight, std::span<double> grad) {
  return loss_and_grad<double>(net, params, input, t, target, weight, input.h, input.w, 1.0, grad);
}

TrainResult train(NeuralDenoiser& model, const std::vector<TrainingCase>& dataset, const TrainConfig& cfg,
                  const NoiseSchedule& sch) {
  check_train_config(cfg);
  if (dataset.empty()) throw Error(ErrorCode::EmptyInput, "training dataset is empty");
  const auto& nc = model.config();
  std::vector<RoiBox> rois;
  std::vector<Volume> masks;
  for (const auto& c : dataset) {
    masks.push_back(c.loss_mask.to_volume());
    if (c.conditions.size() != nc.n_conditions) throw Error(ErrorCode::DimMismatch, "condition count");
    for (const auto& v : c.conditions) require_same_dims(c.target.dims(), v.dims(), "training case");
    require_same_dims(c.target.dims(), c.loss_mask.dims(), "training loss mask");
    rois.push_back(c.loss_mask.empty() ? RoiBox{{0, 0, 0}, {c.target.dims().d, c.target.dims().h, c.target.dims().w}}
                                       : roi_from_mask(c.loss_mask, {0, 0, 0}));
  }

  const auto& net = model.network();
  auto& w = model.weights();
  auto& ema = model.ema_weights();
  const std::size_t n_params = w.size();
  std::vector<double> m1(n_params, 0.0), m2(n_params, 0.0);
  std::vector<nn::Buffer<float>> grads(cfg.batch_size, nn::Buffer<float>(n_params));
  std::vector<double> losses(cfg.batch_size);
  std::vector<double> total(n_params);

  TrainResult result;
  const std::size_t steps = cfg.steps();
  result.loss.reserve(steps);
  const double scale = 1.0 / static_cast<double>(cfg.batch_size);
  for (std::size_t step = 0; step < steps; ++step) {
    parallel_for(cfg.batch_size, cfg.workers, [&](std::size_t b) {
      const auto s = draw_sample(dataset, rois, masks, nc, cfg, sch, step, b);
      std::fill(grads[b].begin(), grads[b].end(), 0.0F);
      losses[b] = loss_and_grad<float>(net, w, s.input, static_cast<double>(s.t), s.target, s.weight, s.rows,
                                       s.cols, scale, grads[b]);
    });
    double loss = 0.0;
    std::fill(total.begin(), total.end(), 0.0);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      loss += losses[b] * scale;
      for (std::size_t i = 0; i < n_params; ++i) total[i] += grads[b][i];
    }
    if (!std::isfinite(loss)) throw TrainingDiverged(static_cast<long>(step), "non-finite training loss");
    result.loss.push_back(loss);

    const double k = static_cast<double>(step + 1);
    const double lr = cfg.lr_schedule == LrSchedule::cosine
                          ? 0.5 * cfg.learning_rate *
                                (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(steps)))
                          : cfg.learning_rate;
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, k);
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, k);
    // Warm-up on the shadow decay so early averages are not dominated by the init.
    const double decay = std::min(cfg.ema_decay, (1.0 + k) / (10.0 + k));
    for (std::size_t i = 0; i < n_params; ++i) {
      const double g = total[i];
      m1[i] = cfg.adam_beta1 * m1[i] + (1.0 - cfg.adam_beta1) * g;
      m2[i] = cfg.adam_beta2 * m2[i] + (1.0 - cfg.adam_beta2) * g * g;
      const double upd = lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + cfg.adam_eps);
      w[i] = static_cast<float>(w[i] - upd);
      ema[i] = static_cast<float>(decay * ema[i] + (1.0 - decay) * w[i]);
    }
  }
  return result;
}

void write_loss_csv(const TrainResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "step,loss\n";
  out.precision(9);
  for (std::size_t i = 0; i < result.loss.size(); ++i) out << i << ',' << result.loss[i] << '\n';
}

// --- serialization ----------------------------------------------------------

nlohmann::json to_json(const NeuralConfig& c) {
  return {{"slab_width", c.slab_width},
          {"n_conditions", c.n_conditions},
          {"channels", c.channels},
          {"time_embedding", c.time_embedding},
          {"output_kind", to_string(c.output_kind)},
          {"scale_latent", c.scale_latent}};
}

NeuralConfig neural_config_from_json(const nlohmann::json& j) {
  NeuralConfig c;
  c.slab_width = j.value("slab_width", c.slab_width);
  c.n_conditions = j.value("n_conditions", c.n_conditions);
  if (j.contains("channels")) c.channels = j.at("channels").get<std::array<std::size_t, 3>>();
  c.time_embedding = j.value("time_embedding", c.time_embedding);
  c.output_kind = prediction_kind_from_string(j.value("output_kind", std::string("v")));
  c.scale_latent = j.value("scale_latent", c.scale_latent);
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"lr_schedule", c.lr_schedule == LrSchedule::cosine ? "cosine" : "constant"},
          {"batch_size", c.batch_size},
          {"ema_decay", c.ema_decay},
          {"background_weight", c.background_weight},
          {"total_samples", c.total_samples},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  const std::string schedule = j.value("lr_schedule", std::string("constant"));
  if (schedule == "cosine") {
    c.lr_schedule = LrSchedule::cosine;
  } else if (schedule != "constant") {
    throw Error(ErrorCode::InvalidParam, "lr_schedule must be constant|cosine");
  }
  c.batch_size = j.value("batch_size", c.batch_size);
  c.ema_decay = j.value("ema_decay", c.ema_decay);
  c.background_weight = j.value("background_weight", c.background_weight);
  c.total_samples = j.value("total_samples", c.total_samples);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.seed = j.value("seed", c.seed);
  check_train_config(c);
  return c;
}

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return stem.string() + suffix;
}

void write_floats(std::ofstream& out, std::span<const float> v) {
  for (float f : v) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    const char bytes[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                           static_cast<char>((bits >> 16) & 0xFF), static_cast<char>((bits >> 24) & 0xFF)};
    out.write(bytes, 4);
  }
}

}  // namespace

void NeuralDenoiser::save(const std::filesystem::path& stem) const {
  nlohmann::json manifest;
  manifest["format"] = "yoda-weights-1";
  manifest["config"] = to_json(config_);
  manifest["parameter_count"] = weights_.size();
  manifest["ema"] = true;
  manifest["blob"] = with_suffix(stem, ".bin").filename().string();
  auto& layers = manifest["layers"];
  layers = nlohmann::json::array();
  for (const auto& l : net_.layers()) {
    layers.push_back({{"name", l.name}, {"shape", l.shape}, {"offset", l.offset}});
  }
  std::ofstream blob(with_suffix(stem, ".bin"), std::ios::binary | std::ios::trunc);
  if (!blob) throw Error(ErrorCode::IoError, "cannot write weights blob");
  write_floats(blob, weights_);
  write_floats(blob, ema_);
  std::ofstream meta(with_suffix(stem, ".json"));
  meta << manifest.dump(2) << '\n';
}

NeuralDenoiser NeuralDenoiser::load(const std::filesystem::path& stem) {
  std::ifstream meta(with_suffix(stem, ".json"));
  if (!meta) throw Error(ErrorCode::IoError, "cannot read weights manifest " + with_suffix(stem, ".json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, e.what());
  }
  NeuralDenoiser model(neural_config_from_json(manifest.at("config")), 0);
  const std::size_t n = model.weights_.size();
  if (manifest.value("parameter_count", std::size_t{0}) != n) {
    throw Error(ErrorCode::FormatError, "weights manifest parameter count mismatch");
  }
  const bool has_ema = manifest.value("ema", false);
  std::ifstream blob(with_suffix(stem, ".bin"), std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
  if (bytes.size() != 4 * n * (has_ema ? 2 : 1)) throw Error(ErrorCode::FormatError, "weights blob size mismatch");
  auto read = [&](std::size_t off, nn::Buffer<float>& dst) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + 4 * (off + i));
      const std::uint32_t bits = p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
      std::memcpy(&dst[i], &bits, 4);
    }
  };
  read(0, model.weights_);
  if (has_ema) {
    read(n, model.ema_);
  } else {
    model.ema_ = model.weights_;
  }
  return model;
}

}  // namespace yoda
