#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "yoda/cli.hpp"
#include "yoda/denoiser.hpp"
#include "yoda/error.hpp"
#include "yoda/harmonize.hpp"
#include "yoda/metrics.hpp"
#include "yoda/noise.hpp"
#include "yoda/phantom.hpp"
#include "yoda/sampler.hpp"
#include "yoda/schedule.hpp"

namespace py = pybind11;
using namespace yoda;
using nlohmann::json;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Dims dims_of(const py::buffer_info& b) {
  if (b.ndim != 3) throw py::value_error("expected a 3D array (d, h, w)");
  return {static_cast<std::size_t>(b.shape[0]), static_cast<std::size_t>(b.shape[1]),
          static_cast<std::size_t>(b.shape[2])};
}

Volume to_volume(const FloatArray& a) {
  const auto b = a.request();
  const auto* p = static_cast<const float*>(b.ptr);
  return Volume(dims_of(b), std::vector<float>(p, p + b.size));
}

Mask to_mask(const py::array& a) {
  const ByteArray bytes = py::array::ensure(a.attr("astype")("uint8"));
  const auto b = bytes.request();
  const auto* p = static_cast<const std::uint8_t*>(b.ptr);
  return Mask(dims_of(b), std::vector<std::uint8_t>(p, p + b.size));
}

py::array_t<float> to_array(const Volume& v) {
  const Dims& d = v.dims();
  py::array_t<float> out({d.d, d.h, d.w});
  std::copy(v.data().begin(), v.data().end(), out.mutable_data());
  return out;
}

py::array_t<bool> to_array(const Mask& m) {
  const Dims& d = m.dims();
  py::array_t<bool> out({d.d, d.h, d.w});
  bool* dst = out.mutable_data();
  for (std::size_t i = 0; i < m.size(); ++i) dst[i] = m[i];
  return out;
}

std::vector<Volume> to_volumes(const std::vector<FloatArray>& arrays) {
  std::vector<Volume> out;
  out.reserve(arrays.size());
  for (const auto& a : arrays) out.push_back(to_volume(a));
  return out;
}

Axis axis_of(const std::string& name) {
  if (name == "axial") return Axis::axial;
  if (name == "coronal") return Axis::coronal;
  if (name == "sagittal") return Axis::sagittal;
  throw py::value_error("axis must be axial|coronal|sagittal");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Diffusion image-translation lab: schedules, samplers, metrics and phantoms";

  py::register_exception<Error>(m, "YodaError", PyExc_ValueError);

  m.def(
      "alpha_bars",
      [](const std::string& schedule_json) { return NoiseSchedule::from_json(json::parse(schedule_json)).alpha_bars(); },
      py::arg("schedule_json"));

  m.def(
      "add_noise",
      [](const FloatArray& x, float sigma, const std::string& kind, std::uint64_t seed, bool relative) {
        NoiseParams p{sigma, kind == "gaussian" ? NoiseKind::gaussian : NoiseKind::rician, seed, relative};
        if (kind != "gaussian" && kind != "rician") throw py::value_error("kind must be rician|gaussian");
        return to_array(add_noise(to_volume(x), p));
      },
      py::arg("x"), py::arg("sigma"), py::arg("kind") = "rician", py::arg("seed") = 0, py::arg("relative") = false);

  m.def(
      "rms_average", [](const std::vector<FloatArray>& vs) { return to_array(rms_average(to_volumes(vs))); },
      py::arg("volumes"));
  m.def(
      "mean_average", [](const std::vector<FloatArray>& vs) { return to_array(mean_average(to_volumes(vs))); },
      py::arg("volumes"));
  m.def(
      "estimate_wm_noise", [](const FloatArray& x, const py::array& wm) { return estimate_wm_noise(to_volume(x), to_mask(wm)); },
      py::arg("x"), py::arg("wm_mask"));

  m.def(
      "ssim3d", [](const FloatArray& a, const FloatArray& b, const py::array& mask) { return ssim3d(to_volume(a), to_volume(b), to_mask(mask)); },
      py::arg("prediction"), py::arg("reference"), py::arg("mask"));
  m.def(
      "psnr", [](const FloatArray& a, const FloatArray& b, const py::array& mask) { return psnr(to_volume(a), to_volume(b), to_mask(mask)); },
      py::arg("prediction"), py::arg("reference"), py::arg("mask"));
  m.def(
      "mse", [](const FloatArray& a, const FloatArray& b, const py::array& mask) { return mse(to_volume(a), to_volume(b), to_mask(mask)); },
      py::arg("prediction"), py::arg("reference"), py::arg("mask"));

  m.def(
      "generate_phantom",
      [](const std::string& spec_json) {
        const PhantomCase pc = generate(phantom_spec_from_json(json::parse(spec_json)));
        py::dict out;
        py::list conds;
        for (const auto& c : pc.conditions) conds.append(to_array(c));
        out["conditions"] = conds;
        out["target_clean"] = to_array(pc.target_clean);
        out["target_noisy"] = to_array(pc.target_noisy);
        out["translation"] = to_array(pc.translation);
        out["tissue"] = to_array(pc.tissue);
        out["wm"] = to_array(pc.wm);
        out["lesion"] = to_array(pc.lesion);
        return out;
      },
      py::arg("spec_json"));

  m.def(
      "sample_oracle",
      [](const FloatArray& mean, const std::vector<FloatArray>& conditions, double prior_var,
         const std::string& sampler_json, const std::string& schedule_json, int workers) {
        const OracleGaussianDenoiser den(to_volume(mean), prior_var);
        SamplerConfig cfg = sampler_config_from_json(json::parse(sampler_json));
        cfg.workers = workers;
        const NoiseSchedule sch = NoiseSchedule::from_json(json::parse(schedule_json));
        SampleResult r;
        {
          py::gil_scoped_release release;
          r = sample(den, to_volumes(conditions), cfg, sch);
        }
        return py::make_tuple(to_array(r.output), r.nfe);
      },
      py::arg("mean"), py::arg("conditions"), py::arg("prior_var"), py::arg("sampler_json"), py::arg("schedule_json"),
      py::arg("workers") = 1);

  m.def(
      "nfe_count",
      [](const std::string& sampler_json, std::size_t steps, std::size_t views) {
        return nfe_count(sampler_config_from_json(json::parse(sampler_json)), steps, views);
      },
      py::arg("sampler_json"), py::arg("steps"), py::arg("regression_views") = 3);

  m.def(
      "harmonize",
      [](const FloatArray& x, const std::string& axis, const std::string& variant, double learning_rate,
         std::size_t max_steps, double penalty, std::optional<py::array> foreground) {
        HarmonizeConfig cfg;
        cfg.learning_rate = learning_rate;
        cfg.max_steps = max_steps;
        cfg.penalty = penalty;
        if (foreground) cfg.foreground = to_mask(*foreground);
        const HarmonizeResult r = harmonize_slices(to_volume(x), axis_of(axis), cfg, gamma_variant_from_string(variant));
        return py::make_tuple(to_array(r.corrected), r.objective);
      },
      py::arg("x"), py::arg("axis") = "axial", py::arg("variant") = "generalized", py::arg("learning_rate") = 10.0,
      py::arg("max_steps") = 2000, py::arg("penalty") = HarmonizeConfig{}.penalty, py::arg("foreground") = py::none());

  m.def(
      "adjacent_slice_mse",
      [](const FloatArray& x, const std::string& axis, std::optional<py::array> foreground) {
        std::optional<Mask> fg;
        if (foreground) fg = to_mask(*foreground);
        return adjacent_slice_mse(to_volume(x), axis_of(axis), fg);
      },
      py::arg("x"), py::arg("axis") = "axial", py::arg("foreground") = py::none());

  m.def(
      "run_cli", [](const std::vector<std::string>& args) { return cli::run(args); }, py::arg("args"));
}
