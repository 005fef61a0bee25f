#include "yoda/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "yoda/error.hpp"
#include "yoda/filter.hpp"
#include "yoda/rng.hpp"

namespace yoda {

namespace {

constexpr std::uint64_t kTextureTag = 0x54455854ULL;
constexpr std::uint64_t kBiasTag = 0x42494153ULL;
constexpr std::uint64_t kNoiseTag = 0x4E4F4953ULL;
constexpr std::uint64_t kConditionalTag = 0x434F4E44ULL;
constexpr std::uint64_t kGeometryTag = 0x47454F4DULL;

bool positive(const std::array<double, 3>& r) { return r[0] > 0 && r[1] > 0 && r[2] > 0; }

void validate(const PhantomSpec& s) {
  const auto bad = [](const std::string& why) { throw Error(ErrorCode::InvalidSpec, why); };
  if (s.grid.d < 2 || s.grid.h < 2 || s.grid.w < 2) bad("grid must be at least 2 in each axis");
  if (!(s.spacing.x > 0 && s.spacing.y > 0 && s.spacing.z > 0)) bad("spacing must be positive");
  if (!positive(s.outer.radii) || !positive(s.inner.radii)) bad("ellipsoid radii must be positive");
  for (int k = 0; k < 3; ++k) {
    if (s.inner.radii[k] >= s.outer.radii[k]) bad("inner ellipsoid must be nested inside the outer one");
  }
  const std::array<std::size_t, 3> ext{s.grid.d, s.grid.h, s.grid.w};
  for (int k = 0; k < 3; ++k) {
    if (s.outer.center[k] < 0 || s.outer.center[k] >= static_cast<double>(ext[k])) bad("center outside grid");
    if (s.inner.center[k] < 0 || s.inner.center[k] >= static_cast<double>(ext[k])) bad("center outside grid");
  }
  if (s.conditions.empty()) bad("at least one condition modality is required");
  if (s.translation.k.size() != 4) bad("translation needs four coefficients");
  if (!s.condition_noise.empty() && s.condition_noise.size() != s.conditions.size()) {
    bad("condition_noise must be empty or match the condition count");
  }
  for (const auto& l : s.lesions) {
    if (!(l.radius_mm > 0)) bad("lesion radius must be positive");
    if (!l.condition_delta.empty() && l.condition_delta.size() != s.conditions.size()) {
      bad("lesion condition_delta must match the condition count");
    }
  }
  for (const auto& m : s.conditions) {
    for (double v : m.tissue) {
      if (v < 0.0 || v > 1.0) bad("tissue intensities must lie in [0, 1]");
    }
  }
  if (s.edge_sigma < 0 || s.texture_amplitude < 0 || s.texture_sigma < 0 || s.bias_amplitude < 0 ||
      s.conditional_std < 0) {
    bad("smoothing, texture, bias and conditional_std must be non-negative");
  }
}

double ellipsoid_r2(const Ellipsoid& e, double z, double y, double x) {
  const double a = (z - e.center[0]) / e.radii[0];
  const double b = (y - e.center[1]) / e.radii[1];
  const double c = (x - e.center[2]) / e.radii[2];
  return a * a + b * b + c * c;
}

Volume smooth(const Volume& v, double sigma) {
  if (sigma <= 0.0) return v;
  return gaussian_filter(v, sigma, static_cast<int>(std::ceil(3.0 * sigma)), Boundary::replicate);
}

NoiseParams keyed(const NoiseParams& p, std::uint64_t root, std::uint64_t slot) {
  NoiseParams q = p;
  q.seed = derive_seed(root, {kNoiseTag, slot, p.seed});
  return q;
}

nlohmann::json to_json(const NoiseParams& p) {
  return {{"sigma", p.sigma},
          {"kind", p.kind == NoiseKind::rician ? "rician" : "gaussian"},
          {"seed", p.seed},
          {"relative", p.relative}};
}

NoiseParams noise_from_json(const nlohmann::json& j) {
  NoiseParams p;
  p.sigma = j.value("sigma", 0.0F);
  const std::string kind = j.value("kind", std::string("rician"));
  if (kind != "rician" && kind != "gaussian") throw Error(ErrorCode::InvalidSpec, "noise kind: rician|gaussian");
  p.kind = kind == "rician" ? NoiseKind::rician : NoiseKind::gaussian;
  p.seed = j.value("seed", std::uint64_t{0});
  p.relative = j.value("relative", false);
  return p;
}

nlohmann::json to_json(const Ellipsoid& e) { return {{"center", e.center}, {"radii", e.radii}}; }

Ellipsoid ellipsoid_from_json(const nlohmann::json& j) {
  Ellipsoid e;
  e.center = j.at("center").get<std::array<double, 3>>();
  e.radii = j.at("radii").get<std::array<double, 3>>();
  return e;
}

}  // namespace

PhantomSpec PhantomSpec::desk_default(Dims grid, std::uint64_t seed, std::size_t n_lesions) {
  PhantomSpec s;
  s.grid = grid;
  s.seed = seed;
  Rng rng(seed, {kGeometryTag});
  const std::array<double, 3> ext{static_cast<double>(grid.d), static_cast<double>(grid.h),
                                  static_cast<double>(grid.w)};
  for (int k = 0; k < 3; ++k) {
    const double c = 0.5 * (ext[k] - 1.0) + (rng.uniform() - 0.5) * 2.0;
    s.outer.center[k] = c;
    s.inner.center[k] = c + (rng.uniform() - 0.5);
    s.outer.radii[k] = 0.42 * ext[k] * (0.95 + 0.1 * rng.uniform());
    s.inner.radii[k] = s.outer.radii[k] * (0.58 + 0.08 * rng.uniform());
  }
  s.conditions = {ModalityContrast{{0.0, 0.55, 0.8}}, ModalityContrast{{0.0, 0.5, 0.35}}};
  for (std::size_t l = 0; l < n_lesions; ++l) {
    LesionSpec les;
    // Uniform direction and radius within 60% of the WM core.
    double u[3];
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& v : u) {
        v = 2.0 * rng.uniform() - 1.0;
        norm += v * v;
      }
    } while (norm > 1.0 || norm == 0.0);
    for (int k = 0; k < 3; ++k) les.center[k] = s.inner.center[k] + 0.6 * u[k] * s.inner.radii[k];
    les.radius_mm = 1.5 + 1.5 * rng.uniform();
    les.condition_delta = {-0.04, 0.05};
    les.target_delta = 0.3;
    s.lesions.push_back(les);
  }
  return s;
}

double translate(const TranslationSpec& t, std::span<const double> c, Tissue cls, double lesion_delta) {
  const double c1 = c.empty() ? 0.0 : c[0];
  const double c2 = c.size() > 1 ? c[1] : 0.0;
  double f = t.k[1] * c1 + t.k[2] * c2 + t.k[3] * c1 * c2;
  if (cls != Tissue::background) f += t.k[0];
  if (cls == Tissue::lesion) f += lesion_delta;
  return std::clamp(f, 0.0, 1.0);
}

PhantomCase generate(const PhantomSpec& spec) {
  validate(spec);
  const Dims dims = spec.grid;
  const Spacing sp = spec.spacing;
  const std::size_t n = dims.size();
  const std::size_t n_mod = spec.conditions.size();

  PhantomCase pc;
  pc.tissue_class.assign(n, 0);
  pc.lesion_labels.assign(n, 0);
  Volume outer(dims, sp), inner(dims, sp);
  std::vector<std::vector<double>> lesion_delta_cond(n_mod, std::vector<double>(n, 0.0));
  for (std::size_t z = 0; z < dims.d; ++z) {
    for (std::size_t y = 0; y < dims.h; ++y) {
      for (std::size_t x = 0; x < dims.w; ++x) {
        const std::size_t i = outer.index(z, y, x);
        const bool in_outer = ellipsoid_r2(spec.outer, z, y, x) <= 1.0;
        const bool in_inner = in_outer && ellipsoid_r2(spec.inner, z, y, x) <= 1.0;
        outer[i] = in_outer ? 1.0F : 0.0F;
        inner[i] = in_inner ? 1.0F : 0.0F;
        Tissue cls = in_inner ? Tissue::wm : (in_outer ? Tissue::gm : Tissue::background);
        if (in_outer) {
          for (std::size_t l = 0; l < spec.lesions.size(); ++l) {
            const auto& les = spec.lesions[l];
            const double dz = (z - les.center[0]) * sp.z;
            const double dy = (y - les.center[1]) * sp.y;
            const double dx = (x - les.center[2]) * sp.x;
            if (dz * dz + dy * dy + dx * dx <= les.radius_mm * les.radius_mm) {
              cls = Tissue::lesion;
              pc.lesion_labels[i] = static_cast<std::uint32_t>(l + 1);
              for (std::size_t m = 0; m < n_mod; ++m) {
                lesion_delta_cond[m][i] = les.condition_delta.empty() ? 0.0 : les.condition_delta[m];
              }
            }
          }
        }
        pc.tissue_class[i] = static_cast<std::uint8_t>(cls);
      }
    }
  }
  if (std::none_of(pc.tissue_class.begin(), pc.tissue_class.end(), [](std::uint8_t c) { return c == 2; })) {
    throw Error(ErrorCode::InvalidSpec, "phantom has no WM voxels");
  }

  const Volume outer_soft = smooth(outer, spec.edge_sigma);
  const Volume inner_soft = smooth(inner, spec.edge_sigma);

  // Quadratic bias field normalised to unit peak magnitude.
  std::vector<double> bias(n, 1.0);
  if (spec.bias_amplitude > 0.0) {
    Rng rng(spec.seed, {kBiasTag});
    std::array<double, 9> q{};
    for (double& v : q) v = 2.0 * rng.uniform() - 1.0;
    std::vector<double> raw(n);
    double peak = 0.0;
    for (std::size_t z = 0; z < dims.d; ++z) {
      for (std::size_t y = 0; y < dims.h; ++y) {
        for (std::size_t x = 0; x < dims.w; ++x) {
          const double u = 2.0 * z / (dims.d - 1.0) - 1.0;
          const double v = 2.0 * y / (dims.h - 1.0) - 1.0;
          const double w = 2.0 * x / (dims.w - 1.0) - 1.0;
          const double val = q[0] * u + q[1] * v + q[2] * w + q[3] * u * u + q[4] * v * v + q[5] * w * w +
                             q[6] * u * v + q[7] * v * w + q[8] * u * w;
          const std::size_t i = (z * dims.h + y) * dims.w + x;
          raw[i] = val;
          peak = std::max(peak, std::abs(val));
        }
      }
    }
    if (peak > 0.0) {
      for (std::size_t i = 0; i < n; ++i) bias[i] = 1.0 + spec.bias_amplitude * raw[i] / peak;
    }
  }

  pc.conditions.reserve(n_mod);
  for (std::size_t m = 0; m < n_mod; ++m) {
    std::vector<double> texture(n, 0.0);
    if (spec.texture_amplitude > 0.0) {
      Rng rng(spec.seed, {kTextureTag, m});
      const Volume field = smooth(gaussian_field(dims, rng, sp), spec.texture_sigma);
      double sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) sq += static_cast<double>(field[i]) * field[i];
      const double sd = std::sqrt(sq / static_cast<double>(n));
      for (std::size_t i = 0; i < n; ++i) texture[i] = sd > 0.0 ? spec.texture_amplitude * field[i] / sd : 0.0;
    }
    const auto& tis = spec.conditions[m].tissue;
    Volume c(dims, sp);
    for (std::size_t i = 0; i < n; ++i) {
      const double f_out = outer_soft[i];
      const double f_wm = std::min<double>(inner_soft[i], f_out);
      const double f_gm = std::max(0.0, f_out - f_wm);
      const double f_bg = 1.0 - f_out;
      const double base = f_bg * tis[0] + f_gm * tis[1] + f_wm * tis[2] + f_out * texture[i];
      c[i] = static_cast<float>(std::clamp(bias[i] * base + lesion_delta_cond[m][i], 0.0, 1.0));
    }
    if (!spec.condition_noise.empty() && spec.condition_noise[m].sigma > 0.0F) {
      c = add_noise(c, keyed(spec.condition_noise[m], spec.seed, m));
    }
    pc.conditions.push_back(std::move(c));
  }

  pc.translation = apply_translation(spec, pc.conditions, pc.tissue_class, pc.lesion_labels);

  pc.target_clean = pc.translation;
  if (spec.conditional_std > 0.0) {
    Rng rng(spec.seed, {kConditionalTag});
    for (std::size_t i = 0; i < n; ++i) {
      pc.target_clean[i] = static_cast<float>(pc.translation[i] + spec.conditional_std * rng.normal());
    }
  }
  pc.target_noisy = spec.target_noise.sigma > 0.0F
                        ? add_noise(pc.target_clean, keyed(spec.target_noise, spec.seed, n_mod))
                        : pc.target_clean;

  pc.tissue = Mask(dims);
  pc.wm = Mask(dims);
  pc.lesion = Mask(dims);
  for (std::size_t i = 0; i < n; ++i) {
    const auto cls = static_cast<Tissue>(pc.tissue_class[i]);
    pc.tissue.set(i, cls != Tissue::background);
    pc.wm.set(i, cls == Tissue::wm);
    pc.lesion.set(i, cls == Tissue::lesion);
  }
  return pc;
}

Volume apply_translation(const PhantomSpec& spec, std::span<const Volume> conditions,
                         const std::vector<std::uint8_t>& tissue_class,
                         const std::vector<std::uint32_t>& lesion_labels) {
  if (conditions.empty()) throw Error(ErrorCode::EmptyInput, "translation needs conditions");
  const std::size_t n = conditions.front().size();
  for (const auto& c : conditions) require_same_dims(conditions.front().dims(), c.dims(), "translation");
  if (tissue_class.size() != n || lesion_labels.size() != n) {
    throw Error(ErrorCode::DimMismatch, "tissue classes and lesion labels must cover the grid");
  }
  Volume out(conditions.front().dims(), conditions.front().spacing());
  std::vector<double> cv(conditions.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t m = 0; m < conditions.size(); ++m) cv[m] = conditions[m][i];
    const std::uint32_t l = lesion_labels[i];
    const double delta = l > 0 && l <= spec.lesions.size() ? spec.lesions[l - 1].target_delta : 0.0;
    out[i] = static_cast<float>(translate(spec.translation, cv, static_cast<Tissue>(tissue_class[i]), delta));
  }
  return out;
}

Volume inject_slice_gamma(const Volume& v, Axis axis, std::span<const GammaParams> pattern, double eps_pos) {
  const std::size_t n = v.dims().along(axis);
  if (pattern.size() != n) throw Error(ErrorCode::DimMismatch, "one gamma pattern entry per slice");
  Volume o = reorient(v, axis);
  const std::size_t plane = o.dims().h * o.dims().w;
  for (std::size_t j = 0; j < n; ++j) {
    auto s = o.data().subspan(j * plane, plane);
    const auto mapped = gamma_apply(s, pattern[j], eps_pos);
    std::copy(mapped.begin(), mapped.end(), s.begin());
  }
  return restore_orientation(o, axis);
}

nlohmann::json to_json(const PhantomSpec& s) {
  nlohmann::json lesions = nlohmann::json::array();
  for (const auto& l : s.lesions) {
    lesions.push_back({{"center", l.center},
                       {"radius_mm", l.radius_mm},
                       {"condition_delta", l.condition_delta},
                       {"target_delta", l.target_delta}});
  }
  nlohmann::json conds = nlohmann::json::array();
  for (const auto& c : s.conditions) conds.push_back({{"tissue", c.tissue}});
  nlohmann::json cnoise = nlohmann::json::array();
  for (const auto& p : s.condition_noise) cnoise.push_back(to_json(p));
  return {{"grid", {s.grid.d, s.grid.h, s.grid.w}},
          {"spacing_mm", {s.spacing.x, s.spacing.y, s.spacing.z}},
          {"outer", to_json(s.outer)},
          {"inner", to_json(s.inner)},
          {"lesions", lesions},
          {"conditions", conds},
          {"translation", {{"k", s.translation.k}}},
          {"edge_sigma", s.edge_sigma},
          {"texture_amplitude", s.texture_amplitude},
          {"texture_sigma", s.texture_sigma},
          {"bias_amplitude", s.bias_amplitude},
          {"condition_noise", cnoise},
          {"target_noise", to_json(s.target_noise)},
          {"conditional_std", s.conditional_std},
          {"seed", s.seed}};
}

PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
  try {
    PhantomSpec s;
    if (j.contains("desk_default")) {
      const auto& d = j.at("desk_default");
      const auto g = d.at("grid").get<std::array<std::size_t, 3>>();
      s = PhantomSpec::desk_default({g[0], g[1], g[2]}, d.value("seed", std::uint64_t{0}),
                                    d.value("n_lesions", std::size_t{3}));
      if (d.contains("target_noise")) s.target_noise = noise_from_json(d.at("target_noise"));
      s.conditional_std = d.value("conditional_std", s.conditional_std);
      validate(s);
      return s;
    }
    const auto g = j.at("grid").get<std::array<std::size_t, 3>>();
    s.grid = {g[0], g[1], g[2]};
    if (j.contains("spacing_mm")) {
      const auto sp = j.at("spacing_mm").get<std::array<float, 3>>();
      s.spacing = {sp[0], sp[1], sp[2]};
    }
    s.outer = ellipsoid_from_json(j.at("outer"));
    s.inner = ellipsoid_from_json(j.at("inner"));
    for (const auto& l : j.value("lesions", nlohmann::json::array())) {
      LesionSpec les;
      les.center = l.at("center").get<std::array<double, 3>>();
      les.radius_mm = l.value("radius_mm", les.radius_mm);
      les.condition_delta = l.value("condition_delta", std::vector<double>{});
      les.target_delta = l.value("target_delta", les.target_delta);
      s.lesions.push_back(les);
    }
    for (const auto& c : j.at("conditions")) s.conditions.push_back({c.at("tissue").get<std::array<double, 3>>()});
    if (j.contains("translation")) s.translation.k = j.at("translation").at("k").get<std::array<double, 4>>();
    s.edge_sigma = j.value("edge_sigma", s.edge_sigma);
    s.texture_amplitude = j.value("texture_amplitude", s.texture_amplitude);
    s.texture_sigma = j.value("texture_sigma", s.texture_sigma);
    s.bias_amplitude = j.value("bias_amplitude", s.bias_amplitude);
    for (const auto& p : j.value("condition_noise", nlohmann::json::array())) {
      s.condition_noise.push_back(noise_from_json(p));
    }
    if (j.contains("target_noise")) s.target_noise = noise_from_json(j.at("target_noise"));
    s.conditional_std = j.value("conditional_std", s.conditional_std);
    s.seed = j.value("seed", s.seed);
    validate(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, std::string("phantom spec: ") + e.what());
  }
}

namespace {

Volume labels_to_volume(const std::vector<std::uint32_t>& labels, Dims dims, Spacing sp) {
  Volume v(dims, sp);
  for (std::size_t i = 0; i < labels.size(); ++i) v[i] = static_cast<float>(labels[i]);
  return v;
}

}  // namespace

nlohmann::json save_case(const PhantomCase& c, const PhantomSpec& spec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json files;
  nlohmann::json conds = nlohmann::json::array();
  for (std::size_t m = 0; m < c.conditions.size(); ++m) {
    const std::string name = "condition_" + std::to_string(m) + ".yvol";
    save(c.conditions[m], dir / name);
    conds.push_back(name);
  }
  files["conditions"] = conds;
  save(c.target_clean, dir / "target_clean.yvol");
  save(c.target_noisy, dir / "target_noisy.yvol");
  save(c.translation, dir / "translation.yvol");
  save(c.tissue, dir / "tissue_mask.yvol");
  save(c.wm, dir / "wm_mask.yvol");
  save(c.lesion, dir / "lesion_mask.yvol");
  save(labels_to_volume(c.lesion_labels, c.target_clean.dims(), c.target_clean.spacing()), dir / "lesion_labels.yvol");
  Volume cls(c.target_clean.dims(), c.target_clean.spacing());
  for (std::size_t i = 0; i < c.tissue_class.size(); ++i) cls[i] = c.tissue_class[i];
  save(cls, dir / "tissue_class.yvol");
  files["target_clean"] = "target_clean.yvol";
  files["target_noisy"] = "target_noisy.yvol";
  files["translation"] = "translation.yvol";
  files["tissue_mask"] = "tissue_mask.yvol";
  files["wm_mask"] = "wm_mask.yvol";
  files["lesion_mask"] = "lesion_mask.yvol";
  files["lesion_labels"] = "lesion_labels.yvol";
  files["tissue_class"] = "tissue_class.yvol";
  nlohmann::json manifest{{"format", "yoda-case-1"}, {"spec", to_json(spec)}, {"files", files}};
  std::ofstream f(dir / "manifest.json");
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + (dir / "manifest.json").string());
  f << manifest.dump(2) << '\n';
  return manifest;
}

namespace {

nlohmann::json read_manifest(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw Error(ErrorCode::IoError, "cannot read " + (dir / "manifest.json").string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("case manifest: ") + e.what());
  }
}

}  // namespace

PhantomSpec load_case_spec(const std::filesystem::path& dir) {
  return phantom_spec_from_json(read_manifest(dir).at("spec"));
}

PhantomCase load_case(const std::filesystem::path& dir) {
  const nlohmann::json manifest = read_manifest(dir);
  const auto& files = manifest.at("files");
  PhantomCase c;
  for (const auto& name : files.at("conditions")) c.conditions.push_back(load(dir / name.get<std::string>()));
  c.target_clean = load(dir / files.at("target_clean").get<std::string>());
  c.target_noisy = load(dir / files.at("target_noisy").get<std::string>());
  c.translation = load(dir / files.at("translation").get<std::string>());
  c.tissue = load_mask(dir / files.at("tissue_mask").get<std::string>());
  c.wm = load_mask(dir / files.at("wm_mask").get<std::string>());
  c.lesion = load_mask(dir / files.at("lesion_mask").get<std::string>());
  const Volume labels = load(dir / files.at("lesion_labels").get<std::string>());
  c.lesion_labels.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) c.lesion_labels[i] = static_cast<std::uint32_t>(labels[i]);
  const Volume cls = load(dir / files.at("tissue_class").get<std::string>());
  c.tissue_class.resize(cls.size());
  for (std::size_t i = 0; i < cls.size(); ++i) c.tissue_class[i] = static_cast<std::uint8_t>(cls[i]);
  return c;
}

}  // namespace yoda
