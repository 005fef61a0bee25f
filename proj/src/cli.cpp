#include "yoda/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "yoda/error.hpp"
#include "yoda/harmonize.hpp"
#include "yoda/metrics.hpp"
#include "yoda/neural_denoiser.hpp"
#include "yoda/noise.hpp"
#include "yoda/parallel.hpp"
#include "yoda/rng.hpp"

namespace yoda::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kUsage =
    "usage: yoda_lab <command> --config <path> [--out <dir>] [--seed <u64>] [--workers <n>]\n"
    "commands: phantom, train, sample, eval, curve, robust, harmonize\n";

const std::vector<std::string> kCommands = {"phantom", "train", "sample", "eval", "curve", "robust", "harmonize"};

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  f << text;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string case_id_of(const fs::path& dir) {
  const fs::path clean = dir.lexically_normal();
  return clean.has_filename() ? clean.filename().string() : clean.parent_path().filename().string();
}

struct Context {
  GlobalOptions opt;
  json config;
  fs::path base;  ///< directory of the config file, for relative paths
  int workers = 1;
};

json base_manifest(const Context& ctx, const std::string& command) {
  json m;
  m["command"] = command;
  m["config"] = ctx.config;
  m["config_hash"] = config_hash(ctx.config);
  m["seed_override"] = ctx.opt.seed ? json(*ctx.opt.seed) : json(nullptr);
  return m;
}

void write_manifest(const Context& ctx, const json& m) { write_text(ctx.opt.out / "manifest.json", m.dump(2) + "\n"); }

NoiseSchedule schedule_of(const json& j) {
  return j.contains("schedule") ? NoiseSchedule::from_json(j.at("schedule")) : NoiseSchedule::linear(1000);
}

struct LoadedCase {
  std::string id;
  fs::path dir;
  PhantomCase data;
  PhantomSpec spec;
};

LoadedCase load(const Context& ctx, const std::string& p) {
  LoadedCase c;
  c.dir = resolve(ctx.base, p);
  c.id = case_id_of(c.dir);
  c.data = load_case(c.dir);
  c.spec = load_case_spec(c.dir);
  return c;
}

std::vector<LoadedCase> load_cases(const Context& ctx) {
  std::vector<LoadedCase> out;
  for (const auto& p : ctx.config.at("cases")) out.push_back(load(ctx, p.get<std::string>()));
  if (out.empty()) throw Error(ErrorCode::InvalidParam, "'cases' must not be empty");
  return out;
}

const Volume& reference_of(const LoadedCase& c, const json& cfg) {
  const std::string ref = cfg.value("reference", std::string("noisy"));
  if (ref == "noisy") return c.data.target_noisy;
  if (ref == "clean") return c.data.target_clean;
  throw Error(ErrorCode::InvalidParam, "reference must be noisy|clean");
}

GridPoint evaluate_point(const LoadedCase& c, const Volume& out, const Volume& ref) {
  GridPoint p;
  p.case_id = c.id;
  const EvalMasks masks{c.data.tissue, c.data.wm, c.data.lesion};
  const MetricReport r = evaluate(out, ref, masks);
  p.ssim = r.ssim;
  p.psnr_db = r.psnr_db;
  p.sigma_wm = r.sigma_wm.value_or(0.0);
  p.cnr = r.cnr;
  return p;
}

// --- phantom -----------------------------------------------------------------

int cmd_phantom(Context& ctx) {
  json spec_json = ctx.config;
  if (ctx.opt.seed) {
    if (spec_json.contains("desk_default")) {
      spec_json["desk_default"]["seed"] = *ctx.opt.seed;
    } else {
      spec_json["seed"] = *ctx.opt.seed;
    }
  }
  const PhantomSpec spec = phantom_spec_from_json(spec_json);
  const PhantomCase pc = generate(spec);
  json m = save_case(pc, spec, ctx.opt.out);
  const json files = m["files"];
  const json spec_echo = m["spec"];
  m = base_manifest(ctx, "phantom");
  m["format"] = "yoda-case-1";
  m["spec"] = spec_echo;
  m["files"] = files;
  write_manifest(ctx, m);
  return 0;
}

// --- train -------------------------------------------------------------------

int cmd_train(Context& ctx) {
  const auto cases = load_cases(ctx);
  NeuralConfig nc = ctx.config.contains("network") ? neural_config_from_json(ctx.config.at("network")) : NeuralConfig{};
  nc.n_conditions = cases.front().data.conditions.size();
  TrainConfig tc = ctx.config.contains("train") ? train_config_from_json(ctx.config.at("train")) : TrainConfig{};
  if (ctx.opt.seed) tc.seed = *ctx.opt.seed;
  tc.workers = ctx.workers;
  const std::uint64_t init_seed = ctx.config.value("init_seed", derive_seed(tc.seed, {0x494E4954ULL}));
  const NoiseSchedule sch = schedule_of(ctx.config);

  std::vector<TrainingCase> dataset;
  for (const auto& c : cases) dataset.push_back({c.data.target_noisy, c.data.conditions, c.data.tissue});
  NeuralDenoiser model(nc, init_seed);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(model, dataset, tc, sch);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  model.save(ctx.opt.out / "model");
  write_loss_csv(r, ctx.opt.out / "loss.csv");
  json m = base_manifest(ctx, "train");
  m["network"] = to_json(nc);
  m["train"] = to_json(tc);
  m["schedule"] = sch.to_json();
  m["init_seed"] = init_seed;
  m["steps"] = r.loss.size();
  m["final_loss"] = r.loss.empty() ? json(nullptr) : json(r.loss.back());
  m["wallclock_s"] = wall;
  m["outputs"] = {{"weights", "model.bin"}, {"weights_manifest", "model.json"}, {"loss_csv", "loss.csv"}};
  write_manifest(ctx, m);
  return 0;
}

SamplerConfig sampler_of(const json& cfg, const NoiseSchedule& sch) {
  const json block = cfg.value("sampler", json::object());
  SamplerConfig sc = sampler_config_from_json(block);
  if (!block.contains("T_trunc")) sc.t_trunc = SamplerConfig::diffusion_defaults(sch.steps()).t_trunc;
  return sc;
}

// --- sample ------------------------------------------------------------------

std::vector<Volume> noisy_conditions(const LoadedCase& c, double rel_sigma, NoiseKind kind, std::uint64_t seed) {
  if (rel_sigma <= 0.0) return c.data.conditions;
  std::vector<Volume> out;
  for (std::size_t m = 0; m < c.data.conditions.size(); ++m) {
    NoiseParams p;
    p.sigma = static_cast<float>(rel_sigma);
    p.relative = true;
    p.kind = kind;
    p.seed = derive_seed(seed, {0x524F4253ULL, m});
    out.push_back(add_noise(c.data.conditions[m], p));
  }
  return out;
}

int cmd_sample(Context& ctx) {
  const LoadedCase c = load(ctx, ctx.config.at("case").get<std::string>());
  const NoiseSchedule sch = schedule_of(ctx.config);
  SamplerConfig sc = sampler_of(ctx.config, sch);
  if (ctx.opt.seed) sc.seed = *ctx.opt.seed;
  sc.workers = ctx.workers;
  const double input_sigma = ctx.config.value("input_sigma", 0.0);
  const auto conditions = noisy_conditions(c, input_sigma, NoiseKind::rician, sc.seed);
  const Volume mean = apply_translation(c.spec, conditions, c.data.tissue_class, c.data.lesion_labels);
  const auto den = make_denoiser(ctx.config.at("denoiser"), mean, ctx.base);
  const SampleResult r = sample(*den, conditions, sc, sch);

  save(r.output, ctx.opt.out / "output.yvol");
  json outputs = {{"output", "output.yvol"}};
  json reps = json::array();
  for (std::size_t k = 0; k < r.per_replicate.size(); ++k) {
    const std::string name = "replicate_" + std::to_string(k) + ".yvol";
    save(r.per_replicate[k], ctx.opt.out / name);
    reps.push_back(name);
  }
  if (!reps.empty()) outputs["replicates"] = reps;
  json m = base_manifest(ctx, "sample");
  m["case"] = c.dir.string();
  m["sampler"] = to_json(sc);
  m["schedule"] = sch.to_json();
  m["seed"] = sc.seed;
  m["nfe"] = r.nfe;
  m["wallclock_s"] = r.wallclock;
  m["outputs"] = outputs;
  write_manifest(ctx, m);
  return 0;
}

// --- eval --------------------------------------------------------------------

int cmd_eval(Context& ctx) {
  const json& cfg = ctx.config;
  const Volume pred = yoda::load(resolve(ctx.base, cfg.at("prediction").get<std::string>()));
  const Volume ref = yoda::load(resolve(ctx.base, cfg.at("reference").get<std::string>()));
  EvalMasks masks;
  std::string case_id = cfg.value("case_id", std::string("case"));
  if (cfg.contains("case")) {
    const LoadedCase c = load(ctx, cfg.at("case").get<std::string>());
    masks = {c.data.tissue, c.data.wm, c.data.lesion};
    if (!cfg.contains("case_id")) case_id = c.id;
  } else if (cfg.contains("tissue_mask")) {
    masks.tissue = load_mask(resolve(ctx.base, cfg.at("tissue_mask").get<std::string>()));
    if (cfg.contains("wm_mask")) masks.wm = load_mask(resolve(ctx.base, cfg.at("wm_mask").get<std::string>()));
    if (cfg.contains("lesion_mask")) {
      masks.lesion = load_mask(resolve(ctx.base, cfg.at("lesion_mask").get<std::string>()));
    }
  } else {
    masks.tissue = Mask(ref.dims(), true);
  }
  const MetricReport r = evaluate(pred, ref, masks);
  const std::string method = cfg.value("method", std::string("prediction"));
  std::ostringstream csv;
  csv << "case_id,method,ssim,psnr_db,mse,sigma_wm,cnr,voxel_count\n";
  csv << case_id << ',' << method << ',' << format_number(r.ssim) << ',' << format_number(r.psnr_db) << ','
      << format_number(r.mse) << ',' << (r.sigma_wm ? format_number(*r.sigma_wm) : "") << ','
      << (r.cnr ? format_number(*r.cnr) : "") << ',' << r.voxel_count << '\n';
  write_text(ctx.opt.out / "metrics.csv", csv.str());
  json report = to_json(r);
  report["case_id"] = case_id;
  report["method"] = method;
  report["config_hash"] = config_hash(cfg);
  write_text(ctx.opt.out / "metrics.json", report.dump(2) + "\n");
  json m = base_manifest(ctx, "eval");
  m["outputs"] = {{"metrics_csv", "metrics.csv"}, {"metrics_json", "metrics.json"}};
  write_manifest(ctx, m);
  return 0;
}

// --- curve / robust ------------------------------------------------------------

std::size_t regression_view_count(ViewPolicy p) { return p == ViewPolicy::regression_three_view ? 3 : 1; }

struct Job {
  std::size_t case_index = 0;
  SamplerConfig sampler;
  double input_sigma = 0.0;
};

std::vector<GridPoint> run_jobs(const Context& ctx, const std::vector<LoadedCase>& cases, const std::vector<Job>& jobs,
                                const NoiseSchedule& sch, bool record_wallclock) {
  std::vector<GridPoint> points(jobs.size());
  parallel_for(jobs.size(), ctx.workers, [&](std::size_t k) {
    const Job& job = jobs[k];
    const LoadedCase& c = cases[job.case_index];
    const auto conditions = noisy_conditions(c, job.input_sigma, NoiseKind::rician, job.sampler.seed);
    const Volume mean = apply_translation(c.spec, conditions, c.data.tissue_class, c.data.lesion_labels);
    const auto den = make_denoiser(ctx.config.at("denoiser"), mean, ctx.base);
    const SampleResult r = sample(*den, conditions, job.sampler, sch);
    GridPoint p = evaluate_point(c, r.output, reference_of(c, ctx.config));
    p.mode = job.sampler.mode;
    p.t_trunc = job.sampler.mode == SampleMode::regression ? 0 : job.sampler.t_trunc;
    p.n_ex = job.sampler.n_ex;
    p.views = job.sampler.mode == SampleMode::regression ? regression_view_count(job.sampler.view_policy) : 1;
    p.nfe = r.nfe;
    p.wallclock = record_wallclock ? r.wallclock : 0.0;
    points[k] = p;
  });
  return points;
}

std::uint64_t root_seed(const Context& ctx) {
  return ctx.opt.seed ? *ctx.opt.seed : ctx.config.value("seed", std::uint64_t{0});
}

SamplerConfig sampler_base(const json& cfg, const NoiseSchedule& sch) {
  SamplerConfig sc = sampler_of(cfg, sch);
  sc.workers = 1;
  return sc;
}

int cmd_curve(Context& ctx) {
  const json& cfg = ctx.config;
  const auto cases = load_cases(ctx);
  const NoiseSchedule sch = schedule_of(cfg);
  const auto t_truncs = cfg.at("T_trunc").get<std::vector<std::size_t>>();
  const auto n_exs = cfg.value("n_ex", std::vector<std::size_t>{1});
  if (t_truncs.empty() || n_exs.empty()) throw Error(ErrorCode::InvalidParam, "curve grids must be nonempty");
  const SamplerConfig base = sampler_base(cfg, sch);
  const ViewPolicy regression_views =
      view_policy_from_string(cfg.value("regression_views", std::string("regression_three_view")));
  const std::uint64_t seed = root_seed(ctx);

  std::vector<Job> jobs;
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    for (std::size_t tt : t_truncs) {
      for (std::size_t ne : n_exs) {
        Job j;
        j.case_index = ci;
        j.sampler = base;
        j.sampler.seed = derive_seed(seed, {ci});
        j.sampler.n_ex = ne;
        if (tt == 0) {
          j.sampler.mode = SampleMode::regression;
          j.sampler.view_policy = regression_views;
        } else {
          j.sampler.mode = ne > 1 ? SampleMode::expa : SampleMode::diffusion;
          j.sampler.t_trunc = tt;
        }
        jobs.push_back(j);
      }
    }
  }
  const auto points = run_jobs(ctx, cases, jobs, sch, cfg.value("record_wallclock", false));
  std::ostringstream csv;
  csv << kCurveHeader << '\n';
  for (const auto& p : points) csv << csv_row(p) << '\n';
  write_text(ctx.opt.out / "curve.csv", csv.str());
  json m = base_manifest(ctx, "curve");
  m["seed"] = seed;
  m["schedule"] = sch.to_json();
  m["rows"] = points.size();
  m["outputs"] = {{"curve_csv", "curve.csv"}};
  write_manifest(ctx, m);
  return 0;
}

int cmd_robust(Context& ctx) {
  const json& cfg = ctx.config;
  const auto cases = load_cases(ctx);
  const NoiseSchedule sch = schedule_of(cfg);
  const auto sigmas = cfg.at("input_sigmas").get<std::vector<double>>();
  if (sigmas.empty()) throw Error(ErrorCode::InvalidParam, "input_sigmas must be nonempty");
  SamplerConfig base = sampler_base(cfg, sch);
  const std::uint64_t seed = root_seed(ctx);
  std::vector<Job> jobs;
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    for (double s : sigmas) {
      if (s < 0.0 || s > 1.0) throw Error(ErrorCode::InvalidParam, "input sigma is a fraction of range in [0, 1]");
      Job j;
      j.case_index = ci;
      j.sampler = base;
      j.sampler.seed = derive_seed(seed, {ci});
      j.input_sigma = s;
      jobs.push_back(j);
    }
  }
  const auto points = run_jobs(ctx, cases, jobs, sch, cfg.value("record_wallclock", false));
  std::ostringstream csv;
  const std::string header = kCurveHeader;
  csv << "case_id,input_sigma," << header.substr(std::string("case_id,").size()) << '\n';
  for (std::size_t k = 0; k < points.size(); ++k) {
    const std::string row = csv_row(points[k]);
    const std::size_t comma = row.find(',');
    csv << row.substr(0, comma) << ',' << format_number(jobs[k].input_sigma) << row.substr(comma) << '\n';
  }
  write_text(ctx.opt.out / "robust.csv", csv.str());
  json m = base_manifest(ctx, "robust");
  m["seed"] = seed;
  m["schedule"] = sch.to_json();
  m["rows"] = points.size();
  m["outputs"] = {{"robust_csv", "robust.csv"}};
  write_manifest(ctx, m);
  return 0;
}

// --- harmonize ----------------------------------------------------------------

int cmd_harmonize(Context& ctx) {
  const json& cfg = ctx.config;
  const Volume v = yoda::load(resolve(ctx.base, cfg.at("volume").get<std::string>()));
  HarmonizeConfig hc;
  hc.learning_rate = cfg.value("learning_rate", hc.learning_rate);
  hc.max_steps = cfg.value("max_steps", hc.max_steps);
  hc.penalty = cfg.value("penalty", hc.penalty);
  hc.eps_pos = cfg.value("eps_pos", hc.eps_pos);
  if (cfg.contains("foreground_mask")) {
    hc.foreground = load_mask(resolve(ctx.base, cfg.at("foreground_mask").get<std::string>()));
  }
  const Axis axis = axis_from_string(cfg.value("axis", std::string("axial")));
  const GammaVariant variant = gamma_variant_from_string(cfg.value("variant", std::string("generalized")));
  const HarmonizeResult r = harmonize_slices(v, axis, hc, variant);
  save(r.corrected, ctx.opt.out / "corrected.yvol");
  write_trace_csv(r, ctx.opt.out / "trace.csv");
  json params = json::array();
  for (const auto& p : r.params) params.push_back({p.a, p.gamma, p.c});
  json m = base_manifest(ctx, "harmonize");
  m["params"] = params;
  m["initial_objective"] = r.objective.front();
  m["final_objective"] = r.objective.back();
  m["outputs"] = {{"corrected", "corrected.yvol"}, {"trace_csv", "trace.csv"}};
  write_manifest(ctx, m);
  return 0;
}

}  // namespace

std::string config_hash(const json& j) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::unique_ptr<Denoiser> make_denoiser(const json& j, const Volume& oracle_mean, const fs::path& base) {
  const std::string kind = j.value("kind", std::string("oracle"));
  if (kind == "oracle") {
    const auto out = prediction_kind_from_string(j.value("output_kind", std::string("v")));
    return std::make_unique<OracleGaussianDenoiser>(oracle_mean, j.value("prior_var", 0.0), out,
                                                    j.value("slab_width", std::size_t{1}));
  }
  if (kind == "neural") {
    auto model = std::make_unique<NeuralDenoiser>(NeuralDenoiser::load(resolve(base, j.at("weights").get<std::string>())));
    model->set_use_ema(j.value("ema", true));
    return model;
  }
  throw Error(ErrorCode::InvalidParam, "denoiser kind must be oracle|neural");
}

std::string csv_row(const GridPoint& p) {
  std::ostringstream s;
  s << p.case_id << ',' << to_string(p.mode) << ',' << p.t_trunc << ',' << p.n_ex << ',' << p.views << ',' << p.nfe
    << ',' << format_number(p.ssim) << ',' << format_number(p.psnr_db) << ',' << format_number(p.sigma_wm) << ','
    << (p.cnr ? format_number(*p.cnr) : "") << ',' << format_number(p.wallclock);
  return s.str();
}

int run(const std::vector<std::string>& args) {
  if (args.empty() || (args[0] != "--help" && args[0] != "-h" &&
                       std::find(kCommands.begin(), kCommands.end(), args[0]) == kCommands.end())) {
    if (!args.empty()) std::cerr << "yoda_lab: unknown command '" << args[0] << "'\n";
    std::cerr << kUsage;
    return 2;
  }

  CLI::App app{"Desk-scale diffusion image-translation lab", "yoda_lab"};
  app.require_subcommand(1);
  Context ctx;
  std::uint64_t seed = 0;
  for (const auto& name : kCommands) {
    CLI::App* sub = app.add_subcommand(name, "");
    sub->add_option("--config", ctx.opt.config, "JSON configuration file")->required();
    sub->add_option("--out", ctx.opt.out, "output directory");
    sub->add_option("--seed", seed, "override the root seed");
    sub->add_option("--workers", ctx.opt.workers, "worker threads (default $YODA_LAB_WORKERS or all cores)");
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  if (app.get_subcommands().front()->count("--seed") > 0) ctx.opt.seed = seed;

  try {
    ctx.workers = resolve_workers(ctx.opt.workers);
    ctx.config = read_json(ctx.opt.config);
    ctx.base = ctx.opt.config.has_parent_path() ? ctx.opt.config.parent_path() : fs::path(".");
    fs::create_directories(ctx.opt.out);
    if (command == "phantom") return cmd_phantom(ctx);
    if (command == "train") return cmd_train(ctx);
    if (command == "sample") return cmd_sample(ctx);
    if (command == "eval") return cmd_eval(ctx);
    if (command == "curve") return cmd_curve(ctx);
    if (command == "robust") return cmd_robust(ctx);
    if (command == "harmonize") return cmd_harmonize(ctx);
  } catch (const Error& e) {
    std::cerr << "yoda_lab " << command << ": " << e.what() << '\n';
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "yoda_lab " << command << ": invalid config: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "yoda_lab " << command << ": " << e.what() << '\n';
    return 1;
  }
  std::cerr << kUsage;
  return 2;
}

}  // namespace yoda::cli
