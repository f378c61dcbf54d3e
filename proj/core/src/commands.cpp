#include "nowcast/commands.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "nowcast/error.hpp"
#include "nowcast/format.hpp"

namespace fs = std::filesystem;

namespace nowcast {

namespace {

// Exclusive-create lock file guarding an output directory against
// concurrent runs; removed when the command finishes.
class OutDirLock {
 public:
  explicit OutDirLock(const std::string& out_dir) : path_(fs::path(out_dir) / ".lock") {
    fs::create_directories(out_dir);
    std::FILE* f = std::fopen(path_.string().c_str(), "wx");
    if (!f)
      throw ConfigError("output directory '" + out_dir +
                        "' is locked by another run (remove " + path_.string() +
                        " if that run is gone)");
    std::fclose(f);
  }
  ~OutDirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutDirLock(const OutDirLock&) = delete;
  OutDirLock& operator=(const OutDirLock&) = delete;

 private:
  fs::path path_;
};

// Wall-clock timestamps are confined to this sidecar log so every other
// artifact stays byte-identical across reruns.
class RunLog {
 public:
  explicit RunLog(const std::string& out_dir) : out_(fs::path(out_dir) / "run.log") {}
  void line(const std::string& msg) {
    const auto now = std::chrono::system_clock::now();
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch());
    out_ << "[" << secs.count() << "] " << msg << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

std::string resolve(const std::string& path, const std::string& base_dir) {
  if (path.empty() || fs::path(path).is_absolute() || base_dir.empty()) return path;
  return (fs::path(base_dir) / path).string();
}

std::vector<std::string> derive_groups(const Panel& panel) {
  // Distinct tags in meta order, skipping tags carried only by the target.
  const std::size_t target = panel.target_column();
  std::vector<std::string> groups;
  for (std::size_t d = 0; d < panel.cols(); ++d) {
    for (const auto& g : panel.metas[d].groups) {
      if (std::find(groups.begin(), groups.end(), g) != groups.end()) continue;
      bool only_target = true;
      for (std::size_t e = 0; e < panel.cols() && only_target; ++e) {
        if (e == target) continue;
        const auto& tags = panel.metas[e].groups;
        if (std::find(tags.begin(), tags.end(), g) != tags.end()) only_target = false;
      }
      if (!only_target) groups.push_back(g);
    }
  }
  return groups;
}

nlohmann::json metrics_json(const RunConfig& cfg, const PipelineResult& res) {
  nlohmann::json j;
  j["mse"] = res.test_metrics.mse;
  j["mape"] = res.test_metrics.mape;
  j["n_test"] = res.test_metrics.n;
  j["config"] = cfg.to_json();
  j["seed"] = cfg.train.seed;
  j["param_count"] = res.param_count;
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j, const std::string& base_dir) {
  RunConfig cfg;
  if (j.contains("data")) {
    const auto& d = j["data"];
    if (d.contains("panel_csv")) cfg.panel_csv = resolve(d["panel_csv"].get<std::string>(), base_dir);
    if (d.contains("meta_json")) cfg.meta_json = resolve(d["meta_json"].get<std::string>(), base_dir);
    if (d.contains("synthetic")) cfg.synthetic = SyntheticSpec::from_json(d["synthetic"]);
  }
  if (j.contains("groups")) cfg.groups = j["groups"].get<std::vector<std::string>>();
  cfg.window = j.value("window", cfg.window);
  if (j.contains("split")) {
    const auto s = j["split"].get<std::vector<double>>();
    if (s.size() != 3) throw ParseError("config: split must have 3 fractions");
    cfg.split = {s[0], s[1], s[2]};
  }
  cfg.missing_rate = j.value("missing_rate", cfg.missing_rate);
  if (j.contains("z_next_mode")) cfg.z_next_mode = parse_z_next_mode(j["z_next_mode"]);
  cfg.em_per_epoch = j.value("em_per_epoch", cfg.em_per_epoch);
  if (j.contains("em")) {
    cfg.em.max_iter = j["em"].value("max_iter", cfg.em.max_iter);
    cfg.em.tol = j["em"].value("tol", cfg.em.tol);
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    if (m.contains("preset")) {
      const std::string preset = m["preset"].get<std::string>();
      if (preset == "korea") {
        cfg.dim_alpha = cfg.dim_beta = 128;
        cfg.layers = 1;
        cfg.train.lr = 1e-2;
      } else if (preset == "uk") {
        cfg.dim_alpha = cfg.dim_beta = 256;
        cfg.layers = 1;
        cfg.train.lr = 1e-3;
      } else {
        throw ParseError("config: unknown preset '" + preset + "'");
      }
    }
    cfg.dim_alpha = m.value("dim_alpha", cfg.dim_alpha);
    cfg.dim_beta = m.value("dim_beta", cfg.dim_beta);
    cfg.layers = m.value("layers", cfg.layers);
    cfg.time_channel = m.value("time_channel", cfg.time_channel);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    cfg.train.lr = t.value("lr", cfg.train.lr);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.max_epochs = t.value("max_epochs", cfg.train.max_epochs);
    cfg.train.patience = t.value("patience", cfg.train.patience);
    if (t.contains("solver")) cfg.train.solver = parse_solver(t["solver"]);
    cfg.train.steps_per_month = t.value("steps_per_month", cfg.train.steps_per_month);
    cfg.train.seed = t.value("seed", cfg.train.seed);
  }
  if (j.contains("out_dir")) cfg.out_dir = resolve(j["out_dir"].get<std::string>(), base_dir);
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config '" + path + "': " + e.what());
  }
  return from_json(j, fs::path(path).parent_path().string());
}

void RunConfig::validate() const {
  const bool real = !panel_csv.empty() || !meta_json.empty();
  if (real && synthetic) throw ConfigError("config: panel_csv/meta_json and synthetic are mutually exclusive");
  if (!real && !synthetic) throw ConfigError("config: need either panel_csv+meta_json or synthetic");
  if (real) {
    if (panel_csv.empty() || meta_json.empty())
      throw ConfigError("config: real data needs both panel_csv and meta_json");
    if (!fs::exists(panel_csv)) throw ConfigError("config: panel_csv '" + panel_csv + "' does not exist");
    if (!fs::exists(meta_json)) throw ConfigError("config: meta_json '" + meta_json + "' does not exist");
  }
  if (window < 1) throw ConfigError("config: window must be >= 1");
  if (missing_rate < 0.0 || missing_rate >= 1.0)
    throw ConfigError("config: missing_rate must lie in [0,1)");
  train.validate();
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  nlohmann::json data;
  if (synthetic) {
    data["synthetic"] = synthetic->to_json();
  } else {
    data["panel_csv"] = panel_csv;
    data["meta_json"] = meta_json;
  }
  j["data"] = data;
  j["groups"] = groups;
  j["window"] = window;
  j["split"] = {split[0], split[1], split[2]};
  j["missing_rate"] = missing_rate;
  j["z_next_mode"] = z_next_mode == ZNextMode::forecast ? "forecast" : "smoothed_last";
  j["em_per_epoch"] = em_per_epoch;
  j["em"] = {{"max_iter", em.max_iter}, {"tol", em.tol}};
  j["model"] = {{"dim_alpha", dim_alpha},
                {"dim_beta", dim_beta},
                {"layers", layers},
                {"time_channel", time_channel}};
  j["train"] = {{"lr", train.lr},
                {"batch_size", train.batch_size},
                {"max_epochs", train.max_epochs},
                {"patience", train.patience},
                {"solver", solver_name(train.solver)},
                {"steps_per_month", train.steps_per_month},
                {"seed", train.seed}};
  j["out_dir"] = out_dir;
  return j;
}

PipelineResult run_pipeline(const RunConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  PipelineResult res;

  Panel panel;
  if (cfg.synthetic) {
    Rng data_rng(cfg.synthetic->seed);
    panel = generate_synthetic(*cfg.synthetic, data_rng).panel;
  } else {
    panel = load_panel(cfg.panel_csv, cfg.meta_json);
  }
  if (cfg.missing_rate > 0.0) {
    Rng missing_rng(cfg.train.seed + 0x6d697373ULL);
    panel = apply_missing(std::move(panel), cfg.missing_rate, missing_rng);
  }
  res.panel = standardize(std::move(panel));

  res.groups = cfg.groups.empty() ? derive_groups(res.panel) : cfg.groups;
  if (res.groups.empty()) throw ConfigError("pipeline: no factor groups");
  res.factors = extract_factors(res.panel, res.groups, cfg.em);

  res.windows = make_windows(res.panel, cfg.window, cfg.split);
  res.prepared =
      prepare_windows(res.panel, res.windows, res.factors, cfg.z_next_mode, cfg.time_channel);

  NcdeConfig arch;
  arch.input_dim = res.panel.cols();
  arch.dim_alpha = cfg.dim_alpha;
  arch.dim_beta = cfg.dim_beta;
  arch.layers = cfg.layers;
  arch.factors = res.groups.size();
  arch.time_channel = cfg.time_channel;

  Rng init_rng(cfg.train.seed);
  NcdeParams params = NcdeParams::init(arch, init_rng);
  res.param_count = params.param_count();

  EpochCallback cb = on_epoch;
  if (cfg.em_per_epoch) {
    // Literal nested-loop behavior: the EM re-runs inside every epoch.
    // The factor model has no dependence on the network parameters, so it
    // lands on the identical fixed point each time; only cost changes.
    const Panel& p = res.panel;
    const auto groups = res.groups;
    const auto em_cfg = cfg.em;
    cb = [on_epoch, &p, groups, em_cfg](std::size_t epoch, const EpochStats& stats) {
      extract_factors(p, groups, em_cfg);
      if (on_epoch) on_epoch(epoch, stats);
    };
  }

  res.trained = train(std::move(params), res.prepared, cfg.train, cb);

  const ColumnStats& target_stats = res.panel.stats[res.panel.target_column()];
  res.test_metrics =
      evaluate(res.trained.params, res.prepared, Split::test, cfg.train, target_stats);
  res.baseline = fit_ols_baseline(res.prepared);
  res.baseline_metrics = evaluate_baseline(res.baseline, res.prepared, Split::test);
  return res;
}

void cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  std::ifstream in(spec_path);
  if (!in) throw ConfigError("cannot open synthetic spec '" + spec_path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("spec '" + spec_path + "': " + e.what());
  }
  const SyntheticSpec spec = SyntheticSpec::from_json(j);

  OutDirLock lock(out_dir);
  RunLog log(out_dir);
  log.line("synth spec=" + spec_path);

  Rng rng(spec.seed);
  const SyntheticResult res = generate_synthetic(spec, rng);
  write_panel(res.panel, (fs::path(out_dir) / "panel.csv").string());
  write_meta(res.panel, (fs::path(out_dir) / "meta.json").string());
  nlohmann::json truth = truth_to_json(res.truth);
  truth["spec"] = spec.to_json();
  write_text((fs::path(out_dir) / "truth.json").string(), truth.dump(2) + "\n");
  log.line("synth done");
}

void cmd_train(const RunConfig& cfg) {
  OutDirLock lock(cfg.out_dir);
  RunLog log(cfg.out_dir);
  log.line("train start");

  const PipelineResult res = run_pipeline(cfg, [&log](std::size_t epoch, const EpochStats& s) {
    if (epoch % 10 == 0)
      log.line("epoch " + std::to_string(epoch) + " train_mse=" + format_double(s.train_mse) +
               " val_mse=" + format_double(s.val_mse));
  });

  const fs::path out(cfg.out_dir);
  save_checkpoint(res.trained.params, cfg.train.seed, (out / "checkpoint.json").string());
  write_history(res.trained.history, (out / "history.csv").string());
  write_nowcasts(res.test_metrics.per_window, (out / "nowcasts.csv").string());
  write_factors(res.factors, res.panel, (out / "factors.csv").string());
  write_text((out / "metrics.json").string(), metrics_json(cfg, res).dump(2) + "\n");
  log.line("train done mse=" + format_double(res.test_metrics.mse) +
           " mape=" + format_double(res.test_metrics.mape));
}

void cmd_ablate_missing(RunConfig cfg, const std::vector<double>& rates) {
  for (double r : rates)
    if (r < 0.0 || r >= 1.0) throw ConfigError("ablate: rates must lie in [0,1)");

  OutDirLock lock(cfg.out_dir);
  RunLog log(cfg.out_dir);
  std::string csv = "rate,model,mse,mape\n";
  for (double rate : rates) {
    RunConfig run = cfg;
    run.missing_rate = rate;
    log.line("ablate rate=" + format_double(rate));
    const PipelineResult res = run_pipeline(run);
    csv += format_double(rate) + ",ncde," + format_double(res.test_metrics.mse) + "," +
           format_double(res.test_metrics.mape) + "\n";
    csv += format_double(rate) + ",dfm," + format_double(res.baseline_metrics.mse) + "," +
           format_double(res.baseline_metrics.mape) + "\n";
  }
  write_text((fs::path(cfg.out_dir) / "ablation.csv").string(), csv);
  log.line("ablate done");
}

void cmd_compare_solvers(RunConfig cfg) {
  OutDirLock lock(cfg.out_dir);
  RunLog log(cfg.out_dir);
  std::string csv = "solver,mse,mape\n";
  for (Solver s : {Solver::euler, Solver::rk4}) {
    RunConfig run = cfg;
    run.train.solver = s;
    log.line("solver " + solver_name(s));
    const PipelineResult res = run_pipeline(run);
    csv += solver_name(s) + "," + format_double(res.test_metrics.mse) + "," +
           format_double(res.test_metrics.mape) + "\n";
    write_text((fs::path(cfg.out_dir) / ("metrics_" + solver_name(s) + ".json")).string(),
               metrics_json(run, res).dump(2) + "\n");
  }
  write_text((fs::path(cfg.out_dir) / "solvers.csv").string(), csv);
  log.line("compare-solvers done");
}

void cmd_param_report(const std::vector<std::string>& config_paths, const std::string& out_dir) {
  if (config_paths.empty()) throw ConfigError("param-report: no configs given");
  OutDirLock lock(out_dir);
  RunLog log(out_dir);
  std::string csv = "model,param_count,mape\n";
  for (const auto& path : config_paths) {
    RunConfig cfg = RunConfig::from_file(path);
    log.line("config " + path);
    const PipelineResult res = run_pipeline(cfg);
    csv += fs::path(path).stem().string() + "," + std::to_string(res.param_count) + "," +
           format_double(res.test_metrics.mape) + "\n";
  }
  write_text((fs::path(out_dir) / "param_report.csv").string(), csv);
  log.line("param-report done");
}

}  // namespace nowcast
