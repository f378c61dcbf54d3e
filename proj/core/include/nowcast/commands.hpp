#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nowcast/dfm.hpp"
#include "nowcast/model.hpp"
#include "nowcast/synthetic.hpp"

namespace nowcast {

// One JSON file drives a run; command-line flags (--seed, --solver, --out)
// override config keys, which override defaults.
struct RunConfig {
  // Exactly one data source.
  std::string panel_csv;
  std::string meta_json;
  std::optional<SyntheticSpec> synthetic;

  std::vector<std::string> groups;  // factor groups; derived from metas when empty
  std::size_t window = 15;
  std::array<double, 3> split = {0.7, 0.15, 0.15};
  double missing_rate = 0.0;
  ZNextMode z_next_mode = ZNextMode::forecast;
  bool em_per_epoch = false;
  EmConfig em;

  std::size_t dim_alpha = 128;
  std::size_t dim_beta = 128;
  std::size_t layers = 1;
  bool time_channel = true;

  TrainConfig train;
  std::string out_dir = "out";

  static RunConfig from_json(const nlohmann::json& j, const std::string& base_dir);
  static RunConfig from_file(const std::string& path);
  nlohmann::json to_json() const;  // every effective value, canonical
  void validate() const;
};

struct PipelineResult {
  Panel panel;  // standardized
  std::vector<std::string> groups;
  FactorSet factors;
  WindowSet windows;
  std::vector<PreparedWindow> prepared;
  TrainResult trained;
  EvalMetrics test_metrics;
  OlsBaseline baseline;
  EvalMetrics baseline_metrics;
  std::size_t param_count = 0;
};

// Data -> factors -> windows -> training -> test metrics, all seeded.
PipelineResult run_pipeline(const RunConfig& cfg, const EpochCallback& on_epoch = {});

// synth: writes panel.csv, meta.json, truth.json for a synthetic spec.
void cmd_synth(const std::string& spec_path, const std::string& out_dir);

// train: full pipeline; writes checkpoint.json, history.csv, metrics.json,
// nowcasts.csv, factors.csv (timestamps only in run.log).
void cmd_train(const RunConfig& cfg);

// ablate-missing: retrains at each missing rate; writes ablation.csv with
// `rate,model,mse,mape` rows for the trained model and the OLS baseline.
void cmd_ablate_missing(RunConfig cfg, const std::vector<double>& rates);

// compare-solvers: identical seed with euler and rk4; writes solvers.csv
// `solver,mse,mape` plus per-solver metrics JSONs.
void cmd_compare_solvers(RunConfig cfg);

// param-report: trains every config; writes param_report.csv
// `model,param_count,mape`.
void cmd_param_report(const std::vector<std::string>& config_paths, const std::string& out_dir);

}  // namespace nowcast
