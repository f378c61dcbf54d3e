#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "nowcast/commands.hpp"
#include "nowcast/error.hpp"

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

nlohmann::json tiny_config_json(std::uint64_t seed, const std::string& out_dir) {
  nlohmann::json j;
  j["data"]["synthetic"] = {{"k", 1},       {"d", 4},          {"t_months", 150},
                            {"seed", 33},   {"noise_obs", 0.4}, {"noise_state", 1.0},
                            {"a_diag", 0.8}};
  j["data"]["synthetic"]["target_rule"] = {{"alpha0", 0.3}, {"beta0", {1.5}}, {"noise", 0.1}};
  j["groups"] = {"g1"};
  j["model"] = {{"dim_alpha", 4}, {"dim_beta", 4}, {"layers", 1}};
  j["train"] = {{"lr", 0.01},          {"max_epochs", 25}, {"patience", 6},
                {"solver", "euler"},   {"steps_per_month", 2}, {"seed", seed}};
  j["out_dir"] = out_dir;
  return j;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(NOWCAST_CLI_BIN) + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("cmd_synth writes the three artifacts deterministically") {
  const fs::path dir = fresh_dir("nowcast_cli_synth");
  const fs::path spec = dir / "spec.json";
  write_file(spec, R"({"k":1,"d":8,"t_months":240,"seed":7})");

  nowcast::cmd_synth(spec.string(), (dir / "a").string());
  nowcast::cmd_synth(spec.string(), (dir / "b").string());

  for (const char* f : {"panel.csv", "meta.json", "truth.json"}) {
    CHECK(fs::exists(dir / "a" / f));
    CHECK(read_file(dir / "a" / f) == read_file(dir / "b" / f));
  }

  // 240 months x 8 indicators plus quarter-end targets.
  std::ifstream in(dir / "a" / "panel.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);
  CHECK(line == "date,indicator_id,value");
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 240 * 8 + 80);

  const fs::path bad = dir / "bad.json";
  write_file(bad, R"({"k":0})");
  CHECK_THROWS_AS(nowcast::cmd_synth(bad.string(), (dir / "c").string()), nowcast::ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("cmd_train writes artifacts and reruns are byte-identical") {
  const fs::path dir = fresh_dir("nowcast_cli_train");
  nowcast::RunConfig cfg =
      nowcast::RunConfig::from_json(tiny_config_json(3, (dir / "runA").string()), "");
  nowcast::cmd_train(cfg);

  for (const char* f : {"checkpoint.json", "history.csv", "metrics.json", "nowcasts.csv",
                        "factors.csv", "run.log"})
    CHECK(fs::exists(dir / "runA" / f));

  nowcast::RunConfig cfg2 =
      nowcast::RunConfig::from_json(tiny_config_json(3, (dir / "runB").string()), "");
  nowcast::cmd_train(cfg2);

  // Everything except the timestamped sidecar log and the echoed out_dir
  // must match byte for byte; metrics are compared with out_dir zeroed.
  CHECK(read_file(dir / "runA" / "checkpoint.json") == read_file(dir / "runB" / "checkpoint.json"));
  CHECK(read_file(dir / "runA" / "history.csv") == read_file(dir / "runB" / "history.csv"));
  CHECK(read_file(dir / "runA" / "nowcasts.csv") == read_file(dir / "runB" / "nowcasts.csv"));
  auto ja = nlohmann::json::parse(read_file(dir / "runA" / "metrics.json"));
  auto jb = nlohmann::json::parse(read_file(dir / "runB" / "metrics.json"));
  ja["config"]["out_dir"] = "";
  jb["config"]["out_dir"] = "";
  CHECK(ja == jb);
  CHECK(ja.contains("mse"));
  CHECK(ja.contains("mape"));
  CHECK(ja.contains("n_test"));
  CHECK(ja.contains("param_count"));
  CHECK(ja["seed"] == 3);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint reload evaluates bitwise identically") {
  const fs::path dir = fresh_dir("nowcast_cli_ckpt");
  nowcast::RunConfig cfg =
      nowcast::RunConfig::from_json(tiny_config_json(4, (dir / "run").string()), "");
  const auto res = nowcast::run_pipeline(cfg);
  const std::string file = (dir / "ckpt.json").string();
  nowcast::save_checkpoint(res.trained.params, cfg.train.seed, file);
  const auto loaded = nowcast::load_checkpoint(file);
  const auto& stats = res.panel.stats[res.panel.target_column()];
  const auto a =
      nowcast::evaluate(res.trained.params, res.prepared, nowcast::Split::test, cfg.train, stats);
  const auto b =
      nowcast::evaluate(loaded.params, res.prepared, nowcast::Split::test, cfg.train, stats);
  CHECK(a.mse == b.mse);
  CHECK(a.mape == b.mape);
  for (std::size_t i = 0; i < a.per_window.size(); ++i)
    CHECK(a.per_window[i].y_hat == b.per_window[i].y_hat);
  fs::remove_all(dir);
}

TEST_CASE("cmd_ablate_missing writes one row per rate and model") {
  const fs::path dir = fresh_dir("nowcast_cli_ablate");
  nowcast::RunConfig cfg =
      nowcast::RunConfig::from_json(tiny_config_json(5, (dir / "run").string()), "");
  cfg.train.max_epochs = 10;
  nowcast::cmd_ablate_missing(cfg, {0.1, 0.2});
  const std::string csv = read_file(dir / "run" / "ablation.csv");
  std::stringstream ss(csv);
  std::string line;
  std::getline(ss, line);
  CHECK(line == "rate,model,mse,mape");
  std::size_t rows = 0, finite = 0;
  while (std::getline(ss, line)) {
    ++rows;
    std::stringstream ls(line);
    std::string rate, model, mse, mape;
    std::getline(ls, rate, ',');
    std::getline(ls, model, ',');
    std::getline(ls, mse, ',');
    std::getline(ls, mape, ',');
    CHECK((model == "ncde" || model == "dfm"));
    if (std::isfinite(std::stod(mse)) && std::isfinite(std::stod(mape))) ++finite;
  }
  CHECK(rows == 4);
  CHECK(finite == 4);
  fs::remove_all(dir);
}

TEST_CASE("cmd_compare_solvers writes two rows sharing the parameter count") {
  const fs::path dir = fresh_dir("nowcast_cli_solvers");
  nowcast::RunConfig cfg =
      nowcast::RunConfig::from_json(tiny_config_json(6, (dir / "run").string()), "");
  cfg.train.max_epochs = 8;
  nowcast::cmd_compare_solvers(cfg);
  const std::string csv = read_file(dir / "run" / "solvers.csv");
  std::stringstream ss(csv);
  std::string line;
  std::getline(ss, line);
  CHECK(line == "solver,mse,mape");
  std::size_t rows = 0;
  while (std::getline(ss, line)) ++rows;
  CHECK(rows == 2);

  const auto je = nlohmann::json::parse(read_file(dir / "run" / "metrics_euler.json"));
  const auto jr = nlohmann::json::parse(read_file(dir / "run" / "metrics_rk4.json"));
  CHECK(je["param_count"] == jr["param_count"]);
  fs::remove_all(dir);
}

TEST_CASE("cmd_param_report: larger hidden dimension gives a larger count") {
  const fs::path dir = fresh_dir("nowcast_cli_report");
  auto small = tiny_config_json(7, (dir / "small_out").string());
  auto large = tiny_config_json(7, (dir / "large_out").string());
  large["model"]["dim_alpha"] = 8;
  large["model"]["dim_beta"] = 8;
  small["train"]["max_epochs"] = 6;
  large["train"]["max_epochs"] = 6;
  write_file(dir / "small.json", small.dump());
  write_file(dir / "large.json", large.dump());

  nowcast::cmd_param_report({(dir / "small.json").string(), (dir / "large.json").string()},
                            (dir / "report").string());
  const std::string csv = read_file(dir / "report" / "param_report.csv");
  std::stringstream ss(csv);
  std::string line;
  std::getline(ss, line);
  CHECK(line == "model,param_count,mape");
  long counts[2] = {0, 0};
  for (int i = 0; i < 2; ++i) {
    REQUIRE(std::getline(ss, line));
    std::stringstream ls(line);
    std::string name, count, mape;
    std::getline(ls, name, ',');
    std::getline(ls, count, ',');
    std::getline(ls, mape, ',');
    counts[i] = std::stol(count);
    CHECK(name == (i == 0 ? "small" : "large"));
  }
  CHECK(counts[1] > counts[0]);
  fs::remove_all(dir);
}

TEST_CASE("output directory lock rejects concurrent use") {
  const fs::path dir = fresh_dir("nowcast_cli_lock");
  fs::create_directories(dir / "run");
  write_file(dir / "run" / ".lock", "");
  nowcast::RunConfig cfg =
      nowcast::RunConfig::from_json(tiny_config_json(8, (dir / "run").string()), "");
  CHECK_THROWS_AS(nowcast::cmd_train(cfg), nowcast::ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("config validation: data sources are exclusive and files must exist") {
  nlohmann::json j = tiny_config_json(9, "out");
  j["data"]["panel_csv"] = "/nonexistent/panel.csv";
  j["data"]["meta_json"] = "/nonexistent/meta.json";
  CHECK_THROWS_AS(nowcast::RunConfig::from_json(j, ""), nowcast::ConfigError);

  nlohmann::json only_real;
  only_real["data"] = {{"panel_csv", "/nonexistent/panel.csv"},
                       {"meta_json", "/nonexistent/meta.json"}};
  CHECK_THROWS_AS(nowcast::RunConfig::from_json(only_real, ""), nowcast::ConfigError);
}

TEST_CASE("binary: exit codes and single structured stderr line") {
  const fs::path dir = fresh_dir("nowcast_cli_bin");

  // Missing config file: exit 2 with one JSON error line on stderr.
  const std::string err_file = (dir / "stderr.txt").string();
  const std::string cmd = std::string(NOWCAST_CLI_BIN) +
                          " train --config /nonexistent/cfg.json 2> " + err_file;
  const int status = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(status) == 2);
  std::ifstream err(err_file);
  std::string line;
  std::size_t lines = 0;
  nlohmann::json parsed;
  while (std::getline(err, line)) {
    if (line.empty()) continue;
    parsed = nlohmann::json::parse(line);
    ++lines;
  }
  CHECK(lines == 1);
  CHECK(parsed.contains("error"));
  CHECK(parsed["error"]["message"].get<std::string>().find("cfg.json") != std::string::npos);

  // Happy path end to end through the real binary.
  write_file(dir / "spec.json", R"({"k":1,"d":4,"t_months":120,"seed":2})");
  CHECK(run_cli("synth --config " + (dir / "spec.json").string() + " --out " +
                (dir / "synth_out").string()) == 0);
  CHECK(fs::exists(dir / "synth_out" / "panel.csv"));
  fs::remove_all(dir);
}
