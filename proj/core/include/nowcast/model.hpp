#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nowcast/dfm.hpp"
#include "nowcast/ncde.hpp"
#include "nowcast/panel.hpp"
#include "nowcast/windows.hpp"

namespace nowcast {

struct TrainConfig {
  double lr = 1e-2;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 1000;
  std::size_t patience = 5;
  Solver solver = Solver::rk4;
  std::size_t steps_per_month = 4;
  std::uint64_t seed = 42;

  void validate() const;
};

enum class ZNextMode { forecast, smoothed_last };

ZNextMode parse_z_next_mode(const std::string& name);

// One training case, ready for the forward pass: the window's spline path
// (time axis 0..n-1 months), the encoder input, the factor feature vector
// for the target quarter, and the standardized label.
struct PreparedWindow {
  CubicSplinePath path;
  std::vector<double> x1;
  std::vector<double> z;
  double y_std = 0.0;
  double y_raw = 0.0;
  int target_month = 0;
  Split split = Split::train;
};

std::vector<PreparedWindow> prepare_windows(const Panel& panel, const WindowSet& windows,
                                            const FactorSet& factors, ZNextMode mode,
                                            bool time_channel = true);

// y_hat = alpha + beta . z
double regress(double alpha, std::span<const double> beta, std::span<const double> z);

// Mean squared residual; errors on empty or mismatched input.
double mse_loss(std::span<const double> y, std::span<const double> y_hat);

// Standard Adam (beta1 0.9, beta2 0.999, eps 1e-8, bias correction).
struct AdamState {
  std::vector<double> m, v;
  long step = 0;
};

void adam_step(std::vector<double>& params, std::span<const double> grads, AdamState& state,
               double lr);

// Counts epochs since the last strict improvement; signals a stop once the
// streak reaches `patience`.
struct EarlyStop {
  std::size_t patience = 5;
  double best = 0.0;
  bool has_best = false;
  std::size_t streak = 0;

  // Returns true when training should stop after this epoch. `improved()`
  // reports whether this epoch set a new best.
  bool update(double val_loss);
  bool improved_last = false;
};

struct EpochStats {
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct TrainResult {
  NcdeParams params;  // best-validation snapshot
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;  // 1-based
  double best_val = 0.0;
};

using EpochCallback = std::function<void(std::size_t, const EpochStats&)>;

// Alg-style loop: seeded shuffle, mini-batches, forward through the spline
// paths, loss on the standardized target, reverse pass, Adam; early stop on
// the validation loss with the configured patience. Returns the parameters
// of the best validation epoch.
TrainResult train(NcdeParams params, const std::vector<PreparedWindow>& windows,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// One emitted nowcast. alpha/beta are reported on the original target
// scale, so y_hat = alpha + beta . z reconstructs exactly.
struct Nowcast {
  int target_month = 0;
  double y_true = 0.0;
  double y_hat = 0.0;
  double alpha = 0.0;
  std::vector<double> beta;
  std::vector<double> z;
};

struct EvalMetrics {
  double mse = 0.0;
  double mape = 0.0;
  std::size_t n = 0;
  std::vector<Nowcast> per_window;
};

// MSE and MAPE over the given split, on the original target scale.
EvalMetrics evaluate(const NcdeParams& params, const std::vector<PreparedWindow>& windows,
                     Split split, const TrainConfig& cfg, const ColumnStats& target_stats);

// Fixed-coefficient comparison model: OLS of the training targets on the
// training factor features, evaluated with the same (alpha, beta, z)
// regression.
struct OlsBaseline {
  double alpha = 0.0;             // raw scale
  std::vector<double> beta;
};

OlsBaseline fit_ols_baseline(const std::vector<PreparedWindow>& windows);
EvalMetrics evaluate_baseline(const OlsBaseline& baseline,
                              const std::vector<PreparedWindow>& windows, Split split);

void write_history(const std::vector<EpochStats>& history, const std::string& csv_path);
void write_nowcasts(const std::vector<Nowcast>& nowcasts, const std::string& csv_path);

}  // namespace nowcast
