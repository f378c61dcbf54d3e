#include "nowcast/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "nowcast/dates.hpp"
#include "nowcast/error.hpp"
#include "nowcast/format.hpp"

namespace nowcast {

void TrainConfig::validate() const {
  if (lr < 0.0 || !std::isfinite(lr)) throw ConfigError("train: lr must be nonnegative");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (patience < 1) throw ConfigError("train: patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  if (steps_per_month < 1) throw ConfigError("train: steps_per_month must be >= 1");
}

ZNextMode parse_z_next_mode(const std::string& name) {
  if (name == "forecast") return ZNextMode::forecast;
  if (name == "smoothed_last") return ZNextMode::smoothed_last;
  throw ConfigError("unknown z_next_mode '" + name + "', expected forecast or smoothed_last");
}

std::vector<PreparedWindow> prepare_windows(const Panel& panel, const WindowSet& windows,
                                            const FactorSet& factors, ZNextMode mode,
                                            bool time_channel) {
  if (!panel.standardized) throw ConfigError("prepare_windows: panel must be standardized");
  const std::size_t d_count = panel.cols();
  const std::size_t target = panel.target_column();
  const ColumnStats& ts = panel.stats[target];

  std::vector<PreparedWindow> out;
  out.reserve(windows.windows.size());
  for (const Window& w : windows.windows) {
    PreparedWindow pw;
    pw.split = w.split;
    pw.target_month = panel.months[w.target_row];

    std::vector<double> times(w.length);
    for (std::size_t i = 0; i < w.length; ++i) times[i] = static_cast<double>(i);
    Matrix vals(w.length, d_count);
    std::vector<std::uint8_t> mask(w.length * d_count, 0);
    for (std::size_t i = 0; i < w.length; ++i) {
      const std::size_t row = w.first_row + i;
      for (std::size_t d = 0; d < d_count; ++d) {
        if (panel.observed(row, d)) {
          vals(i, d) = panel.values(row, d);
          mask[i * d_count + d] = 1;
        }
      }
    }
    pw.path = CubicSplinePath::fit(times, vals, mask, time_channel);
    const auto x_full = pw.path.eval(0.0);
    pw.x1.assign(x_full.begin(), x_full.begin() + static_cast<std::ptrdiff_t>(d_count));

    pw.z.resize(factors.factors());
    for (std::size_t g = 0; g < factors.factors(); ++g) {
      // The window's last input row is target_row-1, so the forecast mode
      // applies the transition once from there.
      pw.z[g] = mode == ZNextMode::forecast ? factors.ar[g] * factors.z(w.target_row - 1, g)
                                            : factors.z(w.target_row, g);
    }

    pw.y_std = panel.values(w.target_row, target);
    pw.y_raw = pw.y_std * ts.sd + ts.mean;
    out.push_back(std::move(pw));
  }
  return out;
}

double regress(double alpha, std::span<const double> beta, std::span<const double> z) {
  if (beta.size() != z.size())
    throw DimensionError("regress: beta has " + std::to_string(beta.size()) + " entries, z has " +
                         std::to_string(z.size()));
  return alpha + dot(beta, z);
}

double mse_loss(std::span<const double> y, std::span<const double> y_hat) {
  if (y.empty()) throw ConfigError("mse_loss: empty input");
  if (y.size() != y_hat.size()) throw DimensionError("mse_loss: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - y_hat[i];
    s += r * r;
  }
  return s / static_cast<double>(y.size());
}

void adam_step(std::vector<double>& params, std::span<const double> grads, AdamState& state,
               double lr) {
  if (grads.size() != params.size()) throw DimensionError("adam: shape mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) throw DimensionError("adam: stale state shape");
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  state.step += 1;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

bool EarlyStop::update(double val_loss) {
  if (!has_best || val_loss < best) {
    best = val_loss;
    has_best = true;
    streak = 0;
    improved_last = true;
  } else {
    ++streak;
    improved_last = false;
  }
  return streak >= patience;
}

namespace {

double forward_window(const NcdeParams& params, const PreparedWindow& w, Solver solver,
                      std::size_t steps_per_month, Tape* tape, Exposure* exposure_out) {
  Exposure e;
  if (tape) {
    ForwardResult fr = ncde_forward(params, w.path, w.x1, solver, steps_per_month);
    e = std::move(fr.exposure);
    *tape = std::move(fr.tape);
  } else {
    e = ncde_predict(params, w.path, w.x1, solver, steps_per_month);
  }
  const double y_hat = regress(e.alpha, e.beta, w.z);
  if (exposure_out) *exposure_out = std::move(e);
  return y_hat;
}

double split_val_mse(const NcdeParams& params, const std::vector<PreparedWindow>& windows,
                     const std::vector<std::size_t>& idx, const TrainConfig& cfg) {
  std::vector<double> y(idx.size()), yh(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const PreparedWindow& w = windows[idx[i]];
    y[i] = w.y_std;
    yh[i] = forward_window(params, w, cfg.solver, cfg.steps_per_month, nullptr, nullptr);
  }
  return mse_loss(y, yh);
}

}  // namespace

TrainResult train(NcdeParams params, const std::vector<PreparedWindow>& windows,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (windows[i].split == Split::train) train_idx.push_back(i);
    if (windows[i].split == Split::val) val_idx.push_back(i);
  }
  if (train_idx.empty() || val_idx.empty())
    throw ConfigError("train: need at least one train and one val window");

  Rng rng(cfg.seed);
  std::vector<double> flat = params.flatten();
  std::vector<double> grad_total(flat.size());
  AdamState adam;
  EarlyStop stopper{.patience = cfg.patience};

  TrainResult result;
  result.params = params;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(train_idx);

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(start + cfg.batch_size, train_idx.size());
      const std::size_t batch = stop - start;
      std::fill(grad_total.begin(), grad_total.end(), 0.0);

      double batch_loss = 0.0;
      for (std::size_t bi = start; bi < stop; ++bi) {
        const PreparedWindow& w = windows[train_idx[bi]];
        Tape tape;
        Exposure e;
        const double y_hat =
            forward_window(params, w, cfg.solver, cfg.steps_per_month, &tape, &e);
        const double resid = y_hat - w.y_std;
        batch_loss += resid * resid;

        // d(batch mse)/d y_hat, then through y_hat = alpha + beta . z.
        const double g = 2.0 * resid / static_cast<double>(batch);
        std::vector<double> beta_bar(w.z.size());
        for (std::size_t k = 0; k < w.z.size(); ++k) beta_bar[k] = g * w.z[k];
        const NcdeGrads grads = backward(params, tape, g, beta_bar);
        const std::vector<double> gflat = grads.flatten();
        for (std::size_t i = 0; i < grad_total.size(); ++i) grad_total[i] += gflat[i];
      }
      batch_loss /= static_cast<double>(batch);
      if (!std::isfinite(batch_loss))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                               " batch " + std::to_string(batches + 1),
                           epoch);
      adam_step(flat, grad_total, adam, cfg.lr);
      params.set_flat(flat);
      epoch_loss += batch_loss;
      ++batches;
    }

    EpochStats stats;
    stats.train_mse = epoch_loss / static_cast<double>(batches);
    stats.val_mse = split_val_mse(params, windows, val_idx, cfg);
    result.history.push_back(stats);
    if (on_epoch) on_epoch(epoch, stats);

    const bool stop = stopper.update(stats.val_mse);
    if (stopper.improved_last) {
      result.params = params;
      result.best_epoch = epoch;
      result.best_val = stats.val_mse;
    }
    if (stop) break;
  }
  return result;
}

namespace {

EvalMetrics finish_metrics(std::vector<Nowcast> records) {
  EvalMetrics m;
  m.n = records.size();
  double se = 0.0, ape = 0.0;
  for (const Nowcast& r : records) {
    const double resid = r.y_true - r.y_hat;
    se += resid * resid;
    if (std::abs(r.y_true) < 1e-12)
      throw ConfigError("evaluate: |y| < 1e-12 at " + format_month(r.target_month) +
                        ", MAPE undefined");
    ape += std::abs(resid / r.y_true);
  }
  m.mse = se / static_cast<double>(records.size());
  m.mape = ape / static_cast<double>(records.size());
  m.per_window = std::move(records);
  return m;
}

}  // namespace

EvalMetrics evaluate(const NcdeParams& params, const std::vector<PreparedWindow>& windows,
                     Split split, const TrainConfig& cfg, const ColumnStats& target_stats) {
  std::vector<Nowcast> records;
  for (const PreparedWindow& w : windows) {
    if (w.split != split) continue;
    Exposure e;
    forward_window(params, w, cfg.solver, cfg.steps_per_month, nullptr, &e);
    Nowcast r;
    r.target_month = w.target_month;
    r.y_true = w.y_raw;
    // De-standardize the whole affine map so alpha + beta . z reproduces
    // y_hat on the original scale exactly.
    r.alpha = e.alpha * target_stats.sd + target_stats.mean;
    r.beta.resize(e.beta.size());
    for (std::size_t k = 0; k < e.beta.size(); ++k) r.beta[k] = e.beta[k] * target_stats.sd;
    r.z = w.z;
    r.y_hat = regress(r.alpha, r.beta, r.z);
    records.push_back(std::move(r));
  }
  if (records.empty()) throw ConfigError("evaluate: no windows in the requested split");
  return finish_metrics(std::move(records));
}

OlsBaseline fit_ols_baseline(const std::vector<PreparedWindow>& windows) {
  std::vector<const PreparedWindow*> train;
  for (const auto& w : windows)
    if (w.split == Split::train) train.push_back(&w);
  if (train.empty()) throw ConfigError("baseline: no training windows");
  const std::size_t k = train.front()->z.size();

  Matrix xtx(k + 1, k + 1);
  Matrix xty(k + 1, 1);
  for (const PreparedWindow* w : train) {
    std::vector<double> row(k + 1, 1.0);
    for (std::size_t j = 0; j < k; ++j) row[1 + j] = w->z[j];
    for (std::size_t i = 0; i <= k; ++i) {
      xty(i, 0) += row[i] * w->y_raw;
      for (std::size_t j = 0; j <= k; ++j) xtx(i, j) += row[i] * row[j];
    }
  }
  Matrix coef;
  try {
    coef = solve_spd(xtx, xty);
  } catch (const NotSpdError&) {
    for (std::size_t i = 0; i <= k; ++i) xtx(i, i) += 1e-8;
    coef = solve_spd(xtx, xty);
  }
  OlsBaseline b;
  b.alpha = coef(0, 0);
  b.beta.resize(k);
  for (std::size_t j = 0; j < k; ++j) b.beta[j] = coef(1 + j, 0);
  return b;
}

EvalMetrics evaluate_baseline(const OlsBaseline& baseline,
                              const std::vector<PreparedWindow>& windows, Split split) {
  std::vector<Nowcast> records;
  for (const PreparedWindow& w : windows) {
    if (w.split != split) continue;
    Nowcast r;
    r.target_month = w.target_month;
    r.y_true = w.y_raw;
    r.alpha = baseline.alpha;
    r.beta = baseline.beta;
    r.z = w.z;
    r.y_hat = regress(r.alpha, r.beta, r.z);
    records.push_back(std::move(r));
  }
  if (records.empty()) throw ConfigError("evaluate: no windows in the requested split");
  return finish_metrics(std::move(records));
}

void write_history(const std::vector<EpochStats>& history, const std::string& csv_path) {
  std::ofstream out(csv_path);
  if (!out) throw ConfigError("cannot write history CSV '" + csv_path + "'");
  out << "epoch,train_mse,val_mse\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    out << (i + 1) << ',' << format_double(history[i].train_mse) << ','
        << format_double(history[i].val_mse) << '\n';
  }
}

void write_nowcasts(const std::vector<Nowcast>& nowcasts, const std::string& csv_path) {
  std::ofstream out(csv_path);
  if (!out) throw ConfigError("cannot write nowcast CSV '" + csv_path + "'");
  const std::size_t k = nowcasts.empty() ? 0 : nowcasts.front().beta.size();
  out << "target_date,y_true,y_hat,alpha";
  for (std::size_t j = 1; j <= k; ++j) out << ",beta_" << j;
  for (std::size_t j = 1; j <= k; ++j) out << ",z_" << j;
  out << '\n';
  for (const Nowcast& r : nowcasts) {
    out << format_month(r.target_month) << ',' << format_double(r.y_true) << ','
        << format_double(r.y_hat) << ',' << format_double(r.alpha);
    for (double b : r.beta) out << ',' << format_double(b);
    for (double z : r.z) out << ',' << format_double(z);
    out << '\n';
  }
}

}  // namespace nowcast
