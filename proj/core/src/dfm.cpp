#include "nowcast/dfm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "nowcast/dates.hpp"
#include "nowcast/error.hpp"
#include "nowcast/format.hpp"

namespace nowcast {

namespace {

constexpr double kArClamp = 0.999;
constexpr double kVarFloor = 1e-10;

double clamp_ar(double a) { return std::clamp(a, -kArClamp, kArClamp); }

// Kahan-compensated accumulator for the log-likelihood sum.
struct Accumulator {
  double sum = 0.0, comp = 0.0;
  void add(double x) {
    const double y = x - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
};

}  // namespace

std::vector<double> StateSpaceModel::transition_diag() const {
  std::vector<double> d(dim());
  d[0] = factor_ar;
  std::copy(idio_phi.begin(), idio_phi.end(), d.begin() + 1);
  return d;
}

std::vector<double> StateSpaceModel::state_noise_diag() const {
  std::vector<double> d(dim());
  d[0] = factor_q;
  std::copy(idio_q.begin(), idio_q.end(), d.begin() + 1);
  return d;
}

Matrix StateSpaceModel::transition() const {
  const auto d = transition_diag();
  return Matrix::diagonal(d);
}

Matrix StateSpaceModel::observation() const {
  Matrix h(n_obs(), dim());
  for (std::size_t i = 0; i < n_obs(); ++i) {
    h(i, 0) = loadings(i, 0);
    if (augmented()) h(i, 1 + i) = 1.0;
  }
  return h;
}

Matrix StateSpaceModel::state_cov() const {
  const auto d = state_noise_diag();
  return Matrix::diagonal(d);
}

Matrix StateSpaceModel::obs_cov() const {
  Matrix r(n_obs(), n_obs());
  for (std::size_t i = 0; i < n_obs(); ++i) r(i, i) = obs_floor;
  return r;
}

void StateSpaceModel::validate() const {
  if (!idio_phi.empty() && idio_phi.size() != n_obs())
    throw ConfigError("state-space model: idio block must match indicator count");
  if (idio_q.size() != idio_phi.size())
    throw ConfigError("state-space model: idio_phi/idio_q sizes disagree");
  if (std::abs(factor_ar) >= 1.0) throw ConfigError("state-space model: |factor_ar| must be < 1");
  for (double p : idio_phi)
    if (std::abs(p) >= 1.0) throw ConfigError("state-space model: |idio_phi| must be < 1");
  if (factor_q < 0.0) throw ConfigError("state-space model: negative factor_q");
  for (double q : idio_q)
    if (q < 0.0) throw ConfigError("state-space model: negative idio_q");
  if (obs_floor < 0.0) throw ConfigError("state-space model: negative obs_floor");
  if (init_mean.size() != dim() || init_cov.rows() != dim() || init_cov.cols() != dim())
    throw ConfigError("state-space model: prior shape mismatch");
}

KalmanOutput kalman_filter(const StateSpaceModel& model, const Matrix& y,
                           const std::vector<std::uint8_t>& mask) {
  model.validate();
  const std::size_t t_count = y.rows();
  const std::size_t d_count = y.cols();
  const std::size_t n = model.dim();
  if (d_count != model.n_obs()) throw DimensionError("kalman_filter: panel width != model width");
  if (mask.size() != t_count * d_count) throw DimensionError("kalman_filter: mask size mismatch");

  const auto a_diag = model.transition_diag();
  const auto q_diag = model.state_noise_diag();
  const Matrix h_full = model.observation();

  KalmanOutput out;
  out.pred_mean.resize(t_count);
  out.filt_mean.resize(t_count);
  out.pred_cov.resize(t_count);
  out.filt_cov.resize(t_count);
  Accumulator loglik;

  std::vector<double> x(n);
  Matrix p(n, n);
  std::vector<std::size_t> obs;

  for (std::size_t t = 0; t < t_count; ++t) {
    if (t == 0) {
      x = model.init_mean;
      p = model.init_cov;
    } else {
      // Diagonal transition: predict is a row/column scaling plus Q.
      const auto& xf = out.filt_mean[t - 1];
      const auto& pf = out.filt_cov[t - 1];
      for (std::size_t i = 0; i < n; ++i) x[i] = a_diag[i] * xf[i];
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) p(i, j) = a_diag[i] * a_diag[j] * pf(i, j);
      for (std::size_t i = 0; i < n; ++i) p(i, i) += q_diag[i];
    }
    out.pred_mean[t] = x;
    out.pred_cov[t] = p;

    obs.clear();
    for (std::size_t d = 0; d < d_count; ++d)
      if (mask[t * d_count + d]) obs.push_back(d);

    if (obs.empty()) {
      out.filt_mean[t] = x;
      out.filt_cov[t] = p;
      continue;
    }

    const std::size_t m = obs.size();
    Matrix h(m, n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) h(i, j) = h_full(obs[i], j);

    Matrix ph = matmul(p, transpose(h));       // n x m
    Matrix s = matmul(h, ph);                  // m x m
    for (std::size_t i = 0; i < m; ++i) s(i, i) += model.obs_floor;
    s = symmetrized(s);

    Matrix innov(m, 1);
    for (std::size_t i = 0; i < m; ++i) {
      double pred = 0.0;
      for (std::size_t j = 0; j < n; ++j) pred += h(i, j) * x[j];
      innov(i, 0) = y(t, obs[i]) - pred;
    }

    Cholesky chol = [&]() {
      try {
        return Cholesky(s);
      } catch (const NotSpdError& e) {
        throw NotSpdError("kalman_filter: innovation covariance not SPD at t=" +
                              std::to_string(t) + " (" + e.what() + ")",
                          t);
      }
    }();

    const Matrix sinv_innov = chol.solve(innov);
    const Matrix gain = transpose(chol.solve(transpose(ph)));  // n x m

    std::vector<double> xf(n);
    for (std::size_t i = 0; i < n; ++i) {
      double upd = 0.0;
      for (std::size_t j = 0; j < m; ++j) upd += gain(i, j) * innov(j, 0);
      xf[i] = x[i] + upd;
    }
    Matrix pf = p - matmul(gain, transpose(ph));
    pf = symmetrized(pf);

    out.filt_mean[t] = std::move(xf);
    out.filt_cov[t] = std::move(pf);

    double quad = 0.0;
    for (std::size_t i = 0; i < m; ++i) quad += innov(i, 0) * sinv_innov(i, 0);
    loglik.add(-0.5 * (static_cast<double>(m) * std::log(2.0 * std::numbers::pi) +
                       chol.log_det() + quad));
  }
  out.log_likelihood = loglik.sum;
  if (!std::isfinite(out.log_likelihood))
    throw NumericError("kalman_filter: non-finite log-likelihood");
  return out;
}

KalmanOutput kalman_smooth(const StateSpaceModel& model, KalmanOutput filtered) {
  const std::size_t t_count = filtered.filt_mean.size();
  const std::size_t n = model.dim();
  const auto a_diag = model.transition_diag();

  KalmanOutput out = std::move(filtered);
  out.smooth_mean.resize(t_count);
  out.smooth_cov.resize(t_count);
  out.lag_one.assign(t_count, Matrix());
  out.smoothed = true;
  if (t_count == 0) return out;

  out.smooth_mean[t_count - 1] = out.filt_mean[t_count - 1];
  out.smooth_cov[t_count - 1] = out.filt_cov[t_count - 1];

  for (std::size_t t = t_count - 1; t-- > 0;) {
    // J_t = P_t|t A^T P_{t+1|t}^{-1}; with a diagonal A the first product
    // is a column scaling.
    Matrix pa(n, n);
    const Matrix& pf = out.filt_cov[t];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) pa(i, j) = pf(i, j) * a_diag[j];
    const Matrix j_t = transpose(solve_spd(out.pred_cov[t + 1], transpose(pa)));

    const auto& ms_next = out.smooth_mean[t + 1];
    const auto& mp_next = out.pred_mean[t + 1];
    std::vector<double> ms(n);
    for (std::size_t i = 0; i < n; ++i) {
      double upd = 0.0;
      for (std::size_t j = 0; j < n; ++j) upd += j_t(i, j) * (ms_next[j] - mp_next[j]);
      ms[i] = out.filt_mean[t][i] + upd;
    }
    Matrix delta = out.smooth_cov[t + 1] - out.pred_cov[t + 1];
    Matrix ps = pf + matmul(matmul(j_t, delta), transpose(j_t));
    out.smooth_mean[t] = std::move(ms);
    out.smooth_cov[t] = symmetrized(ps);

    // Cov(x_{t+1}, x_t | Y) = P^s_{t+1} J_t^T, exact for the RTS smoother.
    out.lag_one[t + 1] = matmul(out.smooth_cov[t + 1], transpose(j_t));
  }
  return out;
}

StateSpaceModel pca_init(const Matrix& y, const std::vector<std::uint8_t>& mask) {
  const std::size_t t_count = y.rows(), d_count = y.cols();
  if (mask.size() != t_count * d_count) throw DimensionError("pca_init: mask size mismatch");
  std::size_t observed_rows = 0;
  for (std::size_t t = 0; t < t_count; ++t) {
    for (std::size_t d = 0; d < d_count; ++d) {
      if (mask[t * d_count + d]) {
        ++observed_rows;
        break;
      }
    }
  }
  if (observed_rows < 2) throw ConfigError("pca_init: fewer than 2 observed rows");

  // Column means over observed cells; missing cells are mean-filled for the
  // covariance estimate only.
  std::vector<double> mean(d_count, 0.0);
  for (std::size_t d = 0; d < d_count; ++d) {
    double sum = 0.0;
    std::size_t cnt = 0;
    for (std::size_t t = 0; t < t_count; ++t)
      if (mask[t * d_count + d]) {
        sum += y(t, d);
        ++cnt;
      }
    if (cnt == 0) throw ConfigError("pca_init: column " + std::to_string(d) + " fully missing");
    mean[d] = sum / static_cast<double>(cnt);
  }
  Matrix centered(t_count, d_count);
  for (std::size_t t = 0; t < t_count; ++t)
    for (std::size_t d = 0; d < d_count; ++d)
      centered(t, d) = mask[t * d_count + d] ? y(t, d) - mean[d] : 0.0;

  Matrix cov(d_count, d_count);
  for (std::size_t i = 0; i < d_count; ++i)
    for (std::size_t j = i; j < d_count; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < t_count; ++t) s += centered(t, i) * centered(t, j);
      cov(i, j) = cov(j, i) = s / static_cast<double>(t_count);
    }

  const SymEig eig = sym_eig(cov);
  const double lead = eig.values[0];
  if (!(lead > 1e-12)) throw ConfigError("pca_init: leading eigenvalue not positive");

  std::vector<double> v(d_count);
  double vmean = 0.0;
  for (std::size_t d = 0; d < d_count; ++d) {
    v[d] = eig.vectors(d, 0);
    vmean += v[d];
  }
  if (vmean < 0.0)
    for (double& x : v) x = -x;  // loading vector gets a positive mean

  const double scale = std::sqrt(lead);
  StateSpaceModel model;
  model.loadings = Matrix(d_count, 1);
  for (std::size_t d = 0; d < d_count; ++d) model.loadings(d, 0) = v[d] * scale;

  // Projected factor path and its AR(1) fit.
  std::vector<double> f(t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    double s = 0.0;
    for (std::size_t d = 0; d < d_count; ++d) s += centered(t, d) * v[d];
    f[t] = s / scale;
  }
  double num = 0.0, den = 0.0;
  for (std::size_t t = 1; t < t_count; ++t) {
    num += f[t] * f[t - 1];
    den += f[t - 1] * f[t - 1];
  }
  model.factor_ar = den > 0.0 ? clamp_ar(num / den) : 0.0;
  double q = 0.0;
  for (std::size_t t = 1; t < t_count; ++t) {
    const double e = f[t] - model.factor_ar * f[t - 1];
    q += e * e;
  }
  model.factor_q = std::max(t_count > 1 ? q / static_cast<double>(t_count - 1) : 1.0, 1e-8);

  // Observation residual variances seed the idiosyncratic AR(1) states.
  model.idio_phi.assign(d_count, 0.5);
  model.idio_q.resize(d_count);
  for (std::size_t d = 0; d < d_count; ++d) {
    double ss = 0.0;
    std::size_t cnt = 0;
    for (std::size_t t = 0; t < t_count; ++t) {
      if (!mask[t * d_count + d]) continue;
      const double e = centered(t, d) - model.loadings(d, 0) * f[t];
      ss += e * e;
      ++cnt;
    }
    const double resid_var = cnt > 0 ? std::max(ss / static_cast<double>(cnt), 1e-6) : 1e-2;
    model.idio_q[d] = resid_var * (1.0 - 0.25);
  }

  model.obs_floor = 1e-4;
  model.init_mean.assign(model.dim(), 0.0);
  model.init_cov = Matrix(model.dim(), model.dim());
  model.init_cov(0, 0) = model.factor_q / (1.0 - model.factor_ar * model.factor_ar);
  for (std::size_t d = 0; d < d_count; ++d)
    model.init_cov(1 + d, 1 + d) = model.idio_q[d] / (1.0 - 0.25);
  model.validate();
  return model;
}

namespace {

// Flips the factor sign jointly with the loadings so the loading vector has
// a positive mean; the likelihood is invariant under this.
void fix_factor_sign(StateSpaceModel& model, KalmanOutput& out) {
  double lmean = 0.0;
  for (std::size_t d = 0; d < model.n_obs(); ++d) lmean += model.loadings(d, 0);
  if (lmean >= 0.0) return;
  for (std::size_t d = 0; d < model.n_obs(); ++d) model.loadings(d, 0) = -model.loadings(d, 0);
  model.init_mean[0] = -model.init_mean[0];
  const std::size_t n = model.dim();
  auto flip_cov = [n](Matrix& p) {
    if (p.rows() != n) return;
    for (std::size_t j = 1; j < n; ++j) {
      p(0, j) = -p(0, j);
      p(j, 0) = -p(j, 0);
    }
  };
  flip_cov(model.init_cov);
  auto flip_series = [&](std::vector<std::vector<double>>& means, std::vector<Matrix>& covs) {
    for (auto& m : means)
      if (!m.empty()) m[0] = -m[0];
    for (auto& p : covs) flip_cov(p);
  };
  flip_series(out.pred_mean, out.pred_cov);
  flip_series(out.filt_mean, out.filt_cov);
  flip_series(out.smooth_mean, out.smooth_cov);
  for (auto& l : out.lag_one) {
    if (l.rows() != n) continue;
    for (std::size_t j = 1; j < n; ++j) {
      l(0, j) = -l(0, j);
      l(j, 0) = -l(j, 0);
    }
  }
}

void m_step(StateSpaceModel& model, const Matrix& y, const std::vector<std::uint8_t>& mask,
            const KalmanOutput& sm) {
  const std::size_t t_count = y.rows(), d_count = y.cols();
  const std::size_t n = model.dim();

  // Transition block: the augmented transition is diagonal, so each state
  // row is a scalar regression on its own lag.
  if (t_count > 1) {
    for (std::size_t i = 0; i < n; ++i) {
      double sxx = 0.0, sxy = 0.0, syy = 0.0;
      for (std::size_t t = 1; t < t_count; ++t) {
        const double m_prev = sm.smooth_mean[t - 1][i];
        const double m_cur = sm.smooth_mean[t][i];
        sxx += m_prev * m_prev + sm.smooth_cov[t - 1](i, i);
        sxy += m_cur * m_prev + sm.lag_one[t](i, i);
        syy += m_cur * m_cur + sm.smooth_cov[t](i, i);
      }
      const double coef = sxx > 0.0 ? clamp_ar(sxy / sxx) : 0.0;
      const double q = (syy - 2.0 * coef * sxy + coef * coef * sxx) /
                       static_cast<double>(t_count - 1);
      if (i == 0) {
        model.factor_ar = coef;
        model.factor_q = std::max(q, kVarFloor);
      } else {
        model.idio_phi[i - 1] = coef;
        model.idio_q[i - 1] = std::max(q, kVarFloor);
      }
    }
  }

  // Loadings: per-indicator regression of the (idio-corrected) observation
  // on the factor, over observed cells only. R stays at its fixed floor.
  for (std::size_t d = 0; d < d_count; ++d) {
    double num = 0.0, den = 0.0;
    bool any = false;
    for (std::size_t t = 0; t < t_count; ++t) {
      if (!mask[t * d_count + d]) continue;
      any = true;
      const double mf = sm.smooth_mean[t][0];
      const double eff = mf * mf + sm.smooth_cov[t](0, 0);
      double cross = y(t, d) * mf;
      if (model.augmented()) {
        cross -= mf * sm.smooth_mean[t][1 + d] + sm.smooth_cov[t](0, 1 + d);
      }
      num += cross;
      den += eff;
    }
    if (any && den > 0.0) model.loadings(d, 0) = num / den;
  }

  // Prior: exact M-step for a prior placed on the first state. No jitter
  // here, exactness keeps the likelihood sequence monotone; predicted
  // covariances stay PD through the Q floor.
  model.init_mean = sm.smooth_mean[0];
  model.init_cov = symmetrized(sm.smooth_cov[0]);
}

}  // namespace

EmResult em_loop(StateSpaceModel model, const Matrix& y,
                 const std::vector<std::uint8_t>& mask, const EmConfig& cfg) {
  if (cfg.max_iter < 1) throw ConfigError("em: max_iter must be >= 1");
  EmResult res;
  double prev = 0.0;
  bool have_prev = false;
  for (std::size_t iter = 0;; ++iter) {
    KalmanOutput out = kalman_smooth(model, kalman_filter(model, y, mask));
    const double ll = out.log_likelihood;
    res.loglik.push_back(ll);
    if (have_prev && ll < prev - 1e-8 * (1.0 + std::abs(prev))) {
      throw NumericError("em: log-likelihood decreased from " + std::to_string(prev) + " to " +
                             std::to_string(ll) + " at iteration " + std::to_string(iter),
                         iter);
    }
    const bool converged =
        have_prev && std::abs(ll - prev) / (std::abs(ll) + 1e-10) < cfg.tol;
    if (converged || iter >= cfg.max_iter) {
      res.model = std::move(model);
      res.output = std::move(out);
      break;
    }
    m_step(model, y, mask, out);
    ++res.m_steps;
    prev = ll;
    have_prev = true;
  }
  fix_factor_sign(res.model, res.output);
  return res;
}

EmResult em_fit(const Matrix& y, const std::vector<std::uint8_t>& mask, const EmConfig& cfg) {
  return em_loop(pca_init(y, mask), y, mask, cfg);
}

FactorSet extract_factors(const Panel& panel, const std::vector<std::string>& groups,
                          const EmConfig& cfg) {
  if (!panel.standardized)
    throw ConfigError("extract_factors: panel must be standardized first");
  if (groups.empty()) throw ConfigError("extract_factors: no groups given");

  FactorSet set;
  set.groups = groups;
  set.z = Matrix(panel.rows(), groups.size());
  set.z_next.resize(groups.size());
  set.ar.resize(groups.size());

  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto cols = panel.group_columns(groups[g]);
    if (cols.empty()) throw ConfigError("extract_factors: group '" + groups[g] + "' is empty");
    Matrix y(panel.rows(), cols.size());
    std::vector<std::uint8_t> mask(panel.rows() * cols.size(), 0);
    for (std::size_t t = 0; t < panel.rows(); ++t)
      for (std::size_t j = 0; j < cols.size(); ++j) {
        if (panel.observed(t, cols[j])) {
          y(t, j) = panel.values(t, cols[j]);
          mask[t * cols.size() + j] = 1;
        }
      }
    EmResult res;
    try {
      res = em_fit(y, mask, cfg);
    } catch (const Error& e) {
      throw NumericError("group '" + groups[g] + "': " + e.what());
    }
    for (std::size_t t = 0; t < panel.rows(); ++t) set.z(t, g) = res.output.smooth_mean[t][0];
    set.ar[g] = res.model.factor_ar;
    set.z_next[g] = res.model.factor_ar * set.z(panel.rows() - 1, g);
    set.models.push_back(std::move(res.model));
  }
  return set;
}

void write_factors(const FactorSet& factors, const Panel& panel, const std::string& csv_path) {
  std::ofstream out(csv_path);
  if (!out) throw ConfigError("cannot write factors CSV '" + csv_path + "'");
  out << "date,group,factor_value\n";
  for (std::size_t t = 0; t < panel.rows(); ++t) {
    for (std::size_t g = 0; g < factors.factors(); ++g) {
      out << format_month(panel.months[t]) << ',' << factors.groups[g] << ','
          << format_double(factors.z(t, g)) << '\n';
    }
  }
}

}  // namespace nowcast
