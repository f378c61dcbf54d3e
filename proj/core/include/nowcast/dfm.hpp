#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nowcast/matrix.hpp"
#include "nowcast/panel.hpp"

namespace nowcast {

// Linear-Gaussian state-space model for one indicator group: a single
// latent factor with AR(1) dynamics, optionally augmented with one AR(1)
// idiosyncratic state per indicator (unit loading). The observation noise
// is then only a small diagonal floor kept for numerical stability.
//
// State layout: [factor, idio_1, ..., idio_D] (idio block may be absent).
// The full transition matrix is diagonal: diag(factor_ar, idio_phi...).
struct StateSpaceModel {
  double factor_ar = 0.0;
  double factor_q = 1.0;
  std::vector<double> idio_phi;  // empty or one per indicator
  std::vector<double> idio_q;
  Matrix loadings;               // D x 1
  double obs_floor = 1e-4;       // diagonal R
  std::vector<double> init_mean; // prior on the first state
  Matrix init_cov;

  std::size_t n_obs() const { return loadings.rows(); }
  bool augmented() const { return !idio_phi.empty(); }
  std::size_t dim() const { return 1 + idio_phi.size(); }

  std::vector<double> transition_diag() const;
  std::vector<double> state_noise_diag() const;

  // Dense views used by oracles and exports.
  Matrix transition() const;
  Matrix observation() const;  // D x dim, [loadings | I] when augmented
  Matrix state_cov() const;
  Matrix obs_cov() const;

  void validate() const;
};

struct KalmanOutput {
  std::vector<std::vector<double>> pred_mean, filt_mean, smooth_mean;
  std::vector<Matrix> pred_cov, filt_cov, smooth_cov;
  // lag_one[t] = Cov(x_t, x_{t-1} | all observations) for t >= 1.
  std::vector<Matrix> lag_one;
  double log_likelihood = 0.0;
  bool smoothed = false;
};

// Missing-data Kalman filter: at each step the observation equation is
// restricted to the observed rows of the mask; fully missing timesteps
// reduce to the prediction step. The log-likelihood accumulates Gaussian
// innovation terms over observed dimensions only.
KalmanOutput kalman_filter(const StateSpaceModel& model, const Matrix& y,
                           const std::vector<std::uint8_t>& mask);

// Rauch-Tung-Striebel backward pass; fills the smoothed moments and the
// lag-one cross-covariances needed by the EM M-step.
KalmanOutput kalman_smooth(const StateSpaceModel& model, KalmanOutput filtered);

// PCA initialization: loadings from the leading eigenpair of the observed
// covariance (missing cells mean-filled for that estimate only), AR
// coefficients from regressing the projected factor on its lag.
StateSpaceModel pca_init(const Matrix& y, const std::vector<std::uint8_t>& mask);

struct EmConfig {
  std::size_t max_iter = 500;
  double tol = 1e-6;  // relative log-likelihood change
};

struct EmResult {
  StateSpaceModel model;
  KalmanOutput output;           // smoothed, consistent with `model`
  std::vector<double> loglik;    // one entry per E-step
  std::size_t m_steps = 0;
};

// EM iteration driven from an explicit starting model.
EmResult em_loop(StateSpaceModel model, const Matrix& y,
                 const std::vector<std::uint8_t>& mask, const EmConfig& cfg);

// pca_init followed by em_loop.
EmResult em_fit(const Matrix& y, const std::vector<std::uint8_t>& mask, const EmConfig& cfg);

// Smoothed factors of every group, one column per group, plus the one-step
// transition forecast past the final row.
struct FactorSet {
  std::vector<std::string> groups;
  Matrix z;                        // T x K smoothed factors
  std::vector<double> z_next;      // factor_ar * z[T-1] per group
  std::vector<double> ar;          // per-group transition coefficient
  std::vector<StateSpaceModel> models;

  std::size_t factors() const { return groups.size(); }
};

// Runs em_fit independently on each group's sub-panel. The panel must be
// standardized first.
FactorSet extract_factors(const Panel& panel, const std::vector<std::string>& groups,
                          const EmConfig& cfg = {});

// CSV export `date,group,factor_value` for external plotting.
void write_factors(const FactorSet& factors, const Panel& panel, const std::string& csv_path);

}  // namespace nowcast
