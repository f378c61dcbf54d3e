#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nowcast/matrix.hpp"
#include "nowcast/panel.hpp"
#include "nowcast/rng.hpp"

namespace nowcast {

// Target rule: y at quarter-end q is
//   alpha(q) + sum_k beta_k(q) z_{q,k} + noise,  with
//   alpha(t)  = alpha0 + alpha1 * bump(t) + season_amp * sin(2 pi t/season_period)
//   beta_k(t) = beta0_k * (1 + beta_amp * bump(t)
//                            + beta_mod * tanh(z_{(k+1) mod K}(t) / 1.5))
// where bump(t) in [0,1] is a sum of raised-cosine crisis episodes. Crisis
// episodes also bias every factor's innovations downward by `depth` state
// noise units, so a sudden drop is visible in the indicators themselves.
// beta_mod couples each exposure to the level of the next factor, a smooth
// state-dependent variation that a fixed-coefficient regression cannot
// represent but that is readable from the indicator paths.
struct CrisisSpec {
  double center_frac = 0.5;  // position as a fraction of the timeline
  double width_months = 5.0;
  double depth = 2.5;
};

struct TargetRule {
  double alpha0 = 0.0;
  double alpha1 = 0.0;             // bump coefficient on the intercept
  std::vector<double> beta0;       // length k; defaults to all ones
  double beta_amp = 0.0;           // bump amplification of the exposures
  double beta_mod = 0.0;           // cross-factor exposure modulation
  double noise = 0.1;
  double season_amp = 0.0;
  double season_period = 48.0;
  std::vector<CrisisSpec> crises;
};

struct SyntheticSpec {
  std::size_t k = 1;
  std::size_t d = 8;
  std::size_t t_months = 240;
  std::uint64_t seed = 7;
  double noise_obs = 0.5;    // idiosyncratic innovation scale
  double noise_state = 1.0;  // factor innovation scale
  double idio_phi = 0.5;
  std::vector<double> a_diag;      // factor AR coefficients; broadcast if size 1
  std::optional<Matrix> loadings;  // explicit d x k loadings; random otherwise
  TargetRule target_rule;

  static SyntheticSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct SyntheticTruth {
  std::vector<double> a_diag;
  Matrix loadings;              // d x k
  Matrix factors;               // t x k
  std::vector<double> alpha_t;  // per month
  Matrix beta_t;                // t x k
  std::vector<double> bump_t;   // crisis intensity per month
};

struct SyntheticResult {
  Panel panel;  // d monthly indicators (groups g1..gk round-robin) + quarterly target "gdp"
  SyntheticTruth truth;
};

// Simulates the factor model: z_t = A z_{t-1} + mu_t, x_t = Lambda z_t + u_t
// with AR(1) idiosyncratic components, plus the quarterly target above.
SyntheticResult generate_synthetic(const SyntheticSpec& spec, Rng& rng);

nlohmann::json truth_to_json(const SyntheticTruth& truth);

}  // namespace nowcast
