#include <doctest.h>

#include <cmath>

#include "nowcast/dates.hpp"
#include "nowcast/error.hpp"
#include "nowcast/rng.hpp"
#include "nowcast/synthetic.hpp"

using nowcast::SyntheticSpec;

TEST_CASE("noiseless identity loadings reproduce the factors exactly") {
  SyntheticSpec spec;
  spec.k = 2;
  spec.d = 2;
  spec.t_months = 48;
  spec.noise_obs = 0.0;
  spec.noise_state = 0.0;
  spec.a_diag = {0.5};
  nlohmann::json j = spec.to_json();
  j["lambda"] = "identity";
  spec = SyntheticSpec::from_json(j);

  nowcast::Rng rng(spec.seed);
  const auto res = nowcast::generate_synthetic(spec, rng);
  for (std::size_t t = 0; t < 48; ++t)
    for (std::size_t d = 0; d < 2; ++d)
      CHECK(res.panel.values(t, d) == res.truth.factors(t, d));
}

TEST_CASE("panel shape: d monthly indicators plus a quarterly target") {
  SyntheticSpec spec;
  spec.k = 1;
  spec.d = 8;
  spec.t_months = 240;
  spec.seed = 7;
  nowcast::Rng rng(spec.seed);
  const auto res = nowcast::generate_synthetic(spec, rng);
  CHECK(res.panel.rows() == 240);
  CHECK(res.panel.cols() == 9);
  CHECK(res.panel.target_id == "gdp");
  const std::size_t target = res.panel.target_column();
  std::size_t target_obs = 0;
  for (std::size_t t = 0; t < 240; ++t) {
    for (std::size_t d = 0; d + 1 < 9; ++d) CHECK(res.panel.observed(t, d));
    if (res.panel.observed(t, target)) {
      CHECK(nowcast::is_quarter_end(res.panel.months[t]));
      ++target_obs;
    }
  }
  CHECK(target_obs == 80);
}

TEST_CASE("determinism: same seed bitwise equal, different seeds differ") {
  SyntheticSpec spec;
  spec.t_months = 60;
  nowcast::Rng a(42), b(42), c(43);
  const auto ra = nowcast::generate_synthetic(spec, a);
  const auto rb = nowcast::generate_synthetic(spec, b);
  const auto rc = nowcast::generate_synthetic(spec, c);
  bool all_equal = true, any_diff = false;
  for (std::size_t t = 0; t < ra.panel.rows(); ++t)
    for (std::size_t d = 0; d < ra.panel.cols(); ++d) {
      if (ra.panel.observed(t, d)) {
        if (ra.panel.values(t, d) != rb.panel.values(t, d)) all_equal = false;
        if (ra.panel.values(t, d) != rc.panel.values(t, d)) any_diff = true;
      }
    }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("invalid specs are rejected") {
  SyntheticSpec spec;
  spec.k = 0;
  nowcast::Rng rng(1);
  CHECK_THROWS_AS(nowcast::generate_synthetic(spec, rng), nowcast::ConfigError);

  SyntheticSpec unstable;
  unstable.a_diag = {1.01};
  nowcast::Rng rng2(1);
  CHECK_THROWS_WITH_AS(nowcast::generate_synthetic(unstable, rng2), doctest::Contains("unstable"),
                       nowcast::ConfigError);
}

TEST_CASE("crisis episodes dent the intercept and amplify exposures") {
  SyntheticSpec spec;
  spec.k = 1;
  spec.t_months = 120;
  spec.target_rule.alpha0 = 0.5;
  spec.target_rule.alpha1 = -2.0;
  spec.target_rule.beta0 = {1.0};
  spec.target_rule.beta_amp = 0.5;
  spec.target_rule.crises = {{0.5, 6.0, 2.0}};
  nowcast::Rng rng(3);
  const auto res = nowcast::generate_synthetic(spec, rng);
  const std::size_t mid = 60;
  CHECK(res.truth.bump_t[mid] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(res.truth.alpha_t[mid] == doctest::Approx(0.5 - 2.0).epsilon(1e-12));
  CHECK(res.truth.beta_t(mid, 0) == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(res.truth.bump_t[10] == 0.0);
}
