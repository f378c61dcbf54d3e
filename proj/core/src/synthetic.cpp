#include "nowcast/synthetic.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "nowcast/dates.hpp"
#include "nowcast/error.hpp"

namespace nowcast {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr int kStartMonth = 2000 * 12;  // grid begins at 2000-01

double raised_cosine(double t, double center, double half_width) {
  const double u = (t - center) / half_width;
  if (std::abs(u) >= 1.0) return 0.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * u));
}

}  // namespace

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  s.k = j.value("k", s.k);
  s.d = j.value("d", s.d);
  s.t_months = j.value("t_months", s.t_months);
  s.seed = j.value("seed", s.seed);
  s.noise_obs = j.value("noise_obs", s.noise_obs);
  s.noise_state = j.value("noise_state", s.noise_state);
  s.idio_phi = j.value("idio_phi", s.idio_phi);
  if (j.contains("a_diag")) {
    if (j["a_diag"].is_number()) {
      s.a_diag = {j["a_diag"].get<double>()};
    } else {
      s.a_diag = j["a_diag"].get<std::vector<double>>();
    }
  }
  if (j.contains("lambda")) {
    if (j["lambda"].is_string() && j["lambda"].get<std::string>() == "identity") {
      Matrix l(s.d, s.k);
      for (std::size_t i = 0; i < std::min(s.d, s.k); ++i) l(i, i) = 1.0;
      s.loadings = l;
    } else {
      const auto rows = j["lambda"].get<std::vector<std::vector<double>>>();
      Matrix l(rows.size(), rows.empty() ? 0 : rows[0].size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != l.cols()) throw ParseError("synthetic spec: ragged lambda");
        for (std::size_t jj = 0; jj < l.cols(); ++jj) l(i, jj) = rows[i][jj];
      }
      s.loadings = l;
    }
  }
  if (j.contains("target_rule")) {
    const auto& r = j["target_rule"];
    s.target_rule.alpha0 = r.value("alpha0", s.target_rule.alpha0);
    s.target_rule.alpha1 = r.value("alpha1", s.target_rule.alpha1);
    if (r.contains("beta0")) s.target_rule.beta0 = r["beta0"].get<std::vector<double>>();
    s.target_rule.beta_amp = r.value("beta_amp", s.target_rule.beta_amp);
    s.target_rule.beta_mod = r.value("beta_mod", s.target_rule.beta_mod);
    s.target_rule.noise = r.value("noise", s.target_rule.noise);
    s.target_rule.season_amp = r.value("season_amp", s.target_rule.season_amp);
    s.target_rule.season_period = r.value("season_period", s.target_rule.season_period);
    if (r.contains("crises")) {
      for (const auto& c : r["crises"]) {
        CrisisSpec cs;
        cs.center_frac = c.value("center_frac", cs.center_frac);
        cs.width_months = c.value("width_months", cs.width_months);
        cs.depth = c.value("depth", cs.depth);
        s.target_rule.crises.push_back(cs);
      }
    }
  }
  return s;
}

nlohmann::json SyntheticSpec::to_json() const {
  nlohmann::json j;
  j["k"] = k;
  j["d"] = d;
  j["t_months"] = t_months;
  j["seed"] = seed;
  j["noise_obs"] = noise_obs;
  j["noise_state"] = noise_state;
  j["idio_phi"] = idio_phi;
  if (!a_diag.empty()) j["a_diag"] = a_diag;
  if (loadings) {
    std::vector<std::vector<double>> rows(loadings->rows());
    for (std::size_t i = 0; i < loadings->rows(); ++i) {
      rows[i].resize(loadings->cols());
      for (std::size_t jj = 0; jj < loadings->cols(); ++jj) rows[i][jj] = (*loadings)(i, jj);
    }
    j["lambda"] = rows;
  }
  nlohmann::json r;
  r["alpha0"] = target_rule.alpha0;
  r["alpha1"] = target_rule.alpha1;
  if (!target_rule.beta0.empty()) r["beta0"] = target_rule.beta0;
  r["beta_amp"] = target_rule.beta_amp;
  r["beta_mod"] = target_rule.beta_mod;
  r["noise"] = target_rule.noise;
  r["season_amp"] = target_rule.season_amp;
  r["season_period"] = target_rule.season_period;
  r["crises"] = nlohmann::json::array();
  for (const auto& c : target_rule.crises)
    r["crises"].push_back({{"center_frac", c.center_frac},
                           {"width_months", c.width_months},
                           {"depth", c.depth}});
  j["target_rule"] = r;
  return j;
}

SyntheticResult generate_synthetic(const SyntheticSpec& spec, Rng& rng) {
  if (spec.k < 1) throw ConfigError("synthetic: k must be >= 1");
  if (spec.d < 1) throw ConfigError("synthetic: d must be >= 1");
  if (spec.t_months < 24) throw ConfigError("synthetic: t_months must be >= 24");

  std::vector<double> a(spec.k, 0.7);
  if (!spec.a_diag.empty()) {
    if (spec.a_diag.size() == 1) {
      a.assign(spec.k, spec.a_diag[0]);
    } else if (spec.a_diag.size() == spec.k) {
      a = spec.a_diag;
    } else {
      throw ConfigError("synthetic: a_diag must have 1 or k entries");
    }
  }
  for (double ai : a)
    if (std::abs(ai) >= 1.0)
      throw ConfigError("synthetic: unstable transition, |a|=" + std::to_string(std::abs(ai)) +
                        " >= 1");

  Matrix lambda(spec.d, spec.k);
  if (spec.loadings) {
    if (spec.loadings->rows() != spec.d || spec.loadings->cols() != spec.k)
      throw ConfigError("synthetic: lambda must be d x k");
    lambda = *spec.loadings;
  } else {
    // Block loadings: indicator i loads on factor i mod k only, magnitude
    // bounded away from zero, mostly positive signs.
    for (std::size_t i = 0; i < spec.d; ++i) {
      const std::size_t g = i % spec.k;
      const double mag = rng.uniform(0.6, 1.4);
      const double sign = rng.uniform() < 0.8 ? 1.0 : -1.0;
      lambda(i, g) = sign * mag;
    }
  }

  std::vector<double> beta0 = spec.target_rule.beta0;
  if (beta0.empty()) beta0.assign(spec.k, 1.0);
  if (beta0.size() != spec.k) throw ConfigError("synthetic: beta0 must have k entries");

  const std::size_t t_count = spec.t_months;
  const auto& rule = spec.target_rule;

  std::vector<double> bump(t_count, 0.0);
  for (std::size_t t = 0; t < t_count; ++t) {
    for (const auto& c : rule.crises) {
      bump[t] += raised_cosine(static_cast<double>(t), c.center_frac * t_count,
                               std::max(c.width_months, 1.0));
    }
    bump[t] = std::min(bump[t], 1.0);
  }

  // Factor paths; crisis episodes bias every factor's innovations downward,
  // a global-recession analogue.
  Matrix z(t_count, spec.k);
  std::vector<double> state(spec.k);
  for (std::size_t kk = 0; kk < spec.k; ++kk) state[kk] = rng.normal();
  for (std::size_t t = 0; t < t_count; ++t) {
    double drop = 0.0;
    for (const auto& c : rule.crises)
      drop += c.depth * raised_cosine(static_cast<double>(t), c.center_frac * t_count,
                                      std::max(c.width_months, 1.0));
    for (std::size_t kk = 0; kk < spec.k; ++kk) {
      if (t > 0) {
        const double shock = spec.noise_state * (rng.normal() - drop);
        state[kk] = a[kk] * state[kk] + shock;
      }
      z(t, kk) = state[kk];
    }
  }

  // Idiosyncratic AR(1) components and the observed indicators.
  Matrix x(t_count, spec.d);
  std::vector<double> idio(spec.d);
  const double phi = spec.idio_phi;
  for (std::size_t i = 0; i < spec.d; ++i) {
    const double stat = spec.noise_obs / std::sqrt(std::max(1.0 - phi * phi, 1e-12));
    idio[i] = spec.noise_obs > 0.0 ? stat * rng.normal() : 0.0;
  }
  for (std::size_t t = 0; t < t_count; ++t) {
    for (std::size_t i = 0; i < spec.d; ++i) {
      if (t > 0) idio[i] = phi * idio[i] + spec.noise_obs * rng.normal();
      double common = 0.0;
      for (std::size_t kk = 0; kk < spec.k; ++kk) common += lambda(i, kk) * z(t, kk);
      x(t, i) = common + idio[i];
    }
  }

  // Quarterly target from the rule.
  std::vector<double> alpha_t(t_count);
  Matrix beta_t(t_count, spec.k);
  for (std::size_t t = 0; t < t_count; ++t) {
    alpha_t[t] = rule.alpha0 + rule.alpha1 * bump[t] +
                 rule.season_amp *
                     std::sin(2.0 * std::numbers::pi * static_cast<double>(t) /
                              rule.season_period);
    for (std::size_t kk = 0; kk < spec.k; ++kk) {
      const double partner = z(t, (kk + 1) % spec.k);
      beta_t(t, kk) = beta0[kk] * (1.0 + rule.beta_amp * bump[t] +
                                   rule.beta_mod * std::tanh(partner / 1.5));
    }
  }

  Panel panel;
  panel.months.resize(t_count);
  for (std::size_t t = 0; t < t_count; ++t) panel.months[t] = kStartMonth + static_cast<int>(t);
  const std::size_t d_total = spec.d + 1;
  panel.values = Matrix(t_count, d_total, kNan);
  panel.mask.assign(t_count * d_total, 0);
  panel.stats.assign(d_total, {});
  for (std::size_t i = 0; i < spec.d; ++i) {
    IndicatorMeta m;
    m.id = "x" + std::to_string(i + 1);
    m.frequency = Frequency::monthly;
    m.groups = {"g" + std::to_string(i % spec.k + 1)};
    panel.metas.push_back(std::move(m));
  }
  IndicatorMeta tm;
  tm.id = "gdp";
  tm.frequency = Frequency::quarterly;
  tm.groups = {"target"};
  panel.metas.push_back(std::move(tm));
  panel.target_id = "gdp";

  for (std::size_t t = 0; t < t_count; ++t)
    for (std::size_t i = 0; i < spec.d; ++i) panel.set_cell(t, i, x(t, i));
  for (std::size_t t = 0; t < t_count; ++t) {
    if (!is_quarter_end(panel.months[t])) continue;
    double y = alpha_t[t];
    for (std::size_t kk = 0; kk < spec.k; ++kk) y += beta_t(t, kk) * z(t, kk);
    y += rule.noise * rng.normal();
    panel.set_cell(t, spec.d, y);
  }
  panel.validate();

  SyntheticResult res;
  res.panel = std::move(panel);
  res.truth.a_diag = a;
  res.truth.loadings = std::move(lambda);
  res.truth.factors = std::move(z);
  res.truth.alpha_t = std::move(alpha_t);
  res.truth.beta_t = std::move(beta_t);
  res.truth.bump_t = std::move(bump);
  return res;
}

nlohmann::json truth_to_json(const SyntheticTruth& truth) {
  auto matrix_rows = [](const Matrix& m) {
    std::vector<std::vector<double>> rows(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
      rows[i].resize(m.cols());
      for (std::size_t j = 0; j < m.cols(); ++j) rows[i][j] = m(i, j);
    }
    return rows;
  };
  nlohmann::json j;
  j["a_diag"] = truth.a_diag;
  j["lambda"] = matrix_rows(truth.loadings);
  j["factors"] = matrix_rows(truth.factors);
  j["alpha_t"] = truth.alpha_t;
  j["beta_t"] = matrix_rows(truth.beta_t);
  j["bump_t"] = truth.bump_t;
  return j;
}

}  // namespace nowcast
