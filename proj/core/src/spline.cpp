#include "nowcast/spline.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nowcast/error.hpp"

namespace nowcast {

namespace {

// Index of the piece whose interval brackets t; clamps to the end pieces
// for t outside the knot span (the caller handles extension semantics).
std::size_t piece_index(const std::vector<double>& knot_t, double t) {
  if (t <= knot_t.front()) return 0;
  if (t >= knot_t.back()) return knot_t.size() - 2;
  const auto it = std::upper_bound(knot_t.begin(), knot_t.end(), t);
  return static_cast<std::size_t>(it - knot_t.begin()) - 1;
}

}  // namespace

ChannelSpline fit_natural_spline(std::span<const double> t, std::span<const double> y) {
  const std::size_t m = t.size();
  if (m < 2) throw ConfigError("spline: need at least 2 knots");
  for (std::size_t i = 1; i < m; ++i)
    if (!(t[i] > t[i - 1])) throw ConfigError("spline: knot times must be strictly increasing");

  ChannelSpline s;
  s.knot_t.assign(t.begin(), t.end());
  s.knot_y.assign(y.begin(), y.end());
  const std::size_t n = m - 1;  // intervals
  s.b.resize(n);
  s.c.assign(m, 0.0);
  s.d.resize(n);

  std::vector<double> h(n);
  for (std::size_t i = 0; i < n; ++i) h[i] = t[i + 1] - t[i];

  if (n > 1) {
    // Thomas algorithm on the interior quadratic coefficients.
    std::vector<double> diag(m, 1.0), mu(m, 0.0), z(m, 0.0);
    for (std::size_t i = 1; i < n; ++i) {
      const double alpha =
          3.0 * (y[i + 1] - y[i]) / h[i] - 3.0 * (y[i] - y[i - 1]) / h[i - 1];
      diag[i] = 2.0 * (t[i + 1] - t[i - 1]) - h[i - 1] * mu[i - 1];
      mu[i] = h[i] / diag[i];
      z[i] = (alpha - h[i - 1] * z[i - 1]) / diag[i];
    }
    for (std::size_t j = n; j-- > 1;) s.c[j] = z[j] - mu[j] * s.c[j + 1];
  }
  for (std::size_t i = 0; i < n; ++i) {
    s.b[i] = (y[i + 1] - y[i]) / h[i] - h[i] * (s.c[i + 1] + 2.0 * s.c[i]) / 3.0;
    s.d[i] = (s.c[i + 1] - s.c[i]) / (3.0 * h[i]);
  }
  s.c.resize(n);  // c[n] == 0 by the natural condition, drop it
  return s;
}

double ChannelSpline::value(double t) const {
  if (t < knot_t.front()) return knot_y.front() + b.front() * (t - knot_t.front());
  if (t > knot_t.back()) {
    const std::size_t i = knot_t.size() - 2;
    const double h = knot_t[i + 1] - knot_t[i];
    const double end_slope = b[i] + h * (2.0 * c[i] + 3.0 * h * d[i]);
    return knot_y.back() + end_slope * (t - knot_t.back());
  }
  const std::size_t i = piece_index(knot_t, t);
  const double dt = t - knot_t[i];
  return knot_y[i] + dt * (b[i] + dt * (c[i] + dt * d[i]));
}

double ChannelSpline::slope(double t) const {
  if (t < knot_t.front()) return b.front();
  if (t > knot_t.back()) {
    const std::size_t i = knot_t.size() - 2;
    const double h = knot_t[i + 1] - knot_t[i];
    return b[i] + h * (2.0 * c[i] + 3.0 * h * d[i]);
  }
  const std::size_t i = piece_index(knot_t, t);
  const double dt = t - knot_t[i];
  return b[i] + dt * (2.0 * c[i] + 3.0 * dt * d[i]);
}

double ChannelSpline::curvature(double t) const {
  if (t < knot_t.front() || t > knot_t.back()) return 0.0;
  const std::size_t i = piece_index(knot_t, t);
  const double dt = t - knot_t[i];
  return 2.0 * c[i] + 6.0 * dt * d[i];
}

CubicSplinePath CubicSplinePath::fit(const std::vector<double>& times, const Matrix& values,
                                     const std::vector<std::uint8_t>& mask, bool append_time) {
  const std::size_t t_count = times.size(), d_count = values.cols();
  if (values.rows() != t_count || mask.size() != t_count * d_count)
    throw DimensionError("spline fit: times/values/mask shapes disagree");
  if (t_count < 2) throw ConfigError("spline fit: need at least 2 time points");
  for (std::size_t i = 1; i < t_count; ++i)
    if (!(times[i] > times[i - 1]))
      throw ConfigError("spline fit: times must be strictly increasing");

  CubicSplinePath path;
  path.t0_ = times.front();
  path.t1_ = times.back();
  path.time_channel_ = append_time;
  path.channels_.reserve(d_count + (append_time ? 1 : 0));

  std::vector<double> kt, ky;
  for (std::size_t d = 0; d < d_count; ++d) {
    kt.clear();
    ky.clear();
    for (std::size_t t = 0; t < t_count; ++t) {
      if (mask[t * d_count + d]) {
        kt.push_back(times[t]);
        ky.push_back(values(t, d));
      }
    }
    if (kt.size() < 2)
      throw ConfigError("spline fit: channel " + std::to_string(d) +
                        " has fewer than 2 observed cells");
    path.channels_.push_back(fit_natural_spline(kt, ky));
  }
  if (append_time) {
    const double ends[2] = {path.t0_, path.t1_};
    path.channels_.push_back(fit_natural_spline(std::span<const double>(ends, 2),
                                                std::span<const double>(ends, 2)));
  }
  return path;
}

void CubicSplinePath::check_domain(double t) const {
  // Tiny slack absorbs roundoff at the endpoints of solver stages.
  const double slack = 1e-9 * (1.0 + std::abs(t1_ - t0_));
  if (t < t0_ - slack || t > t1_ + slack)
    throw ConfigError("path: t=" + std::to_string(t) + " outside domain [" +
                      std::to_string(t0_) + ", " + std::to_string(t1_) + "]");
}

void CubicSplinePath::eval(double t, std::span<double> out) const {
  check_domain(t);
  for (std::size_t c = 0; c < channels_.size(); ++c) out[c] = channels_[c].value(t);
}

void CubicSplinePath::deriv(double t, std::span<double> out) const {
  check_domain(t);
  for (std::size_t c = 0; c < channels_.size(); ++c) out[c] = channels_[c].slope(t);
}

std::vector<double> CubicSplinePath::eval(double t) const {
  std::vector<double> out(channels_.size());
  eval(t, out);
  return out;
}

std::vector<double> CubicSplinePath::deriv(double t) const {
  std::vector<double> out(channels_.size());
  deriv(t, out);
  return out;
}

double CubicSplinePath::eval_channel(std::size_t c, double t) const {
  check_domain(t);
  return channels_[c].value(t);
}

double CubicSplinePath::deriv_channel(std::size_t c, double t) const {
  check_domain(t);
  return channels_[c].slope(t);
}

double CubicSplinePath::second_deriv_channel(std::size_t c, double t) const {
  check_domain(t);
  return channels_[c].curvature(t);
}

}  // namespace nowcast
