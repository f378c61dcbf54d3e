#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nowcast/matrix.hpp"

namespace nowcast {

// Natural cubic spline through one channel's observed knots.
// Piece i on [t_i, t_{i+1}]: y(t) = a_i + b_i dt + c_i dt^2 + d_i dt^3 with
// dt = t - t_i. Natural boundary: c_0 = c_n = 0.
struct ChannelSpline {
  std::vector<double> knot_t;  // strictly increasing, >= 2 entries
  std::vector<double> knot_y;
  std::vector<double> b, c, d;  // per interval; a_i == knot_y[i]

  double value(double t) const;
  double slope(double t) const;
  double curvature(double t) const;  // second derivative
};

// Continuous control path X(t) for a window of observations: one natural
// cubic spline per channel, fit on that channel's observed cells only.
// Outside a channel's observed span (leading/trailing gaps) the end piece
// continues linearly with the boundary slope, which keeps the natural
// zero-curvature condition intact; outside [t_begin, t_end] evaluation is
// an error. When `append_time` is set a final channel carries X(t) = t.
class CubicSplinePath {
 public:
  static CubicSplinePath fit(const std::vector<double>& times, const Matrix& values,
                             const std::vector<std::uint8_t>& mask, bool append_time = true);

  std::size_t channels() const { return channels_.size(); }
  std::size_t data_channels() const { return channels_.size() - (time_channel_ ? 1 : 0); }
  bool has_time_channel() const { return time_channel_; }
  double t_begin() const { return t0_; }
  double t_end() const { return t1_; }

  void eval(double t, std::span<double> out) const;
  void deriv(double t, std::span<double> out) const;
  std::vector<double> eval(double t) const;
  std::vector<double> deriv(double t) const;

  double eval_channel(std::size_t c, double t) const;
  double deriv_channel(std::size_t c, double t) const;
  double second_deriv_channel(std::size_t c, double t) const;

  const ChannelSpline& channel(std::size_t c) const { return channels_[c]; }

 private:
  void check_domain(double t) const;

  std::vector<ChannelSpline> channels_;
  double t0_ = 0.0, t1_ = 0.0;
  bool time_channel_ = false;
};

// Coefficients of the natural cubic spline through (t_i, y_i); the
// tridiagonal system for the quadratic coefficients is solved with the
// Thomas algorithm.
ChannelSpline fit_natural_spline(std::span<const double> t, std::span<const double> y);

}  // namespace nowcast
