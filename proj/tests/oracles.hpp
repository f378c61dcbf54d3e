#pragma once

// Independent reference implementations the tests check the library
// against. These deliberately take the slow, obviously-correct route and
// never share code with the implementation paths they validate.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "nowcast/dfm.hpp"
#include "nowcast/matrix.hpp"

namespace oracle {

// Entry-by-entry triple loop product.
inline nowcast::Matrix matmul_naive(const nowcast::Matrix& a, const nowcast::Matrix& b) {
  nowcast::Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

// Smoothed posterior of the full state sequence by explicit joint-Gaussian
// conditioning: build the (T*dim + #observed)-dimensional normal and
// condition on the observed cells.
struct JointSmooth {
  std::vector<std::vector<double>> mean;          // per t
  std::vector<nowcast::Matrix> cov;               // per t
  std::vector<nowcast::Matrix> lag_one;           // [t] = Cov(x_t, x_{t-1} | y)
  double log_likelihood = 0.0;
};

inline JointSmooth joint_gaussian_smooth(const nowcast::StateSpaceModel& model,
                                         const nowcast::Matrix& y,
                                         const std::vector<std::uint8_t>& mask) {
  using nowcast::Matrix;
  const std::size_t t_count = y.rows();
  const std::size_t d_count = y.cols();
  const std::size_t n = model.dim();
  const std::size_t big = t_count * n;
  const Matrix a = model.transition();
  const Matrix h = model.observation();

  // Joint state mean: m_1 = prior mean, m_t = A m_{t-1}.
  std::vector<double> m(big);
  for (std::size_t i = 0; i < n; ++i) m[i] = model.init_mean[i];
  for (std::size_t t = 1; t < t_count; ++t)
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a(i, j) * m[(t - 1) * n + j];
      m[t * n + i] = s;
    }

  // Joint state covariance via the marginal recursion and
  // Cov(x_s, x_t) = Cov(x_s) (A^{t-s})^T for s < t.
  std::vector<Matrix> marg(t_count);
  marg[0] = model.init_cov;
  const Matrix q = model.state_cov();
  for (std::size_t t = 1; t < t_count; ++t)
    marg[t] = nowcast::matmul(nowcast::matmul(a, marg[t - 1]), nowcast::transpose(a)) + q;

  Matrix c(big, big);
  for (std::size_t s = 0; s < t_count; ++s) {
    Matrix block = marg[s];
    for (std::size_t t = s; t < t_count; ++t) {
      if (t > s) block = nowcast::matmul(block, nowcast::transpose(a));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          c(s * n + i, t * n + j) = block(i, j);
          c(t * n + j, s * n + i) = block(i, j);
        }
      if (t == s) block = marg[s];
    }
  }

  // Observed cells.
  struct Cell {
    std::size_t t, d;
  };
  std::vector<Cell> cells;
  for (std::size_t t = 0; t < t_count; ++t)
    for (std::size_t d = 0; d < d_count; ++d)
      if (mask[t * d_count + d]) cells.push_back({t, d});

  JointSmooth out;
  out.mean.resize(t_count);
  out.cov.resize(t_count);
  out.lag_one.resize(t_count);

  std::vector<double> post_mean(m);
  Matrix post_cov = c;

  if (!cells.empty()) {
    const std::size_t k = cells.size();
    // Cross covariance states x observations and the observation Gram.
    Matrix cross(big, k);
    for (std::size_t ci = 0; ci < k; ++ci) {
      const auto [t, d] = cells[ci];
      for (std::size_t r = 0; r < big; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += c(r, t * n + j) * h(d, j);
        cross(r, ci) = s;
      }
    }
    Matrix gram(k, k);
    for (std::size_t ci = 0; ci < k; ++ci) {
      const auto [t, d] = cells[ci];
      for (std::size_t cj = 0; cj < k; ++cj) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += h(d, j) * cross(t * n + j, cj);
        gram(ci, cj) = s;
      }
      gram(ci, ci) += model.obs_floor;
    }
    gram = nowcast::symmetrized(gram);

    Matrix resid(k, 1);
    for (std::size_t ci = 0; ci < k; ++ci) {
      const auto [t, d] = cells[ci];
      double pred = 0.0;
      for (std::size_t j = 0; j < n; ++j) pred += h(d, j) * m[t * n + j];
      resid(ci, 0) = y(t, d) - pred;
    }

    const nowcast::Cholesky chol(gram);
    const Matrix w = chol.solve(nowcast::transpose(cross));  // k x big
    for (std::size_t r = 0; r < big; ++r) {
      double upd = 0.0;
      for (std::size_t ci = 0; ci < k; ++ci) upd += w(ci, r) * resid(ci, 0);
      post_mean[r] = m[r] + upd;
    }
    post_cov = c - nowcast::matmul(cross, w);

    const Matrix sr = chol.solve(resid);
    double quad = 0.0;
    for (std::size_t ci = 0; ci < k; ++ci) quad += resid(ci, 0) * sr(ci, 0);
    out.log_likelihood = -0.5 * (static_cast<double>(k) * std::log(2.0 * 3.14159265358979323846) +
                                 chol.log_det() + quad);
  }

  for (std::size_t t = 0; t < t_count; ++t) {
    out.mean[t].resize(n);
    for (std::size_t i = 0; i < n; ++i) out.mean[t][i] = post_mean[t * n + i];
    Matrix blk(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) blk(i, j) = post_cov(t * n + i, t * n + j);
    out.cov[t] = blk;
    if (t >= 1) {
      Matrix lag(n, n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) lag(i, j) = post_cov(t * n + i, (t - 1) * n + j);
      out.lag_one[t] = lag;
    }
  }
  return out;
}

// Central finite difference of a scalar function along coordinate i.
inline double central_diff(const std::function<double(const std::vector<double>&)>& f,
                           std::vector<double> x, std::size_t i, double eps) {
  x[i] += eps;
  const double fp = f(x);
  x[i] -= 2.0 * eps;
  const double fm = f(x);
  return (fp - fm) / (2.0 * eps);
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

inline double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
    sab += (a[i] - ma) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace oracle
