#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nowcast/error.hpp"
#include "nowcast/matrix.hpp"
#include "nowcast/rng.hpp"
#include "nowcast/spline.hpp"

namespace nowcast {

enum class Solver { euler, rk4 };

Solver parse_solver(const std::string& name);
std::string solver_name(Solver s);

struct NcdeConfig {
  std::size_t input_dim = 0;   // data channels D
  std::size_t dim_alpha = 128; // hidden block for the intercept
  std::size_t dim_beta = 128;  // hidden block for the exposures
  std::size_t layers = 1;      // hidden ReLU layers in the vector field
  std::size_t factors = 1;     // K, width of the exposure decoder
  bool time_channel = true;    // path carries X_{D+1}(t) = t

  std::size_t dim_h() const { return dim_alpha + dim_beta; }
  std::size_t path_dim() const { return input_dim + (time_channel ? 1 : 0); }
};

struct Affine {
  Matrix w;
  std::vector<double> b;
  std::size_t entries() const { return w.size() + b.size(); }
};

// All trainable weights: the two initial encoders, the vector-field MLP
// (ReLU hidden layers, final Tanh layer emitting a dim_h x path_dim
// matrix), and the two decoder heads.
struct NcdeParams {
  NcdeConfig cfg;
  Affine enc_alpha;            // input_dim -> dim_alpha
  Affine enc_beta;             // input_dim -> dim_beta
  std::vector<Affine> hidden;  // layers of dim_h -> dim_h
  Affine field_out;            // dim_h -> dim_h * path_dim
  Affine dec_alpha;            // dim_alpha -> 1
  Affine dec_beta;             // dim_beta -> factors

  // Uniform +-1/sqrt(fan_in) for weights and biases, drawn in a fixed
  // block order so a seed pins every coefficient.
  static NcdeParams init(const NcdeConfig& cfg, Rng& rng);
  static NcdeParams zeros_like(const NcdeConfig& cfg);

  std::size_t param_count() const;  // exact total of stored entries

  // Canonical flat order: enc_alpha, enc_beta, hidden..., field_out,
  // dec_alpha, dec_beta; each block row-major weights then bias.
  std::vector<double> flatten() const;
  void set_flat(std::span<const double> flat);
  void for_each_block(const std::function<void(Affine&)>& fn);
  void for_each_block(const std::function<void(const Affine&)>& fn) const;
};

using NcdeGrads = NcdeParams;

struct HiddenState {
  std::vector<double> h;  // partitioned as (h_alpha, h_beta)
  double t = 0.0;
};

// Per-step solver intermediates: the states the vector field was evaluated
// at and the path derivative there. Replaying them forward reproduces the
// stored outputs bitwise; the backward pass recomputes MLP activations
// from these states.
struct TapeStage {
  std::vector<double> state;
  std::vector<double> dx;
};

struct TapeStep {
  double t0 = 0.0;
  std::vector<TapeStage> stages;  // 1 for euler, 4 for rk4
};

struct Tape {
  NcdeConfig cfg;
  Solver solver = Solver::rk4;
  double dt = 0.0;
  std::vector<double> x1;  // encoder input
  std::vector<double> h1;
  std::vector<double> hN;
  std::vector<TapeStep> steps;
};

// Scratch buffers for one vector-field evaluation.
struct FieldWorkspace {
  std::vector<std::vector<double>> act;  // post-ReLU per hidden layer
  std::vector<double> out;               // tanh outputs, flattened
};

// h(t1) = [enc_alpha(x1); enc_beta(x1)].
HiddenState init_hidden(const NcdeParams& params, std::span<const double> x1);

// f(h): ReLU MLP into a final Tanh layer, reshaped to dim_h x path_dim.
Matrix vector_field(const NcdeParams& params, std::span<const double> h);
void field_forward(const NcdeParams& params, std::span<const double> h, Matrix& f,
                   FieldWorkspace& ws);
void field_vjp(const NcdeParams& params, std::span<const double> h_in, const FieldWorkspace& ws,
               const Matrix& f_bar, NcdeGrads& grads, std::span<double> h_bar);

// Fixed-step solve of dh/dt = F(h) dX/dt from path.t_begin() to
// path.t_end() with step 1/steps_per_month months. Generic over the field
// so oracle fields can exercise the identical stepping code.
template <class Field>
std::vector<double> integrate_cde(Field&& field, const CubicSplinePath& path,
                                  std::vector<double> h, Solver solver,
                                  std::size_t steps_per_month, Tape* tape = nullptr);

// The production forward pass: returns h(t_N) and the tape for backward().
HiddenState integrate(const NcdeParams& params, const CubicSplinePath& path,
                      const HiddenState& h1, Solver solver, std::size_t steps_per_month,
                      Tape& tape);

struct Exposure {
  double alpha = 0.0;
  std::vector<double> beta;
};

Exposure decode(const NcdeParams& params, const HiddenState& h_n);

struct ForwardResult {
  Exposure exposure;
  Tape tape;
};

ForwardResult ncde_forward(const NcdeParams& params, const CubicSplinePath& path,
                           std::span<const double> x1, Solver solver,
                           std::size_t steps_per_month);

// Forward pass without taping, for validation/test predictions.
Exposure ncde_predict(const NcdeParams& params, const CubicSplinePath& path,
                      std::span<const double> x1, Solver solver, std::size_t steps_per_month);

// Exact reverse-mode derivative of encode -> integrate -> decode with
// respect to every parameter, from a cotangent on (alpha, beta).
NcdeGrads backward(const NcdeParams& params, const Tape& tape, double alpha_bar,
                   std::span<const double> beta_bar);

// Versioned JSON checkpoint; save -> load -> forward is bitwise stable.
void save_checkpoint(const NcdeParams& params, std::uint64_t seed, const std::string& path);
struct Checkpoint {
  NcdeParams params;
  std::uint64_t seed = 0;
};
Checkpoint load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------
// Template definitions.

template <class Field>
std::vector<double> integrate_cde(Field&& field, const CubicSplinePath& path,
                                  std::vector<double> h, Solver solver,
                                  std::size_t steps_per_month, Tape* tape) {
  if (steps_per_month < 1) throw ConfigError("integrate: steps_per_month must be >= 1");
  const double t0 = path.t_begin();
  const double span = path.t_end() - t0;
  const auto n_steps = static_cast<std::size_t>(std::llround(span * steps_per_month));
  if (n_steps == 0) throw ConfigError("integrate: empty integration span");
  const double dt = span / static_cast<double>(n_steps);
  const std::size_t dim = h.size();
  const std::size_t pdim = path.channels();

  if (tape) {
    tape->solver = solver;
    tape->dt = dt;
    tape->steps.clear();
    tape->steps.reserve(n_steps);
  }

  Matrix f(dim, pdim);
  std::vector<double> k1(dim), k2(dim), k3(dim), k4(dim), s(dim);
  std::vector<double> dx0(pdim), dx_mid(pdim), dx_end(pdim);

  auto contract = [&](const Matrix& fm, std::span<const double> dx, std::vector<double>& k) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double* row = fm.data() + i * pdim;
      double acc = 0.0;
      for (std::size_t j = 0; j < pdim; ++j) acc += row[j] * dx[j];
      k[i] = acc;
    }
  };

  for (std::size_t step = 0; step < n_steps; ++step) {
    const double t = t0 + static_cast<double>(step) * dt;
    TapeStep rec;
    rec.t0 = t;

    if (solver == Solver::euler) {
      path.deriv(t, dx0);
      field(std::span<const double>(h), f);
      contract(f, dx0, k1);
      if (tape) rec.stages.push_back({h, dx0});
      for (std::size_t i = 0; i < dim; ++i) h[i] += dt * k1[i];
    } else {
      const double tm = t + 0.5 * dt;
      const double te = t + dt;
      path.deriv(t, dx0);
      path.deriv(tm, dx_mid);
      path.deriv(te, dx_end);

      field(std::span<const double>(h), f);
      contract(f, dx0, k1);
      if (tape) rec.stages.push_back({h, dx0});

      for (std::size_t i = 0; i < dim; ++i) s[i] = h[i] + 0.5 * dt * k1[i];
      field(std::span<const double>(s), f);
      contract(f, dx_mid, k2);
      if (tape) rec.stages.push_back({s, dx_mid});

      for (std::size_t i = 0; i < dim; ++i) s[i] = h[i] + 0.5 * dt * k2[i];
      field(std::span<const double>(s), f);
      contract(f, dx_mid, k3);
      if (tape) rec.stages.push_back({s, dx_mid});

      for (std::size_t i = 0; i < dim; ++i) s[i] = h[i] + dt * k3[i];
      field(std::span<const double>(s), f);
      contract(f, dx_end, k4);
      if (tape) rec.stages.push_back({s, dx_end});

      for (std::size_t i = 0; i < dim; ++i)
        h[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }

    for (double x : h) {
      if (!std::isfinite(x))
        throw NumericError("integrate: non-finite state after step " + std::to_string(step),
                           step);
    }
    if (tape) tape->steps.push_back(std::move(rec));
  }
  return h;
}

}  // namespace nowcast
