#include "nowcast/ncde.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "nowcast/error.hpp"

namespace nowcast {

namespace {

void affine_apply(const Affine& a, std::span<const double> in, std::span<double> out) {
  const std::size_t rows = a.w.rows(), cols = a.w.cols();
  for (std::size_t i = 0; i < rows; ++i) {
    const double* wrow = a.w.data() + i * cols;
    double s = a.b[i];
    for (std::size_t j = 0; j < cols; ++j) s += wrow[j] * in[j];
    out[i] = s;
  }
}

// Accumulates the affine VJP: dW += out_bar x in, db += out_bar,
// in_bar += W^T out_bar. Passing an empty in_bar skips that part (used at
// the encoder inputs, whose cotangent nobody consumes).
void affine_vjp(const Affine& a, std::span<const double> in, std::span<const double> out_bar,
                Affine& grads, std::span<double> in_bar) {
  const std::size_t rows = a.w.rows(), cols = a.w.cols();
  const bool want_in_bar = !in_bar.empty();
  for (std::size_t i = 0; i < rows; ++i) {
    const double ob = out_bar[i];
    grads.b[i] += ob;
    double* grow = grads.w.data() + i * cols;
    const double* wrow = a.w.data() + i * cols;
    if (want_in_bar) {
      for (std::size_t j = 0; j < cols; ++j) {
        grow[j] += ob * in[j];
        in_bar[j] += wrow[j] * ob;
      }
    } else {
      for (std::size_t j = 0; j < cols; ++j) grow[j] += ob * in[j];
    }
  }
}

Affine make_affine(std::size_t rows, std::size_t cols) {
  Affine a;
  a.w = Matrix(rows, cols);
  a.b.assign(rows, 0.0);
  return a;
}

void init_affine(Affine& a, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(a.w.cols()));
  for (double& x : a.w.flat()) x = rng.uniform(-bound, bound);
  for (double& x : a.b) x = rng.uniform(-bound, bound);
}

void check_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite value");
}

}  // namespace

Solver parse_solver(const std::string& name) {
  if (name == "euler") return Solver::euler;
  if (name == "rk4") return Solver::rk4;
  throw ConfigError("unknown solver '" + name + "', expected euler or rk4");
}

std::string solver_name(Solver s) { return s == Solver::euler ? "euler" : "rk4"; }

NcdeParams NcdeParams::zeros_like(const NcdeConfig& cfg) {
  if (cfg.input_dim == 0) throw ConfigError("ncde: input_dim must be positive");
  if (cfg.dim_alpha == 0 || cfg.dim_beta == 0)
    throw ConfigError("ncde: hidden dimensions must be positive");
  if (cfg.factors == 0) throw ConfigError("ncde: factors must be positive");
  NcdeParams p;
  p.cfg = cfg;
  p.enc_alpha = make_affine(cfg.dim_alpha, cfg.input_dim);
  p.enc_beta = make_affine(cfg.dim_beta, cfg.input_dim);
  p.hidden.resize(cfg.layers);
  for (auto& l : p.hidden) l = make_affine(cfg.dim_h(), cfg.dim_h());
  p.field_out = make_affine(cfg.dim_h() * cfg.path_dim(), cfg.dim_h());
  p.dec_alpha = make_affine(1, cfg.dim_alpha);
  p.dec_beta = make_affine(cfg.factors, cfg.dim_beta);
  return p;
}

NcdeParams NcdeParams::init(const NcdeConfig& cfg, Rng& rng) {
  NcdeParams p = zeros_like(cfg);
  p.for_each_block([&rng](Affine& a) { init_affine(a, rng); });
  return p;
}

void NcdeParams::for_each_block(const std::function<void(Affine&)>& fn) {
  fn(enc_alpha);
  fn(enc_beta);
  for (auto& l : hidden) fn(l);
  fn(field_out);
  fn(dec_alpha);
  fn(dec_beta);
}

void NcdeParams::for_each_block(const std::function<void(const Affine&)>& fn) const {
  fn(enc_alpha);
  fn(enc_beta);
  for (const auto& l : hidden) fn(l);
  fn(field_out);
  fn(dec_alpha);
  fn(dec_beta);
}

std::size_t NcdeParams::param_count() const {
  std::size_t n = 0;
  for_each_block([&n](const Affine& a) { n += a.entries(); });
  return n;
}

std::vector<double> NcdeParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(param_count());
  for_each_block([&flat](const Affine& a) {
    flat.insert(flat.end(), a.w.flat().begin(), a.w.flat().end());
    flat.insert(flat.end(), a.b.begin(), a.b.end());
  });
  return flat;
}

void NcdeParams::set_flat(std::span<const double> flat) {
  std::size_t pos = 0;
  for_each_block([&](Affine& a) {
    if (pos + a.entries() > flat.size()) throw DimensionError("set_flat: vector too short");
    std::copy(flat.begin() + pos, flat.begin() + pos + a.w.size(), a.w.flat().begin());
    pos += a.w.size();
    std::copy(flat.begin() + pos, flat.begin() + pos + a.b.size(), a.b.begin());
    pos += a.b.size();
  });
  if (pos != flat.size()) throw DimensionError("set_flat: vector length mismatch");
}

HiddenState init_hidden(const NcdeParams& params, std::span<const double> x1) {
  if (x1.size() != params.cfg.input_dim)
    throw DimensionError("init_hidden: input has " + std::to_string(x1.size()) +
                         " channels, expected " + std::to_string(params.cfg.input_dim));
  check_finite(x1, "init_hidden");
  HiddenState h;
  h.h.resize(params.cfg.dim_h());
  affine_apply(params.enc_alpha, x1, std::span<double>(h.h).subspan(0, params.cfg.dim_alpha));
  affine_apply(params.enc_beta, x1,
               std::span<double>(h.h).subspan(params.cfg.dim_alpha, params.cfg.dim_beta));
  return h;
}

void field_forward(const NcdeParams& params, std::span<const double> h, Matrix& f,
                   FieldWorkspace& ws) {
  const auto& cfg = params.cfg;
  const std::size_t dim = cfg.dim_h(), pdim = cfg.path_dim();
  ws.act.resize(cfg.layers);

  std::span<const double> cur = h;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    ws.act[l].resize(dim);
    affine_apply(params.hidden[l], cur, ws.act[l]);
    for (double& x : ws.act[l]) x = x > 0.0 ? x : 0.0;
    cur = ws.act[l];
  }
  ws.out.resize(dim * pdim);
  affine_apply(params.field_out, cur, ws.out);
  for (double& x : ws.out) x = std::tanh(x);

  if (f.rows() != dim || f.cols() != pdim) f = Matrix(dim, pdim);
  std::copy(ws.out.begin(), ws.out.end(), f.flat().begin());
}

Matrix vector_field(const NcdeParams& params, std::span<const double> h) {
  Matrix f;
  FieldWorkspace ws;
  field_forward(params, h, f, ws);
  return f;
}

void field_vjp(const NcdeParams& params, std::span<const double> h_in, const FieldWorkspace& ws,
               const Matrix& f_bar, NcdeGrads& grads, std::span<double> h_bar) {
  const auto& cfg = params.cfg;
  const std::size_t dim = cfg.dim_h();

  // Through the Tanh.
  std::vector<double> out_bar(ws.out.size());
  for (std::size_t m = 0; m < ws.out.size(); ++m)
    out_bar[m] = f_bar.flat()[m] * (1.0 - ws.out[m] * ws.out[m]);

  std::span<const double> top_in = cfg.layers > 0 ? std::span<const double>(ws.act.back()) : h_in;
  std::vector<double> cur_bar(dim, 0.0);
  affine_vjp(params.field_out, top_in, out_bar, grads.field_out, cur_bar);

  std::vector<double> next_bar(dim);
  for (std::size_t l = cfg.layers; l-- > 0;) {
    // ReLU: the post-activation is positive exactly where the unit passed.
    for (std::size_t i = 0; i < dim; ++i)
      if (ws.act[l][i] <= 0.0) cur_bar[i] = 0.0;
    std::span<const double> in = l > 0 ? std::span<const double>(ws.act[l - 1]) : h_in;
    std::fill(next_bar.begin(), next_bar.end(), 0.0);
    affine_vjp(params.hidden[l], in, cur_bar, grads.hidden[l], next_bar);
    std::swap(cur_bar, next_bar);
  }
  for (std::size_t i = 0; i < dim; ++i) h_bar[i] += cur_bar[i];
}

namespace {

struct MlpField {
  const NcdeParams& params;
  FieldWorkspace ws;
  void operator()(std::span<const double> h, Matrix& f) { field_forward(params, h, f, ws); }
};

}  // namespace

HiddenState integrate(const NcdeParams& params, const CubicSplinePath& path,
                      const HiddenState& h1, Solver solver, std::size_t steps_per_month,
                      Tape& tape) {
  if (path.channels() != params.cfg.path_dim())
    throw DimensionError("integrate: path has " + std::to_string(path.channels()) +
                         " channels, field expects " + std::to_string(params.cfg.path_dim()));
  tape.cfg = params.cfg;
  tape.h1 = h1.h;
  MlpField field{params, {}};
  std::vector<double> h =
      integrate_cde(field, path, h1.h, solver, steps_per_month, &tape);
  tape.hN = h;
  return {std::move(h), path.t_end()};
}

Exposure decode(const NcdeParams& params, const HiddenState& h_n) {
  const auto& cfg = params.cfg;
  if (h_n.h.size() != cfg.dim_h()) throw DimensionError("decode: hidden size mismatch");
  Exposure e;
  double alpha = 0.0;
  affine_apply(params.dec_alpha, std::span<const double>(h_n.h).subspan(0, cfg.dim_alpha),
               std::span<double>(&alpha, 1));
  e.alpha = alpha;
  e.beta.resize(cfg.factors);
  affine_apply(params.dec_beta,
               std::span<const double>(h_n.h).subspan(cfg.dim_alpha, cfg.dim_beta), e.beta);
  return e;
}

ForwardResult ncde_forward(const NcdeParams& params, const CubicSplinePath& path,
                           std::span<const double> x1, Solver solver,
                           std::size_t steps_per_month) {
  ForwardResult res;
  res.tape.x1.assign(x1.begin(), x1.end());
  HiddenState h1 = init_hidden(params, x1);
  HiddenState hn = integrate(params, path, h1, solver, steps_per_month, res.tape);
  res.exposure = decode(params, hn);
  return res;
}

Exposure ncde_predict(const NcdeParams& params, const CubicSplinePath& path,
                      std::span<const double> x1, Solver solver, std::size_t steps_per_month) {
  if (path.channels() != params.cfg.path_dim())
    throw DimensionError("predict: path channel count does not match the field");
  HiddenState h1 = init_hidden(params, x1);
  MlpField field{params, {}};
  HiddenState hn;
  hn.h = integrate_cde(field, path, h1.h, solver, steps_per_month, nullptr);
  hn.t = path.t_end();
  return decode(params, hn);
}

NcdeGrads backward(const NcdeParams& params, const Tape& tape, double alpha_bar,
                   std::span<const double> beta_bar) {
  const auto& cfg = params.cfg;
  if (tape.cfg.dim_h() != cfg.dim_h() || tape.cfg.path_dim() != cfg.path_dim() ||
      tape.cfg.input_dim != cfg.input_dim || tape.h1.size() != cfg.dim_h())
    throw DimensionError("backward: tape does not match parameters");
  if (beta_bar.size() != cfg.factors) throw DimensionError("backward: beta cotangent size");

  NcdeGrads grads = NcdeParams::zeros_like(cfg);
  const std::size_t dim = cfg.dim_h(), pdim = cfg.path_dim();

  // Decoder.
  std::vector<double> h_bar(dim, 0.0);
  affine_vjp(params.dec_alpha, std::span<const double>(tape.hN).subspan(0, cfg.dim_alpha),
             std::span<const double>(&alpha_bar, 1), grads.dec_alpha,
             std::span<double>(h_bar).subspan(0, cfg.dim_alpha));
  affine_vjp(params.dec_beta,
             std::span<const double>(tape.hN).subspan(cfg.dim_alpha, cfg.dim_beta), beta_bar,
             grads.dec_beta, std::span<double>(h_bar).subspan(cfg.dim_alpha, cfg.dim_beta));

  // Solver steps, reversed. MLP activations are recomputed from the taped
  // stage states; the arithmetic is deterministic, so they match the
  // forward pass bitwise.
  FieldWorkspace ws;
  Matrix f;
  Matrix f_bar(dim, pdim);
  const double dt = tape.dt;

  auto stage_vjp = [&](const TapeStage& stage, std::span<const double> k_bar,
                       std::vector<double>& s_bar) {
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < pdim; ++j) f_bar(i, j) = k_bar[i] * stage.dx[j];
    field_forward(params, stage.state, f, ws);
    s_bar.assign(dim, 0.0);
    field_vjp(params, stage.state, ws, f_bar, grads, s_bar);
  };

  std::vector<double> lambda = h_bar;
  std::vector<double> k_bar(dim), s1(dim), s2(dim), s3(dim), s4(dim);
  for (std::size_t idx = tape.steps.size(); idx-- > 0;) {
    const TapeStep& step = tape.steps[idx];
    if (tape.solver == Solver::euler) {
      for (std::size_t i = 0; i < dim; ++i) k_bar[i] = dt * lambda[i];
      stage_vjp(step.stages[0], k_bar, s1);
      for (std::size_t i = 0; i < dim; ++i) lambda[i] += s1[i];
    } else {
      const double w_edge = dt / 6.0, w_mid = dt / 3.0;
      for (std::size_t i = 0; i < dim; ++i) k_bar[i] = w_edge * lambda[i];
      stage_vjp(step.stages[3], k_bar, s4);
      for (std::size_t i = 0; i < dim; ++i) k_bar[i] = w_mid * lambda[i] + dt * s4[i];
      stage_vjp(step.stages[2], k_bar, s3);
      for (std::size_t i = 0; i < dim; ++i) k_bar[i] = w_mid * lambda[i] + 0.5 * dt * s3[i];
      stage_vjp(step.stages[1], k_bar, s2);
      for (std::size_t i = 0; i < dim; ++i) k_bar[i] = w_edge * lambda[i] + 0.5 * dt * s2[i];
      stage_vjp(step.stages[0], k_bar, s1);
      for (std::size_t i = 0; i < dim; ++i) lambda[i] += s1[i] + s2[i] + s3[i] + s4[i];
    }
  }

  // Encoders.
  affine_vjp(params.enc_alpha, tape.x1, std::span<const double>(lambda).subspan(0, cfg.dim_alpha),
             grads.enc_alpha, std::span<double>());
  affine_vjp(params.enc_beta, tape.x1,
             std::span<const double>(lambda).subspan(cfg.dim_alpha, cfg.dim_beta),
             grads.enc_beta, std::span<double>());
  return grads;
}

void save_checkpoint(const NcdeParams& params, std::uint64_t seed, const std::string& path) {
  nlohmann::json j;
  j["format"] = "ncde-checkpoint";
  j["version"] = 1;
  j["seed"] = seed;
  j["config"] = {{"input_dim", params.cfg.input_dim}, {"dim_alpha", params.cfg.dim_alpha},
                 {"dim_beta", params.cfg.dim_beta},   {"layers", params.cfg.layers},
                 {"factors", params.cfg.factors},     {"time_channel", params.cfg.time_channel}};
  nlohmann::json blocks = nlohmann::json::array();
  params.for_each_block([&blocks](const Affine& a) {
    blocks.push_back({{"rows", a.w.rows()},
                      {"cols", a.w.cols()},
                      {"w", std::vector<double>(a.w.flat().begin(), a.w.flat().end())},
                      {"b", a.b}});
  });
  j["blocks"] = std::move(blocks);
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
  out << j.dump() << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint '" + path + "': " + e.what());
  }
  if (j.value("format", "") != "ncde-checkpoint" || j.value("version", 0) != 1)
    throw ParseError("checkpoint '" + path + "': unknown format/version");
  NcdeConfig cfg;
  const auto& c = j.at("config");
  cfg.input_dim = c.at("input_dim").get<std::size_t>();
  cfg.dim_alpha = c.at("dim_alpha").get<std::size_t>();
  cfg.dim_beta = c.at("dim_beta").get<std::size_t>();
  cfg.layers = c.at("layers").get<std::size_t>();
  cfg.factors = c.at("factors").get<std::size_t>();
  cfg.time_channel = c.at("time_channel").get<bool>();

  Checkpoint ck;
  ck.seed = j.value("seed", 0ULL);
  ck.params = NcdeParams::zeros_like(cfg);
  const auto& blocks = j.at("blocks");
  std::size_t idx = 0;
  ck.params.for_each_block([&](Affine& a) {
    if (idx >= blocks.size()) throw ParseError("checkpoint: missing block " + std::to_string(idx));
    const auto& blk = blocks[idx++];
    if (blk.at("rows").get<std::size_t>() != a.w.rows() ||
        blk.at("cols").get<std::size_t>() != a.w.cols())
      throw ParseError("checkpoint: block shape mismatch at " + std::to_string(idx - 1));
    const auto w = blk.at("w").get<std::vector<double>>();
    const auto b = blk.at("b").get<std::vector<double>>();
    if (w.size() != a.w.size() || b.size() != a.b.size())
      throw ParseError("checkpoint: block size mismatch at " + std::to_string(idx - 1));
    std::copy(w.begin(), w.end(), a.w.flat().begin());
    a.b = b;
  });
  if (idx != blocks.size()) throw ParseError("checkpoint: extra blocks");
  return ck;
}

}  // namespace nowcast
