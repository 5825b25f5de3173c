#pragma once

// ReLU multilayer perceptrons, the feasibility projection layer and Adam
// training on (state, input) datasets.

#include <mpcnn/config.hpp>
#include <mpcnn/dataset.hpp>
#include <mpcnn/optimize.hpp>
#include <mpcnn/polytope.hpp>
#include <mpcnn/system.hpp>

#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace mpcnn {

enum class Architecture { BBNN, ProjectionNN };

inline const char* to_string(Architecture a) { return a == Architecture::BBNN ? "BBNN" : "ProjectionNN"; }

inline Architecture parse_architecture(const std::string& s) {
  if (s == "BBNN" || s == "bbnn") return Architecture::BBNN;
  if (s == "ProjectionNN" || s == "projection" || s == "projection-nn") return Architecture::ProjectionNN;
  throw Error(ErrorCode::InvalidArgument, "unknown architecture '" + s + "'");
}

// ---------------------------------------------------------------------------
// Mlp

/// Affine layers with ReLU on every hidden layer and a linear output layer.
/// weights[l] maps layer l to layer l+1 and has shape widths[l+1] x widths[l].
struct Mlp {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static Mlp zeros(const std::vector<int>& widths) {
    if (widths.size() < 2) throw Error(ErrorCode::InvalidArgument, "mlp: need at least input and output widths");
    Mlp net;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      if (widths[l] < 1 || widths[l + 1] < 1) throw Error(ErrorCode::InvalidArgument, "mlp: widths must be positive");
      net.weights.push_back(Matrix::Zero(widths[l + 1], widths[l]));
      net.biases.push_back(Vector::Zero(widths[l + 1]));
    }
    return net;
  }

  /// Weights and biases uniform in +-sqrt(1/fan_in).
  static Mlp random(const std::vector<int>& widths, Prng& prng) {
    Mlp net = zeros(widths);
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      const double bound = std::sqrt(1.0 / static_cast<double>(widths[l]));
      for (Eigen::Index j = 0; j < net.weights[l].cols(); ++j) {
        for (Eigen::Index i = 0; i < net.weights[l].rows(); ++i) net.weights[l](i, j) = prng.uniform(-bound, bound);
      }
      for (Eigen::Index i = 0; i < net.biases[l].size(); ++i) net.biases[l](i) = prng.uniform(-bound, bound);
    }
    return net;
  }

  static Mlp random(const std::vector<int>& widths, std::uint64_t seed) {
    Prng prng(seed);
    return random(widths, prng);
  }

  std::size_t num_layers() const { return weights.size(); }
  Eigen::Index input_dim() const { return weights.front().cols(); }
  Eigen::Index output_dim() const { return weights.back().rows(); }

  std::vector<int> widths() const {
    std::vector<int> w{static_cast<int>(input_dim())};
    for (const auto& m : weights) w.push_back(static_cast<int>(m.rows()));
    return w;
  }

  std::size_t num_params() const {
    std::size_t total = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) total += static_cast<std::size_t>(weights[l].size() + biases[l].size());
    return total;
  }

  void validate() const {
    if (weights.empty() || weights.size() != biases.size()) throw Error(ErrorCode::InvalidArgument, "mlp: malformed layers");
    for (std::size_t l = 0; l < weights.size(); ++l) {
      require_dims(biases[l].size() == weights[l].rows(), "mlp: bias length");
      if (l > 0) require_dims(weights[l].cols() == weights[l - 1].rows(), "mlp: adjacent widths");
      if (!weights[l].allFinite() || !biases[l].allFinite()) throw Error(ErrorCode::InvalidArgument, "mlp: non-finite parameter");
    }
  }

  bool operator==(const Mlp& o) const {
    if (weights.size() != o.weights.size()) return false;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l].rows() != o.weights[l].rows() || weights[l].cols() != o.weights[l].cols()) return false;
      if (weights[l] != o.weights[l] || biases[l] != o.biases[l]) return false;
    }
    return true;
  }
};

/// Per-layer values kept by forward for backward. pre[l] is the affine output
/// of layer l; post[l] is the input to layer l (post[0] = x).
struct ForwardCache {
  std::vector<Matrix> post;
  std::vector<Matrix> pre;
};

struct MlpGradients {
  std::vector<Matrix> d_weights;
  std::vector<Vector> d_biases;
  Matrix d_input;
};

/// Column-batched forward pass: `x` is input_dim x batch.
inline Matrix forward_batch(const Mlp& net, const Matrix& x, ForwardCache* cache = nullptr) {
  require_dims(x.rows() == net.input_dim(), "forward: input dimension");
  if (cache) {
    cache->post.assign(1, x);
    cache->pre.clear();
  }
  Matrix a = x;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    Matrix z = net.weights[l] * a;
    z.colwise() += net.biases[l];
    if (cache) cache->pre.push_back(z);
    if (l + 1 < net.num_layers()) {
      a = z.cwiseMax(0.0);
      if (cache) cache->post.push_back(a);
    } else {
      a = std::move(z);
    }
  }
  return a;
}

inline Vector forward(const Mlp& net, const Vector& x, ForwardCache* cache = nullptr) {
  return forward_batch(net, Matrix(x), cache).col(0);
}

/// Reverse-mode gradients summed over the batch columns of `grad_out`.
/// ReLU'(0) is taken as 0.
inline MlpGradients backward(const Mlp& net, const ForwardCache& cache, const Matrix& grad_out) {
  const std::size_t layers = net.num_layers();
  require_dims(cache.pre.size() == layers && cache.post.size() == layers, "backward: cache does not match network");
  require_dims(grad_out.rows() == net.output_dim() && grad_out.cols() == cache.post[0].cols(), "backward: grad_out shape");
  MlpGradients g;
  g.d_weights.resize(layers);
  g.d_biases.resize(layers);
  Matrix delta = grad_out;
  for (std::size_t l = layers; l-- > 0;) {
    if (l + 1 < layers) delta = delta.cwiseProduct((cache.pre[l].array() > 0.0).cast<double>().matrix());
    g.d_weights[l] = delta * cache.post[l].transpose();
    g.d_biases[l] = delta.rowwise().sum();
    delta = net.weights[l].transpose() * delta;
  }
  g.d_input = std::move(delta);
  return g;
}

inline MlpGradients backward(const Mlp& net, const ForwardCache& cache, const Vector& grad_out) {
  return backward(net, cache, Matrix(grad_out));
}

/// d n(x) / d x, output_dim x input_dim.
inline Matrix input_jacobian(const Mlp& net, const Vector& x) {
  ForwardCache cache;
  forward(net, x, &cache);
  Matrix jac = net.weights.front();
  for (std::size_t l = 1; l < net.num_layers(); ++l) {
    const Vector mask = (cache.pre[l - 1].col(0).array() > 0.0).cast<double>();
    jac = net.weights[l] * (mask.asDiagonal() * jac);
  }
  return jac;
}

// ---------------------------------------------------------------------------
// Projection layer

/// Feasible inputs at state x: {u : g_mat u <= h0_vec - h_x_mat x}.
struct ProjectionSpec {
  Matrix g_mat;
  Vector h0_vec;
  Matrix h_x_mat;
  SolverSettings solver = [] {
    SolverSettings s;
    s.eps_abs = 1e-9;
    s.eps_rel = 1e-9;
    return s;
  }();

  Eigen::Index input_dim() const { return g_mat.cols(); }
  Eigen::Index state_dim() const { return h_x_mat.cols(); }
  Eigen::Index num_rows() const { return g_mat.rows(); }

  Vector rhs(const Vector& x) const {
    require_dims(x.size() == state_dim(), "projection: state dimension");
    return h0_vec - h_x_mat * x;
  }

  /// Rows of U, then rows of the invariant set pulled back through the
  /// dynamics. Invariant-set rows that do not involve u are dropped.
  static ProjectionSpec build(const LinearSystem& sys, const Polytope& u_set, const Polytope& cinf) {
    sys.validate();
    require_dims(u_set.dim() == sys.input_dim() && cinf.dim() == sys.state_dim(), "projection spec: set dimensions");
    const Matrix cb = cinf.a_mat() * sys.b_mat;
    const Matrix ca = cinf.a_mat() * sys.a_mat;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < cb.rows(); ++i) {
      if (cb.row(i).norm() > 1e-12) keep.push_back(i);
    }
    const Eigen::Index mu = u_set.num_rows();
    const auto rows = mu + static_cast<Eigen::Index>(keep.size());
    ProjectionSpec ps;
    ps.g_mat.resize(rows, sys.input_dim());
    ps.h0_vec.resize(rows);
    ps.h_x_mat = Matrix::Zero(rows, sys.state_dim());
    ps.g_mat.topRows(mu) = u_set.a_mat();
    ps.h0_vec.head(mu) = u_set.b_vec();
    for (std::size_t k = 0; k < keep.size(); ++k) {
      const auto r = mu + static_cast<Eigen::Index>(k);
      ps.g_mat.row(r) = cb.row(keep[k]);
      ps.h0_vec(r) = cinf.b_vec()(keep[k]);
      ps.h_x_mat.row(r) = ca.row(keep[k]);
    }
    return ps;
  }
};

struct ProjectionResult {
  Vector u;
  /// Rows with a strictly positive multiplier.
  std::vector<int> active_rows;
  /// Rows at the boundary whose multiplier is below the threshold.
  std::vector<int> weak_rows;
  bool projected = false;
};

/// Euclidean projection of u_hat onto the feasible inputs at x.
inline ProjectionResult project_feasible(const ProjectionSpec& ps, const Vector& x, const Vector& u_hat,
                                         const ActiveSetThresholds& th = {}) {
  require_dims(u_hat.size() == ps.input_dim(), "projection: input dimension");
  const Vector h = ps.rhs(x);
  ProjectionResult res;
  const Vector slack0 = h - ps.g_mat * u_hat;
  if (slack0.size() == 0 || slack0.minCoeff() >= 0.0) {
    res.u = u_hat;
    for (Eigen::Index i = 0; i < slack0.size(); ++i) {
      if (slack0(i) < th.slack) res.weak_rows.push_back(static_cast<int>(i));
    }
    return res;
  }
  QpProblem prob;
  prob.p_mat = Matrix::Identity(ps.input_dim(), ps.input_dim());
  prob.q_vec = -u_hat;
  prob.a_mat = ps.g_mat;
  prob.lower = Vector::Constant(ps.num_rows(), -kInf);
  prob.upper = h;
  const QpSolution sol = qp_solve(prob, ps.solver);
  if (sol.status == QpStatus::Infeasible) {
    throw Error(ErrorCode::InfeasibleProjection, "no admissible input keeps the state inside the invariant set");
  }
  if (sol.status != QpStatus::Solved) {
    throw Error(ErrorCode::NoConvergence, std::string("projection QP ended with status ") + to_string(sol.status));
  }
  res.u = sol.z_star;
  res.projected = true;
  const Vector slack = h - ps.g_mat * res.u;
  for (Eigen::Index i = 0; i < slack.size(); ++i) {
    if (sol.y_star(i) > th.dual) res.active_rows.push_back(static_cast<int>(i));
    else if (slack(i) < th.slack) res.weak_rows.push_back(static_cast<int>(i));
  }
  return res;
}

struct ProjectionJacobians {
  Matrix du_duhat;
  Matrix du_dx;
};

/// Derivatives of the projection from the active-set KKT system. In strict
/// mode weakly active rows or dependent active rows raise DegenerateActiveSet;
/// otherwise weak rows are ignored and a pseudo-inverse gives a subgradient.
inline ProjectionJacobians projection_jacobians(const ProjectionSpec& ps, const ProjectionResult& res, bool strict = true) {
  const Eigen::Index m = ps.input_dim();
  const Eigen::Index n = ps.state_dim();
  if (strict && !res.weak_rows.empty()) {
    throw Error(ErrorCode::DegenerateActiveSet, "projection row " + std::to_string(res.weak_rows.front()) + " is weakly active");
  }
  ProjectionJacobians jac{Matrix::Identity(m, m), Matrix::Zero(m, n)};
  const auto k = static_cast<Eigen::Index>(res.active_rows.size());
  if (k == 0) return jac;
  Matrix ga(k, m), ha(k, n);
  for (Eigen::Index r = 0; r < k; ++r) {
    ga.row(r) = ps.g_mat.row(res.active_rows[r]);
    ha.row(r) = ps.h_x_mat.row(res.active_rows[r]);
  }
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(ga);
  cod.setThreshold(1e-10);
  if (strict && cod.rank() < k) {
    throw Error(ErrorCode::DegenerateActiveSet, "active projection rows are linearly dependent");
  }
  const Matrix pinv = cod.pseudoInverse();
  jac.du_duhat -= pinv * ga;
  jac.du_dx = -pinv * ha;
  return jac;
}

inline ProjectionJacobians projection_jacobians(const ProjectionSpec& ps, const Vector& x, const Vector& u_hat,
                                                bool strict = true) {
  return projection_jacobians(ps, project_feasible(ps, x, u_hat), strict);
}

// ---------------------------------------------------------------------------
// Controller evaluation and gradients

/// Network output at x, projected for the projection architecture.
inline Vector network_output(Architecture arch, const Mlp& net, const ProjectionSpec* ps, const Vector& x) {
  const Vector u_hat = forward(net, x);
  if (arch == Architecture::BBNN) return u_hat;
  if (!ps) throw Error(ErrorCode::InvalidArgument, "ProjectionNN needs a projection spec");
  return project_feasible(*ps, x, u_hat).u;
}

/// d(output)/dx, chaining the network Jacobian through the projection.
inline Matrix network_gradient(Architecture arch, const Mlp& net, const ProjectionSpec* ps, const Vector& x) {
  const Matrix jn = input_jacobian(net, x);
  if (arch == Architecture::BBNN) return jn;
  if (!ps) throw Error(ErrorCode::InvalidArgument, "ProjectionNN needs a projection spec");
  const ProjectionJacobians pj = projection_jacobians(*ps, x, forward(net, x), true);
  return pj.du_duhat * jn + pj.du_dx;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 64;
  int epochs = 200;
  std::uint64_t seed = 0;
  bool project_during_training = true;

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "train: learning_rate must be > 0");
    if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "train: batch_size must be >= 1");
    if (epochs < 0) throw Error(ErrorCode::InvalidArgument, "train: epochs must be >= 0");
  }
};

struct TrainResult {
  Mlp net;
  /// Mean training loss of each epoch.
  std::vector<double> loss_history;
  /// MSE of the returned network over the whole dataset.
  double final_mse = 0.0;
};

namespace detail {

inline Matrix stack_columns(const std::vector<Vector>& v, const std::vector<std::size_t>& idx) {
  Matrix out(v[idx.front()].size(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = v[idx[j]];
  return out;
}

/// Batch loss (mean squared error per output component) and, when requested,
/// its gradient with respect to the raw network outputs.
inline double batch_loss(Architecture arch, bool project, const ProjectionSpec* ps, const Matrix& states,
                         const Matrix& u_hat, const Matrix& targets, Matrix* grad_uhat) {
  const double scale = 1.0 / static_cast<double>(u_hat.size());
  Matrix out = u_hat;
  std::vector<ProjectionResult> proj;
  if (arch == Architecture::ProjectionNN && project) {
    proj.reserve(static_cast<std::size_t>(u_hat.cols()));
    for (Eigen::Index j = 0; j < u_hat.cols(); ++j) {
      proj.push_back(project_feasible(*ps, states.col(j), u_hat.col(j)));
      out.col(j) = proj.back().u;
    }
  }
  const Matrix err = out - targets;
  if (grad_uhat) {
    *grad_uhat = 2.0 * scale * err;
    for (std::size_t j = 0; j < proj.size(); ++j) {
      if (!proj[j].projected) continue;
      const auto jac = projection_jacobians(*ps, proj[j], false);
      grad_uhat->col(static_cast<Eigen::Index>(j)) = jac.du_duhat.transpose() * grad_uhat->col(static_cast<Eigen::Index>(j));
    }
  }
  return scale * err.squaredNorm();
}

}  // namespace detail

/// Mean squared error of the architecture's output over a dataset.
inline double dataset_mse(Architecture arch, const Mlp& net, const ProjectionSpec* ps, const Dataset& ds) {
  if (ds.empty()) return 0.0;
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  const Matrix states = detail::stack_columns(ds.states, all);
  const Matrix targets = detail::stack_columns(ds.targets, all);
  return detail::batch_loss(arch, true, ps, states, forward_batch(net, states), targets, nullptr);
}

/// Minibatch Adam on the mean squared error. For the projection architecture
/// the projection layer is part of the graph when `project_during_training`.
inline TrainResult train(const Mlp& init, const Dataset& ds, const TrainConfig& cfg, Architecture arch,
                         const ProjectionSpec* ps = nullptr) {
  cfg.validate();
  init.validate();
  if (ds.empty()) throw Error(ErrorCode::InvalidArgument, "train: empty dataset");
  require_dims(ds.state_dim() == init.input_dim(), "train: dataset state dim vs network input");
  require_dims(ds.target_dim() == init.output_dim(), "train: dataset target dim vs network output");
  if (arch == Architecture::ProjectionNN) {
    if (!ps) throw Error(ErrorCode::InvalidArgument, "train: ProjectionNN needs a projection spec");
    if (ds.target_mode != TargetMode::FirstInput) throw Error(ErrorCode::InvalidArgument, "train: ProjectionNN needs FirstInput targets");
    require_dims(ps->input_dim() == init.output_dim() && ps->state_dim() == init.input_dim(), "train: projection spec dims");
  }

  TrainResult result{init, {}, 0.0};
  Mlp& net = result.net;
  const std::size_t layers = net.num_layers();
  std::vector<Matrix> mw(layers), vw(layers);
  std::vector<Vector> mb(layers), vb(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    mw[l] = vw[l] = Matrix::Zero(net.weights[l].rows(), net.weights[l].cols());
    mb[l] = vb[l] = Vector::Zero(net.biases[l].size());
  }

  Prng prng(cfg.seed);
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  const bool project = cfg.project_during_training;
  long long step = 0;
  long long batch_index = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[prng.below(i)]);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      const Matrix states = detail::stack_columns(ds.states, idx);
      const Matrix targets = detail::stack_columns(ds.targets, idx);
      ForwardCache cache;
      const Matrix u_hat = forward_batch(net, states, &cache);
      Matrix grad;
      const double loss = detail::batch_loss(arch, project, ps, states, u_hat, targets, &grad);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::NonFiniteLoss, "non-finite loss at batch " + std::to_string(batch_index));
      }
      epoch_loss += loss * static_cast<double>(idx.size());
      seen += idx.size();
      const MlpGradients g = backward(net, cache, grad);
      ++step;
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      auto adam = [&](auto& param, auto& m1, auto& m2, const auto& grad_p) {
        m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * grad_p;
        m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * grad_p.cwiseProduct(grad_p);
        param.array() -= cfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg.adam_eps);
      };
      for (std::size_t l = 0; l < layers; ++l) {
        adam(net.weights[l], mw[l], vw[l], g.d_weights[l]);
        adam(net.biases[l], mb[l], vb[l], g.d_biases[l]);
      }
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(seen));
  }
  result.final_mse = dataset_mse(arch, net, ps, ds);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: header lines, then for each layer "layer <l> <rows> <cols>",
// the weight rows and one bias line.

struct Checkpoint {
  Mlp net;
  Architecture arch = Architecture::BBNN;
  std::uint64_t seed = 0;
  TargetMode target_mode = TargetMode::FirstInput;
};

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  os << "# format: mpcnn-network 1\n";
  os << "# arch: " << to_string(ck.arch) << "\n";
  os << "# target_mode: " << to_string(ck.target_mode) << "\n";
  os << "# seed: " << ck.seed << "\n";
  os << "# widths:";
  for (int w : ck.net.widths()) os << ' ' << w;
  os << "\n";
  for (std::size_t l = 0; l < ck.net.num_layers(); ++l) {
    const Matrix& w = ck.net.weights[l];
    os << "layer " << l << ' ' << w.rows() << ' ' << w.cols() << "\n";
    for (Eigen::Index r = 0; r < w.rows(); ++r) os << format_vector(w.row(r).transpose()) << "\n";
    os << format_vector(ck.net.biases[l]) << "\n";
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::vector<std::pair<int, std::string>> body;
  std::map<std::string, std::string> header;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (line[0] == '#') {
      const auto colon = line.find(':');
      if (colon != std::string::npos) header[trim(line.substr(1, colon - 1))] = trim(line.substr(colon + 1));
    } else {
      body.emplace_back(line_no, line);
    }
  }
  std::size_t cursor = 0;
  auto fail = [&](const std::string& msg) {
    const int at = cursor < body.size() ? body[cursor].first : line_no;
    throw Error(ErrorCode::FormatError, "network line " + std::to_string(at) + ": " + msg);
  };
  auto numbers = [&](Eigen::Index expected) {
    if (cursor >= body.size()) fail("unexpected end of file");
    Vector v;
    try {
      v = parse_vector(body[cursor].second);
    } catch (const Error& e) {
      fail(e.what());
    }
    if (v.size() != expected) fail("expected " + std::to_string(expected) + " values, found " + std::to_string(v.size()));
    ++cursor;
    return v;
  };

  Checkpoint ck;
  if (header.count("format") == 0 || header["format"].rfind("mpcnn-network", 0) != 0) fail("missing format header");
  std::vector<int> widths;
  try {
    ck.arch = parse_architecture(header.at("arch"));
    ck.seed = std::stoull(header.at("seed"));
    if (header.count("target_mode")) ck.target_mode = parse_target_mode(header.at("target_mode"));
    std::istringstream ws(header.at("widths"));
    int w = 0;
    while (ws >> w) widths.push_back(w);
  } catch (const std::exception&) {
    fail("missing or invalid header");
  }
  if (widths.size() < 2) fail("widths header needs at least two entries");
  ck.net = Mlp::zeros(widths);
  for (std::size_t l = 0; l < ck.net.num_layers(); ++l) {
    if (cursor >= body.size()) fail("missing layer " + std::to_string(l));
    std::istringstream hs(body[cursor].second);
    std::string tag;
    std::size_t idx = 0;
    Eigen::Index rows = 0, cols = 0;
    if (!(hs >> tag >> idx >> rows >> cols) || tag != "layer" || idx != l) fail("expected 'layer " + std::to_string(l) + " rows cols'");
    if (rows != ck.net.weights[l].rows() || cols != ck.net.weights[l].cols()) fail("layer shape disagrees with widths");
    ++cursor;
    for (Eigen::Index r = 0; r < rows; ++r) ck.net.weights[l].row(r) = numbers(cols).transpose();
    ck.net.biases[l] = numbers(rows);
  }
  if (cursor != body.size()) fail("trailing data after last layer");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  write_checkpoint(out, ck);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return read_checkpoint(in);
}

/// Widths used when none are configured: two hidden layers of 32 units for
/// two-state systems, 64 otherwise.
inline std::vector<int> default_widths(Eigen::Index n, Eigen::Index out) {
  const int hidden = n <= 2 ? 32 : 64;
  return {static_cast<int>(n), hidden, hidden, static_cast<int>(out)};
}

}  // namespace mpcnn
