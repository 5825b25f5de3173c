#pragma once

// H-representation polytopes {x : A x <= b}: membership, Chebyshev center,
// LP-based redundancy removal and inclusion tests, Fourier-Motzkin projection,
// the Pre operator and the maximal control invariant set iteration.

#include <mpcnn/numerics.hpp>
#include <mpcnn/optimize.hpp>
#include <mpcnn/system.hpp>

#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace mpcnn {

struct PolytopeTolerances {
  /// Row i is redundant when max a_i x over the other rows <= b_i + redundancy.
  double redundancy = 1e-8;
  /// Rows whose normal has norm below this are treated as zero rows.
  double zero_row = 1e-12;
  /// Coefficients below this are treated as zero during elimination.
  double elimination_zero = 1e-12;
  double empty_radius = 1e-9;
};

class Polytope {
 public:
  Polytope() = default;

  /// Rows are normalized to unit 2-norm. Zero rows with b >= 0 are dropped;
  /// a zero row with b < 0 marks the set as empty.
  Polytope(const Matrix& a, const Vector& b, const PolytopeTolerances& tol = {}) {
    require_dims(a.rows() == b.size(), "polytope: A rows must equal b length");
    if (!a.allFinite() || !b.allFinite()) throw Error(ErrorCode::InvalidArgument, "polytope: non-finite data");
    dim_ = a.cols();
    std::vector<Eigen::Index> keep;
    keep.reserve(static_cast<std::size_t>(a.rows()));
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double norm = a.row(i).norm();
      if (norm < tol.zero_row) {
        if (b(i) < 0.0) empty_flag_ = true;
        continue;
      }
      keep.push_back(i);
    }
    a_ = Matrix(static_cast<Eigen::Index>(keep.size()) + (empty_flag_ ? 1 : 0), dim_);
    b_ = Vector(a_.rows());
    for (std::size_t k = 0; k < keep.size(); ++k) {
      const auto i = keep[k];
      const double norm = a.row(i).norm();
      a_.row(static_cast<Eigen::Index>(k)) = a.row(i) / norm;
      b_(static_cast<Eigen::Index>(k)) = b(i) / norm;
    }
    if (empty_flag_) {
      // Canonical infeasible row 0'x <= -1.
      a_.row(a_.rows() - 1).setZero();
      b_(b_.size() - 1) = -1.0;
    }
  }

  static Polytope box(const Vector& lo, const Vector& hi) {
    require_dims(lo.size() == hi.size(), "box: bound sizes");
    const Eigen::Index n = lo.size();
    Matrix a(2 * n, n);
    a << Matrix::Identity(n, n), -Matrix::Identity(n, n);
    Vector b(2 * n);
    b << hi, -lo;
    return Polytope(a, b);
  }

  static Polytope symmetric_box(const Vector& half_width) { return box(-half_width, half_width); }

  Eigen::Index dim() const { return dim_; }
  Eigen::Index num_rows() const { return a_.rows(); }
  const Matrix& a_mat() const { return a_; }
  const Vector& b_vec() const { return b_; }
  bool flagged_empty() const { return empty_flag_; }

  bool contains(const Vector& x, double tol = 1e-9) const {
    require_dims(x.size() == dim_, "contains: dimension mismatch");
    if (num_rows() == 0) return true;
    return ((a_ * x - b_).array() <= tol).all();
  }

  /// Largest constraint violation max_i (a_i x - b_i); negative inside.
  double max_violation(const Vector& x) const {
    require_dims(x.size() == dim_, "max_violation: dimension mismatch");
    if (num_rows() == 0) return -std::numeric_limits<double>::infinity();
    return (a_ * x - b_).maxCoeff();
  }

 private:
  Matrix a_;
  Vector b_;
  Eigen::Index dim_ = 0;
  bool empty_flag_ = false;
};

struct ChebyshevBall {
  Vector center;
  double radius = 0.0;
};

/// Center and radius of the largest inscribed ball. Throws EmptyPolytope when
/// the optimal radius is negative and UnboundedPolytope when it is unbounded.
inline ChebyshevBall chebyshev_center(const Polytope& p, const PolytopeTolerances& tol = {}) {
  if (p.num_rows() == 0) throw Error(ErrorCode::UnboundedPolytope, "chebyshev_center: no constraints");
  const Eigen::Index n = p.dim();
  Matrix a(p.num_rows(), n + 1);
  a.leftCols(n) = p.a_mat();
  a.col(n) = p.a_mat().rowwise().norm();
  Vector c = Vector::Zero(n + 1);
  c(n) = 1.0;
  const LpResult lp = lp_maximize(c, a, p.b_vec());
  if (lp.status == LpStatus::Unbounded) throw Error(ErrorCode::UnboundedPolytope, "chebyshev_center: radius unbounded");
  if (lp.status == LpStatus::Infeasible) throw Error(ErrorCode::EmptyPolytope, "chebyshev_center: infeasible");
  const double r = lp.x(n);
  if (r < -tol.empty_radius) {
    throw Error(ErrorCode::EmptyPolytope, "chebyshev_center: optimal radius " + std::to_string(r));
  }
  return {lp.x.head(n), r};
}

/// True when the set has at least one point (LP feasibility).
inline bool is_nonempty(const Polytope& p) {
  if (p.flagged_empty()) return false;
  if (p.num_rows() == 0) return true;
  const LpResult lp = lp_maximize(Vector::Zero(p.dim()), p.a_mat(), p.b_vec());
  return lp.status != LpStatus::Infeasible;
}

/// Support function max a'x over p.
inline LpResult support(const Polytope& p, const Vector& direction) {
  require_dims(direction.size() == p.dim(), "support: dimension mismatch");
  return lp_maximize(direction, p.a_mat(), p.b_vec());
}

/// Removes redundant rows, one LP per row against the rows kept so far.
inline Polytope minimize(const Polytope& p, const PolytopeTolerances& tol = {}) {
  if (p.flagged_empty() || p.num_rows() <= 1) return p;
  const Eigen::Index n = p.dim();
  const Matrix& a = p.a_mat();
  const Vector& b = p.b_vec();

  // Exact (up to 1e-12) duplicate normals: keep the tightest offset.
  std::vector<Eigen::Index> order;
  std::vector<char> dropped(static_cast<std::size_t>(a.rows()), 0);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (dropped[i]) continue;
    for (Eigen::Index j = i + 1; j < a.rows(); ++j) {
      if (dropped[j]) continue;
      if ((a.row(i) - a.row(j)).cwiseAbs().maxCoeff() < 1e-12) {
        if (b(j) < b(i)) {
          dropped[i] = 1;
          break;
        }
        dropped[j] = 1;
      }
    }
  }
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (!dropped[i]) order.push_back(i);
  }

  std::vector<char> kept(static_cast<std::size_t>(a.rows()), 0);
  for (auto i : order) kept[i] = 1;
  for (auto i : order) {
    std::vector<Eigen::Index> others;
    for (auto j : order) {
      if (j != i && kept[j]) others.push_back(j);
    }
    Matrix sub(static_cast<Eigen::Index>(others.size()) + 1, n);
    Vector rhs(sub.rows());
    for (std::size_t k = 0; k < others.size(); ++k) {
      sub.row(static_cast<Eigen::Index>(k)) = a.row(others[k]);
      rhs(static_cast<Eigen::Index>(k)) = b(others[k]);
    }
    // Relaxed copy of row i keeps the LP bounded.
    sub.row(sub.rows() - 1) = a.row(i);
    rhs(rhs.size() - 1) = b(i) + 1.0;
    const LpResult lp = lp_maximize(a.row(i).transpose(), sub, rhs);
    if (lp.status == LpStatus::Optimal && lp.value <= b(i) + tol.redundancy) kept[i] = 0;
  }

  std::vector<Eigen::Index> rows;
  for (auto i : order) {
    if (kept[i]) rows.push_back(i);
  }
  Matrix a_out(static_cast<Eigen::Index>(rows.size()), n);
  Vector b_out(a_out.rows());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    a_out.row(static_cast<Eigen::Index>(k)) = a.row(rows[k]);
    b_out(static_cast<Eigen::Index>(k)) = b(rows[k]);
  }
  return Polytope(a_out, b_out);
}

inline Polytope stack_rows(const Polytope& p, const Polytope& q) {
  require_dims(p.dim() == q.dim(), "intersect: dimension mismatch");
  Matrix a(p.num_rows() + q.num_rows(), p.dim());
  a << p.a_mat(), q.a_mat();
  Vector b(a.rows());
  b << p.b_vec(), q.b_vec();
  return Polytope(a, b);
}

inline Polytope intersect(const Polytope& p, const Polytope& q, const PolytopeTolerances& tol = {}) {
  return minimize(stack_rows(p, q), tol);
}

/// P subset of Q: every row of Q is satisfied by the maximizer of its normal over P.
inline bool is_subset(const Polytope& p, const Polytope& q, double tol = 1e-7) {
  require_dims(p.dim() == q.dim(), "is_subset: dimension mismatch");
  for (Eigen::Index i = 0; i < q.num_rows(); ++i) {
    const LpResult lp = lp_maximize(q.a_mat().row(i).transpose(), p.a_mat(), p.b_vec());
    if (lp.status == LpStatus::Infeasible) return true;
    if (lp.status == LpStatus::Unbounded) return false;
    if (lp.value > q.b_vec()(i) + tol) return false;
  }
  return true;
}

inline bool set_equal(const Polytope& p, const Polytope& q, double tol = 1e-7) {
  return is_subset(p, q, tol) && is_subset(q, p, tol);
}

/// Projects out coordinate `index` by Fourier-Motzkin elimination, followed by
/// redundancy removal.
inline Polytope eliminate_coordinate(const Polytope& p, Eigen::Index index, const PolytopeTolerances& tol = {}) {
  require_dims(index >= 0 && index < p.dim(), "eliminate_coordinate: index out of range");
  const Eigen::Index n = p.dim();
  const Matrix& a = p.a_mat();
  const Vector& b = p.b_vec();
  std::vector<Eigen::Index> pos, neg, zero;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double c = a(i, index);
    if (c > tol.elimination_zero) pos.push_back(i);
    else if (c < -tol.elimination_zero) neg.push_back(i);
    else zero.push_back(i);
  }
  auto drop_col = [&](const Eigen::RowVectorXd& row) {
    Eigen::RowVectorXd out(n - 1);
    out << row.head(index), row.tail(n - index - 1);
    return out;
  };
  const auto total = static_cast<Eigen::Index>(zero.size() + pos.size() * neg.size());
  Matrix a_out(total, n - 1);
  Vector b_out(total);
  Eigen::Index r = 0;
  for (auto i : zero) {
    a_out.row(r) = drop_col(a.row(i));
    b_out(r++) = b(i);
  }
  for (auto i : pos) {
    for (auto j : neg) {
      const double ci = a(i, index);
      const double cj = -a(j, index);
      Eigen::RowVectorXd row = a.row(i) / ci + a.row(j) / cj;
      a_out.row(r) = drop_col(row);
      b_out(r++) = b(i) / ci + b(j) / cj;
    }
  }
  Polytope projected(a_out, b_out, tol);
  if (projected.flagged_empty()) return projected;
  return minimize(projected, tol);
}

/// Pre(target) = {x : exists u in input_set with A x + B u in target}.
inline Polytope pre_set(const Polytope& target, const LinearSystem& sys, const Polytope& input_set,
                        const PolytopeTolerances& tol = {}) {
  sys.validate();
  const Eigen::Index n = sys.state_dim();
  const Eigen::Index m = sys.input_dim();
  require_dims(target.dim() == n, "pre_set: target dimension must equal state dimension");
  require_dims(input_set.dim() == m, "pre_set: input set dimension must equal input dimension");
  if (target.flagged_empty() || input_set.flagged_empty()) throw Error(ErrorCode::EmptyPolytope, "pre_set: empty operand");

  Matrix lifted_a(target.num_rows() + input_set.num_rows(), n + m);
  lifted_a.setZero();
  lifted_a.topLeftCorner(target.num_rows(), n) = target.a_mat() * sys.a_mat;
  lifted_a.topRightCorner(target.num_rows(), m) = target.a_mat() * sys.b_mat;
  lifted_a.bottomRightCorner(input_set.num_rows(), m) = input_set.a_mat();
  Vector lifted_b(lifted_a.rows());
  lifted_b << target.b_vec(), input_set.b_vec();
  Polytope lifted(lifted_a, lifted_b, tol);
  if (!is_nonempty(lifted)) throw Error(ErrorCode::EmptyPolytope, "pre_set: lifted set is empty");

  Polytope current = minimize(lifted, tol);
  for (Eigen::Index k = 0; k < m; ++k) current = eliminate_coordinate(current, current.dim() - 1, tol);
  return current;
}

struct InvariantSetResult {
  Polytope set;
  int iterations = 0;
  bool certified = false;
};

/// Omega_0 = X, Omega_{k+1} = Pre(Omega_k) & Omega_k until Omega_k is
/// contained in Omega_{k+1}. An uncertified result carries the last iterate.
inline InvariantSetResult max_control_invariant(const LinearSystem& sys, const Polytope& state_set,
                                                const Polytope& input_set, int max_iter = 100,
                                                double inclusion_tol = 1e-7, const PolytopeTolerances& tol = {}) {
  if (!is_nonempty(state_set) || !is_nonempty(input_set)) {
    throw Error(ErrorCode::EmptyPolytope, "max_control_invariant: empty constraint set");
  }
  InvariantSetResult result;
  Polytope omega = minimize(state_set, tol);
  for (int k = 0; k < max_iter; ++k) {
    const Polytope next = intersect(pre_set(omega, sys, input_set, tol), omega, tol);
    result.iterations = k + 1;
    if (is_subset(omega, next, inclusion_tol)) {
      result.set = omega;
      result.certified = true;
      return result;
    }
    omega = next;
  }
  result.set = omega;
  result.certified = false;
  return result;
}

/// Smallest t such that some u in input_set gives A x + B u within t of
/// target (row-wise). t <= 0 certifies an admissible input.
inline double admissible_input_gap(const Vector& x, const LinearSystem& sys, const Polytope& input_set,
                                   const Polytope& target) {
  const Eigen::Index m = sys.input_dim();
  const Eigen::Index ru = input_set.num_rows();
  const Eigen::Index rt = target.num_rows();
  Matrix a(ru + rt + 1, m + 1);
  a.setZero();
  a.topLeftCorner(ru, m) = input_set.a_mat();
  a.block(ru, 0, rt, m) = target.a_mat() * sys.b_mat;
  a.col(m).head(ru + rt).setConstant(-1.0);
  a(ru + rt, m) = -1.0;
  Vector b(a.rows());
  b << input_set.b_vec(), target.b_vec() - target.a_mat() * (sys.a_mat * x), 1.0;
  Vector c = Vector::Zero(m + 1);
  c(m) = -1.0;
  const LpResult lp = lp_maximize(c, a, b);
  if (lp.status != LpStatus::Optimal) throw Error(ErrorCode::LpFailure, "admissible_input_gap: LP failed");
  return lp.x(m);
}

// ---------------------------------------------------------------------------
// Text format: "m n", then m lines of n coefficients followed by the offset.

inline void write_polytope(std::ostream& os, const Polytope& p) {
  os << p.num_rows() << ' ' << p.dim() << '\n';
  os << std::setprecision(17);
  for (Eigen::Index i = 0; i < p.num_rows(); ++i) {
    for (Eigen::Index j = 0; j < p.dim(); ++j) os << p.a_mat()(i, j) << ' ';
    os << p.b_vec()(i) << '\n';
  }
}

inline Polytope read_polytope(std::istream& is) {
  std::string line;
  int line_no = 0;
  auto next_line = [&]() -> std::string {
    while (std::getline(is, line)) {
      ++line_no;
      if (!line.empty() && line.find_first_not_of(" \t\r") != std::string::npos) return line;
    }
    throw Error(ErrorCode::FormatError, "polytope: unexpected end of file after line " + std::to_string(line_no));
  };
  long long m = -1, n = -1;
  {
    std::istringstream hs(next_line());
    if (!(hs >> m >> n) || m < 0 || n < 1) throw Error(ErrorCode::FormatError, "polytope: bad header at line " + std::to_string(line_no));
  }
  Matrix a(m, n);
  Vector b(m);
  for (long long i = 0; i < m; ++i) {
    std::istringstream ls(next_line());
    for (long long j = 0; j < n; ++j) {
      if (!(ls >> a(i, j))) throw Error(ErrorCode::FormatError, "polytope: bad coefficient at line " + std::to_string(line_no));
    }
    if (!(ls >> b(i))) throw Error(ErrorCode::FormatError, "polytope: missing offset at line " + std::to_string(line_no));
  }
  return Polytope(a, b);
}

}  // namespace mpcnn
