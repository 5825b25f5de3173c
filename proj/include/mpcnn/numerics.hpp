#pragma once

// Dense linear algebra helpers, error type and deterministic randomness shared
// by every other header in the library.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace mpcnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  SingularMatrix,
  DidNotConverge,
  NoConvergence,
  LpFailure,
  EmptyPolytope,
  UnboundedPolytope,
  InfeasibleState,
  DegenerateActiveSet,
  EmptyChord,
  NotInterior,
  GenerationStalled,
  FormatError,
  MetadataMismatch,
  InfeasibleProjection,
  NonFiniteLoss,
  ZeroReference,
  ZeroInitialState,
  ControllerFailure,
  NoFeasibleProposal,
  IoError,
};

constexpr std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::SingularMatrix: return "SingularMatrix";
    case ErrorCode::DidNotConverge: return "DidNotConverge";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::LpFailure: return "LpFailure";
    case ErrorCode::EmptyPolytope: return "EmptyPolytope";
    case ErrorCode::UnboundedPolytope: return "UnboundedPolytope";
    case ErrorCode::InfeasibleState: return "InfeasibleState";
    case ErrorCode::DegenerateActiveSet: return "DegenerateActiveSet";
    case ErrorCode::EmptyChord: return "EmptyChord";
    case ErrorCode::NotInterior: return "NotInterior";
    case ErrorCode::GenerationStalled: return "GenerationStalled";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::MetadataMismatch: return "MetadataMismatch";
    case ErrorCode::InfeasibleProjection: return "InfeasibleProjection";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::ZeroReference: return "ZeroReference";
    case ErrorCode::ZeroInitialState: return "ZeroInitialState";
    case ErrorCode::ControllerFailure: return "ControllerFailure";
    case ErrorCode::NoFeasibleProposal: return "NoFeasibleProposal";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Library-wide exception. `code()` is the machine-readable error class.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require_dims(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::DimensionMismatch, what);
}

/// Infinite bounds are stored as this sentinel so residual arithmetic stays finite.
inline constexpr double kInf = 1e30;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// ---------------------------------------------------------------------------
// LDL^T factorization

struct LdltSettings {
  /// A pivot is rejected when |d_k| < pivot_tol * max|M|.
  double pivot_tol = 1e-12;
};

/// Unpivoted LDL^T factorization of a symmetric matrix. Suitable for SPD and
/// quasi-definite matrices; factor once, solve many times.
class Ldlt {
 public:
  Ldlt() = default;
  explicit Ldlt(const Matrix& m, const LdltSettings& settings = {}) { factor(m, settings); }

  void factor(const Matrix& m, const LdltSettings& settings = {}) {
    require_dims(m.rows() == m.cols(), "ldlt: matrix must be square");
    const Eigen::Index n = m.rows();
    const double scale = n > 0 ? m.cwiseAbs().maxCoeff() : 0.0;
    const double tol = settings.pivot_tol * scale;
    lower_ = Matrix::Identity(n, n);
    diag_ = Vector::Zero(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      double d = m(j, j);
      for (Eigen::Index k = 0; k < j; ++k) d -= lower_(j, k) * lower_(j, k) * diag_(k);
      if (!(std::abs(d) >= tol) || scale == 0.0) {
        throw Error(ErrorCode::SingularMatrix,
                    "pivot " + std::to_string(j) + " has magnitude " + std::to_string(std::abs(d)));
      }
      diag_(j) = d;
      for (Eigen::Index i = j + 1; i < n; ++i) {
        double v = m(i, j);
        for (Eigen::Index k = 0; k < j; ++k) v -= lower_(i, k) * lower_(j, k) * diag_(k);
        lower_(i, j) = v / d;
      }
    }
  }

  Vector solve(const Vector& rhs) const {
    require_dims(rhs.size() == diag_.size(), "ldlt: rhs size");
    Vector z = lower_.triangularView<Eigen::UnitLower>().solve(rhs);
    z.array() /= diag_.array();
    lower_.transpose().triangularView<Eigen::UnitUpper>().solveInPlace(z);
    return z;
  }

  Matrix solve(const Matrix& rhs) const {
    Matrix out(rhs.rows(), rhs.cols());
    for (Eigen::Index c = 0; c < rhs.cols(); ++c) out.col(c) = solve(Vector(rhs.col(c)));
    return out;
  }

  const Vector& diagonal() const { return diag_; }
  Eigen::Index size() const { return diag_.size(); }

 private:
  Matrix lower_;
  Vector diag_;
};

inline Vector ldlt_solve(const Matrix& m, const Vector& rhs, const LdltSettings& settings = {}) {
  return Ldlt(m, settings).solve(rhs);
}

// ---------------------------------------------------------------------------
// Dominant singular pair by power iteration on G^T G

struct PowerIterationSettings {
  double direction_tol = 1e-10;
  double accept_tol = 1e-6;
  int max_iter = 10'000;
};

struct SingularPair {
  Vector v;
  double s = 0.0;
};

inline SingularPair top_right_singular_vector(const Matrix& g, const PowerIterationSettings& settings = {}) {
  if (g.size() == 0 || g.cwiseAbs().maxCoeff() == 0.0) {
    throw Error(ErrorCode::InvalidArgument, "top_right_singular_vector: zero matrix");
  }
  const Matrix gram = g.transpose() * g;
  const Eigen::Index n = gram.rows();
  // Start from the column of largest norm plus a small uniform tilt so the
  // start is never orthogonal to the dominant direction.
  Eigen::Index best = 0;
  gram.diagonal().maxCoeff(&best);
  Vector v = Vector::Constant(n, 1e-3 / std::sqrt(static_cast<double>(n)));
  v(best) += 1.0;
  v.normalize();

  double change = std::numeric_limits<double>::infinity();
  for (int it = 0; it < settings.max_iter; ++it) {
    Vector w = gram * v;
    const double norm = w.norm();
    if (norm == 0.0) break;
    w /= norm;
    if (w.dot(v) < 0.0) w = -w;
    change = (w - v).norm();
    v = w;
    if (change < settings.direction_tol) break;
  }
  if (change > settings.accept_tol) {
    throw Error(ErrorCode::DidNotConverge,
                "power iteration stalled with direction change " + std::to_string(change));
  }
  return {v, (g * v).norm()};
}

/// Largest eigenvalue magnitude of a square matrix.
inline double spectral_radius(const Matrix& m) {
  require_dims(m.rows() == m.cols(), "spectral_radius: square matrix required");
  if (m.size() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> es(m, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// Randomness

/// xoshiro256** 1.0 seeded through splitmix64.
class Prng {
 public:
  explicit Prng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    seed_ = seed;
    std::uint64_t sm = seed;
    for (auto& s : state_) s = splitmix64(sm);
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

  /// Advances the state by 2^128 steps; returns a copy positioned before the jump.
  Prng split() {
    Prng copy = *this;
    jump();
    return copy;
  }

  void jump() {
    static constexpr std::array<std::uint64_t, 4> kJump = {0x180ec6d33cfd0abaULL, 0xd5a61266f0c9392cULL,
                                                           0xa9582618e03fc9aaULL, 0x39abdc4529b1661cULL};
    std::array<std::uint64_t, 4> acc{};
    for (std::uint64_t word : kJump) {
      for (int b = 0; b < 64; ++b) {
        if (word & (std::uint64_t{1} << b)) {
          for (int i = 0; i < 4; ++i) acc[i] ^= state_[i];
        }
        next_u64();
      }
    }
    state_ = acc;
  }

  bool operator==(const Prng& other) const { return state_ == other.state_; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_ = 0;
  std::array<std::uint64_t, 4> state_{};
};

/// n i.i.d. N(0,1) draws using the Box-Muller transform; pairs are consumed
/// whole, so an odd n discards the last spare.
inline Vector standard_normal(Prng& prng, Eigen::Index n) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "standard_normal: n must be >= 1");
  Vector out(n);
  for (Eigen::Index i = 0; i < n; i += 2) {
    double u1 = prng.uniform();
    while (u1 <= 0.0) u1 = prng.uniform();
    const double u2 = prng.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    out(i) = r * std::cos(theta);
    if (i + 1 < n) out(i + 1) = r * std::sin(theta);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Misc

/// 64-bit FNV-1a.
inline std::uint64_t stable_hash(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Sub-seed of a pipeline stage: master seed plus the stage name's hash.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stage) { return master + stable_hash(stage); }

/// Runs body(i) for i in [0, n) across up to `threads` workers. Each index is
/// visited exactly once; results written by index stay deterministic.
template <typename Body>
void parallel_for(std::size_t n, unsigned threads, Body&& body) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < n; i += threads) body(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace mpcnn
