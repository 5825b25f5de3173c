#pragma once

// Hit-and-run sampling of bounded polytopes.

#include <mpcnn/numerics.hpp>
#include <mpcnn/polytope.hpp>

#include <optional>
#include <vector>

namespace mpcnn {

struct HitAndRunConfig {
  std::uint64_t seed = 0;
  int burn_in = 1000;
  int thinning = 10;
  /// Defaults to the Chebyshev center.
  std::optional<Vector> start;
  /// Relative shrink applied to both chord ends before drawing the step.
  double chord_margin = 1e-12;

  void validate() const {
    if (thinning < 1) throw Error(ErrorCode::InvalidArgument, "hit-and-run: thinning must be >= 1");
    if (burn_in < 0) throw Error(ErrorCode::InvalidArgument, "hit-and-run: burn_in must be >= 0");
  }
};

/// One hit-and-run chain. Each step picks a uniform direction on the sphere
/// and a uniform point on the chord through the current state.
class HitAndRunChain {
 public:
  HitAndRunChain(Polytope set, const HitAndRunConfig& cfg) : set_(std::move(set)), cfg_(cfg), prng_(cfg.seed) {
    cfg_.validate();
    if (cfg_.start) {
      require_dims(cfg_.start->size() == set_.dim(), "hit-and-run: start dimension");
      x_ = *cfg_.start;
    } else {
      const ChebyshevBall ball = chebyshev_center(set_);
      if (ball.radius <= 1e-9) throw Error(ErrorCode::NotInterior, "hit-and-run: polytope has no interior");
      x_ = ball.center;
    }
    if (!(set_.max_violation(x_) < -1e-9)) throw Error(ErrorCode::NotInterior, "hit-and-run: start point is not strictly interior");
    for (int i = 0; i < cfg_.burn_in; ++i) step();
  }

  /// Advances `thinning` steps and returns the state.
  const Vector& next() {
    for (int i = 0; i < cfg_.thinning; ++i) step();
    return x_;
  }

  std::vector<Vector> take(std::size_t count) {
    std::vector<Vector> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(next());
    return out;
  }

  const Vector& state() const { return x_; }

  void step() {
    const Eigen::Index n = set_.dim();
    Vector d = standard_normal(prng_, n);
    const double norm = d.norm();
    if (norm == 0.0) return;
    d /= norm;
    const Vector ad = set_.a_mat() * d;
    const Vector slack = set_.b_vec() - set_.a_mat() * x_;
    double t_min = -std::numeric_limits<double>::infinity();
    double t_max = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < ad.size(); ++i) {
      if (ad(i) > 0.0) t_max = std::min(t_max, slack(i) / ad(i));
      else if (ad(i) < 0.0) t_min = std::max(t_min, slack(i) / ad(i));
    }
    if (!std::isfinite(t_min) || !std::isfinite(t_max)) {
      throw Error(ErrorCode::UnboundedPolytope, "hit-and-run: chord is unbounded");
    }
    const double margin = cfg_.chord_margin * (t_max - t_min);
    t_min += margin;
    t_max -= margin;
    if (t_max < t_min) throw Error(ErrorCode::EmptyChord, "hit-and-run: empty chord");
    x_ += prng_.uniform(t_min, t_max) * d;
  }

 private:
  Polytope set_;
  HitAndRunConfig cfg_;
  Prng prng_;
  Vector x_;
};

/// n samples: after `burn_in` steps, every `thinning`-th state.
inline std::vector<Vector> hit_and_run(const Polytope& set, std::size_t n_samples, const HitAndRunConfig& cfg) {
  HitAndRunChain chain(set, cfg);
  return chain.take(n_samples);
}

}  // namespace mpcnn
