#pragma once

// Gradient-based selection of new training states. Around an anchor x_i the
// network-vs-MPC error is expanded to first order,
//   e(x) ~ e(x_i) + G (x - x_i),  G = grad n(x_i) - grad mu(x_i),
// and the step of length epsilon that grows it fastest is the top right
// singular vector of G.

#include <mpcnn/mpc.hpp>
#include <mpcnn/network.hpp>

#include <algorithm>
#include <numeric>
#include <vector>

namespace mpcnn {

struct ErrorProbe {
  Vector anchor;
  Vector value_gap;
  Matrix grad_gap;
  double epsilon = 0.0;
};

inline ErrorProbe build_probe(Architecture arch, const Mlp& net, const ProjectionSpec* ps, const MpcSpec& spec,
                              const Vector& x_i, double epsilon) {
  if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "build_probe: epsilon must be > 0");
  require_dims(net.output_dim() == spec.m(), "build_probe: network must predict u0");
  const MpcSolution sol = solve_mpc(spec, x_i);
  ErrorProbe probe;
  probe.anchor = x_i;
  probe.epsilon = epsilon;
  probe.value_gap = network_output(arch, net, ps, x_i) - sol.u_seq.front();
  probe.grad_gap = network_gradient(arch, net, ps, x_i) - mpc_gradient(spec, sol);
  return probe;
}

struct Proposal {
  Vector x_new;
  double predicted_gap_growth = 0.0;
  double epsilon_used = 0.0;
  /// False when the gradient gap vanishes and x_new is the anchor itself.
  bool informative = true;
};

/// Tries +-epsilon v, halving epsilon up to 10 times until the point lies in
/// `cinf`. The sign that increases the predicted error is tried first.
inline Proposal propose_sample(const ErrorProbe& probe, const Polytope& cinf) {
  require_dims(probe.grad_gap.cols() == probe.anchor.size(), "propose_sample: grad_gap columns");
  if (probe.grad_gap.size() == 0 || probe.grad_gap.cwiseAbs().maxCoeff() == 0.0) {
    return {probe.anchor, 0.0, 0.0, false};
  }
  const SingularPair sv = top_right_singular_vector(probe.grad_gap);
  Vector v = sv.v;
  if (probe.value_gap.size() == probe.grad_gap.rows() && probe.value_gap.dot(probe.grad_gap * v) < 0.0) v = -v;
  double eps = probe.epsilon;
  for (int halving = 0; halving <= 10; ++halving, eps *= 0.5) {
    for (double sign : {1.0, -1.0}) {
      const Vector x = probe.anchor + sign * eps * v;
      if (cinf.contains(x, 1e-9)) return {x, sv.s * eps, eps, true};
    }
  }
  throw Error(ErrorCode::NoFeasibleProposal, "no proposal inside the invariant set after 10 halvings");
}

/// Step length used when none is configured: 5% of the Chebyshev radius.
inline double default_epsilon(const Polytope& cinf) { return 0.05 * chebyshev_center(cinf).radius; }

struct AcquisitionResult {
  std::vector<Vector> points;
  std::vector<double> scores;
  std::size_t skipped = 0;
};

/// Probes every anchor, ranks proposals by predicted growth plus |value gap|
/// and keeps the best k that are at least epsilon/2 apart. Anchors with a
/// degenerate active set (or no admissible proposal) are skipped.
inline AcquisitionResult acquisition_round(Architecture arch, const Mlp& net, const ProjectionSpec* ps, const MpcSpec& spec,
                                           const Polytope& cinf, const std::vector<Vector>& anchors, double epsilon,
                                           std::size_t k, unsigned threads = 1) {
  AcquisitionResult out;
  if (k == 0) return out;
  if (anchors.empty()) throw Error(ErrorCode::InvalidArgument, "acquisition_round: no anchors");
  std::vector<std::optional<std::pair<Proposal, double>>> cand(anchors.size());
  parallel_for(anchors.size(), threads, [&](std::size_t i) {
    try {
      const ErrorProbe probe = build_probe(arch, net, ps, spec, anchors[i], epsilon);
      Proposal p = propose_sample(probe, cinf);
      const double score = p.predicted_gap_growth + probe.value_gap.norm();
      cand[i].emplace(std::move(p), score);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateActiveSet && e.code() != ErrorCode::NoFeasibleProposal) throw;
    }
  });
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (cand[i]) order.push_back(i);
    else ++out.skipped;
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cand[a]->second > cand[b]->second; });
  for (std::size_t i : order) {
    if (out.points.size() >= k) break;
    const Vector& x = cand[i]->first.x_new;
    const bool separated = std::all_of(out.points.begin(), out.points.end(),
                                       [&](const Vector& p) { return (p - x).norm() >= 0.5 * epsilon; });
    if (!separated) continue;
    out.points.push_back(x);
    out.scores.push_back(cand[i]->second);
  }
  return out;
}

}  // namespace mpcnn
