#pragma once

// Supervised (state, optimal input) pairs generated by sampling the invariant
// set and solving the MPC problem offline, plus their text file format.

#include <mpcnn/config.hpp>
#include <mpcnn/mpc.hpp>
#include <mpcnn/sampler.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace mpcnn {

enum class TargetMode { FirstInput, FullSequence };

inline const char* to_string(TargetMode m) { return m == TargetMode::FirstInput ? "FirstInput" : "FullSequence"; }

inline TargetMode parse_target_mode(const std::string& s) {
  if (s == "FirstInput" || s == "first-input") return TargetMode::FirstInput;
  if (s == "FullSequence" || s == "full-sequence") return TargetMode::FullSequence;
  throw Error(ErrorCode::InvalidArgument, "unknown target mode '" + s + "'");
}

struct DatasetMetadata {
  std::string spec_hash;
  std::uint64_t sampler_seed = 0;
  int burn_in = 0;
  int thinning = 1;
  double solver_eps_abs = 0.0;
  double solver_eps_rel = 0.0;
  std::string generated;
  std::size_t skipped = 0;
};

struct Dataset {
  std::vector<Vector> states;
  std::vector<Vector> targets;
  TargetMode target_mode = TargetMode::FirstInput;
  DatasetMetadata metadata;

  std::size_t size() const { return states.size(); }
  Eigen::Index state_dim() const { return states.empty() ? 0 : states.front().size(); }
  Eigen::Index target_dim() const { return targets.empty() ? 0 : targets.front().size(); }

  /// First `n` pairs, metadata unchanged.
  Dataset head(std::size_t n) const {
    Dataset out = *this;
    n = std::min(n, size());
    out.states.resize(n);
    out.targets.resize(n);
    return out;
  }

  void append(const Dataset& other) {
    require_dims(other.state_dim() == state_dim() || empty(), "dataset append: state dims");
    states.insert(states.end(), other.states.begin(), other.states.end());
    targets.insert(targets.end(), other.targets.begin(), other.targets.end());
  }

  bool empty() const { return states.empty(); }
};

inline Vector make_target(const MpcSolution& sol, TargetMode mode) {
  if (mode == TargetMode::FirstInput) return sol.u_seq.front();
  const Eigen::Index m = sol.u_seq.front().size();
  Vector out(m * static_cast<Eigen::Index>(sol.u_seq.size()));
  for (std::size_t k = 0; k < sol.u_seq.size(); ++k) out.segment(static_cast<Eigen::Index>(k) * m, m) = sol.u_seq[k];
  return out;
}

struct GenerateOptions {
  TargetMode mode = TargetMode::FirstInput;
  unsigned threads = 1;
  /// Abort when more than this fraction of sampled states cannot be labelled.
  double max_skip_fraction = 0.10;
  std::string timestamp;
};

/// n labelled pairs with states from one hit-and-run chain over `cinf`.
/// States whose MPC problem is infeasible are skipped and replaced by further
/// chain samples.
inline Dataset generate(const MpcSpec& spec, const Polytope& cinf, std::size_t n, const HitAndRunConfig& cfg,
                        const GenerateOptions& opts = {}) {
  spec.validate();
  require_dims(cinf.dim() == spec.n(), "generate: invariant set dimension");
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "generate: n must be > 0");
  Dataset ds;
  ds.target_mode = opts.mode;
  ds.metadata.spec_hash = hex64(spec_hash(spec));
  ds.metadata.sampler_seed = cfg.seed;
  ds.metadata.burn_in = cfg.burn_in;
  ds.metadata.thinning = cfg.thinning;
  ds.metadata.solver_eps_abs = spec.solver.eps_abs;
  ds.metadata.solver_eps_rel = spec.solver.eps_rel;
  ds.metadata.generated = opts.timestamp;

  HitAndRunChain chain(cinf, cfg);
  std::size_t skipped = 0;
  const auto allowed_skips = static_cast<std::size_t>(opts.max_skip_fraction * static_cast<double>(n));
  while (ds.size() < n) {
    const std::size_t want = n - ds.size();
    const std::vector<Vector> batch = chain.take(want);
    std::vector<std::optional<Vector>> labels(want);
    parallel_for(want, opts.threads, [&](std::size_t i) {
      try {
        labels[i] = make_target(solve_mpc(spec, batch[i]), opts.mode);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::InfeasibleState && e.code() != ErrorCode::NoConvergence) throw;
      }
    });
    for (std::size_t i = 0; i < want; ++i) {
      if (labels[i]) {
        ds.states.push_back(batch[i]);
        ds.targets.push_back(*labels[i]);
      } else {
        ++skipped;
      }
    }
    if (skipped > allowed_skips) {
      throw Error(ErrorCode::GenerationStalled, std::to_string(skipped) + " of the sampled states could not be labelled");
    }
  }
  ds.metadata.skipped = skipped;
  return ds;
}

// ---------------------------------------------------------------------------
// File format: "# key: value" header lines, then one pair per line (state
// coordinates then target coordinates, space separated, 17 significant digits).

inline void write_dataset(std::ostream& os, const Dataset& ds) {
  os << "# format: mpcnn-dataset 1\n";
  os << "# spec_hash: " << ds.metadata.spec_hash << "\n";
  os << "# target_mode: " << to_string(ds.target_mode) << "\n";
  os << "# state_dim: " << ds.state_dim() << "\n";
  os << "# target_dim: " << ds.target_dim() << "\n";
  os << "# count: " << ds.size() << "\n";
  os << "# sampler_seed: " << ds.metadata.sampler_seed << "\n";
  os << "# burn_in: " << ds.metadata.burn_in << "\n";
  os << "# thinning: " << ds.metadata.thinning << "\n";
  os << "# solver_eps_abs: " << format_double(ds.metadata.solver_eps_abs) << "\n";
  os << "# solver_eps_rel: " << format_double(ds.metadata.solver_eps_rel) << "\n";
  os << "# skipped: " << ds.metadata.skipped << "\n";
  os << "# generated: " << ds.metadata.generated << "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os << format_vector(ds.states[i]) << ' ' << format_vector(ds.targets[i]) << '\n';
  }
}

inline Dataset read_dataset(std::istream& is) {
  Dataset ds;
  std::string line;
  int line_no = 0;
  std::map<std::string, std::string> header;
  auto fail = [&](const std::string& msg) { throw Error(ErrorCode::FormatError, "dataset line " + std::to_string(line_no) + ": " + msg); };
  long long state_dim = -1, target_dim = -1, count = -1;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (line[0] == '#') {
      const auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      header[trim(line.substr(1, colon - 1))] = trim(line.substr(colon + 1));
      continue;
    }
    if (state_dim < 0) {
      try {
        state_dim = std::stoll(header.at("state_dim"));
        target_dim = std::stoll(header.at("target_dim"));
        count = std::stoll(header.at("count"));
      } catch (const std::exception&) {
        fail("missing or invalid state_dim/target_dim/count header");
      }
    }
    Vector v;
    try {
      v = parse_vector(line);
    } catch (const Error& e) {
      fail(e.what());
    }
    if (v.size() != state_dim + target_dim) fail("expected " + std::to_string(state_dim + target_dim) + " values, found " + std::to_string(v.size()));
    ds.states.push_back(v.head(state_dim));
    ds.targets.push_back(v.tail(target_dim));
  }
  if (header.count("format") == 0 || header["format"].rfind("mpcnn-dataset", 0) != 0) fail("missing format header");
  if (count < 0) {
    try {
      count = std::stoll(header.at("count"));
    } catch (const std::exception&) {
      fail("missing count header");
    }
  }
  if (static_cast<long long>(ds.size()) != count) {
    fail("truncated: header announces " + std::to_string(count) + " pairs, found " + std::to_string(ds.size()));
  }
  try {
    ds.target_mode = parse_target_mode(header.at("target_mode"));
    ds.metadata.spec_hash = header.at("spec_hash");
    ds.metadata.sampler_seed = std::stoull(header.at("sampler_seed"));
    ds.metadata.burn_in = std::stoi(header.at("burn_in"));
    ds.metadata.thinning = std::stoi(header.at("thinning"));
    ds.metadata.solver_eps_abs = std::stod(header.at("solver_eps_abs"));
    ds.metadata.solver_eps_rel = std::stod(header.at("solver_eps_rel"));
    ds.metadata.skipped = std::stoull(header.count("skipped") ? header.at("skipped") : "0");
    ds.metadata.generated = header.count("generated") ? header.at("generated") : "";
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    fail("missing or invalid metadata header");
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  write_dataset(out, ds);
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return read_dataset(in);
}

/// Throws MetadataMismatch unless `ds` was generated for `spec` with its
/// solver tolerances.
inline void require_matching_metadata(const Dataset& ds, const MpcSpec& spec) {
  const std::string expected = hex64(spec_hash(spec));
  if (ds.metadata.spec_hash != expected) {
    throw Error(ErrorCode::MetadataMismatch, "dataset spec hash " + ds.metadata.spec_hash + " != " + expected);
  }
  if (ds.metadata.solver_eps_abs != spec.solver.eps_abs || ds.metadata.solver_eps_rel != spec.solver.eps_rel) {
    throw Error(ErrorCode::MetadataMismatch, "dataset solver tolerances differ from the experiment's");
  }
}

}  // namespace mpcnn
