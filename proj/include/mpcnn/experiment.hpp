#pragma once

// Experiment runner behind the command-line tool. An ExperimentConfig holds
// every setting a command reads; it is assembled from a per-command preset,
// an optional key-value config file and command-line flags, in that order.
//
// Config file schema (all keys optional):
//
//   [experiment]  spec, seed, out, target_mode, archs, timestamp
//   [sampler]     burn_in, thinning
//   [data]        n, test_size
//   [train]       epochs, learning_rate, batch_size, beta1, beta2, adam_eps,
//                 project, widths ("auto" or a comma list)
//   [eval]        sizes, seeds, trajectories, cost_train_size
//   [acquire]     k, epsilon (0 selects the default step length)
//   [inputs]      cinf, data, network (comma list)
//
// Sub-seeds are derived from the master seed as seed + stable_hash(stage).
// Every run writes manifest.txt, whose body is the resolved config in this
// schema, so `--config manifest.txt` replays the run.

#include <mpcnn/acquisition.hpp>
#include <mpcnn/config.hpp>
#include <mpcnn/dataset.hpp>
#include <mpcnn/eval.hpp>
#include <mpcnn/mpc.hpp>
#include <mpcnn/network.hpp>
#include <mpcnn/polytope.hpp>
#include <mpcnn/sampler.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace mpcnn {

inline constexpr const char* kVersion = "1.0.0";

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"invariant-set", "sample",   "gen-data",     "train",       "eval-nmse",
                                              "eval-cost",     "acquire", "reproduce-2d", "reproduce-4d"};
  return names;
}

/// Built-in name or path to a spec file.
inline MpcSpec load_spec(const std::string& source) {
  if (source == "double-integrator-2d" || source == "system-4d") return builtin_spec(source);
  if (!std::filesystem::exists(source)) {
    throw Error(ErrorCode::InvalidArgument, "spec '" + source + "' is neither a built-in name nor an existing file");
  }
  return spec_from_config(KeyValueConfig::load(source));
}

/// SOURCE_DATE_EPOCH when set, else the current time, as UTC ISO-8601.
inline std::string default_timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH")) {
    try {
      t = static_cast<std::time_t>(std::stoll(sde));
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "SOURCE_DATE_EPOCH is not an integer");
    }
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct ExperimentConfig {
  std::string command;
  std::string spec = "double-integrator-2d";
  std::uint64_t seed = 0;
  std::string out = "out";
  unsigned threads = 0;
  TargetMode target_mode = TargetMode::FirstInput;
  std::vector<Architecture> archs{Architecture::BBNN, Architecture::ProjectionNN};
  std::string timestamp;

  HitAndRunConfig sampler;
  std::size_t n = 1000;
  std::size_t test_size = 500;

  TrainConfig train;
  std::vector<int> widths;

  std::vector<std::size_t> sizes{100, 200, 500, 1000};
  std::vector<std::uint64_t> seeds;
  std::size_t trajectories = 100;
  std::size_t cost_train_size = 1000;

  std::size_t k = 10;
  double epsilon = 0.0;

  std::string cinf_path;
  std::string data_path;
  std::vector<std::string> network_paths;

  /// Defaults of one command; the two reproduce commands carry the benchmark
  /// setups (sizes, test set, trajectory counts, horizons via the spec).
  static ExperimentConfig preset(const std::string& command) {
    if (std::find(command_names().begin(), command_names().end(), command) == command_names().end()) {
      throw Error(ErrorCode::InvalidArgument, "unknown command '" + command + "'");
    }
    ExperimentConfig c;
    c.command = command;
    if (command == "reproduce-2d") {
      c.spec = "double-integrator-2d";
      c.sizes = {100, 200, 500, 1000};
      c.test_size = 500;
      c.trajectories = 100;
      c.cost_train_size = 1000;
      c.train.epochs = 300;
    } else if (command == "reproduce-4d") {
      c.spec = "system-4d";
      c.sizes = {500, 1000, 2000, 4000, 7000};
      c.test_size = 500;
      c.trajectories = 500;
      c.cost_train_size = 7000;
      c.train.epochs = 200;
    }
    return c;
  }

  void apply(const KeyValueConfig& kv) {
    static const std::vector<std::string> known{
        "experiment.spec",     "experiment.seed",      "experiment.out",        "experiment.target_mode",
        "experiment.archs",    "experiment.timestamp", "sampler.burn_in",       "sampler.thinning",
        "data.n",              "data.test_size",       "train.epochs",          "train.learning_rate",
        "train.batch_size",    "train.beta1",          "train.beta2",           "train.adam_eps",
        "train.project",       "train.widths",         "eval.sizes",            "eval.seeds",
        "eval.trajectories",   "eval.cost_train_size", "acquire.k",             "acquire.epsilon",
        "inputs.cinf",         "inputs.data",          "inputs.network"};
    for (const auto& [key, value] : kv.values()) {
      if (std::find(known.begin(), known.end(), key) == known.end()) {
        throw Error(ErrorCode::FormatError, "unknown config key '" + key + "'");
      }
    }
    auto count = [&](const std::string& key, std::size_t fallback) {
      const long long v = kv.get_int(key, static_cast<long long>(fallback));
      if (v < 0) throw Error(ErrorCode::InvalidArgument, "config key '" + key + "' must be >= 0");
      return static_cast<std::size_t>(v);
    };
    spec = kv.get("experiment.spec").value_or(spec);
    if (auto v = kv.get("experiment.seed")) seed = parse_seed(*v);
    out = kv.get("experiment.out").value_or(out);
    if (auto v = kv.get("experiment.target_mode")) target_mode = parse_target_mode(*v);
    if (kv.has("experiment.archs")) {
      archs.clear();
      for (const auto& a : kv.get_list("experiment.archs", {})) archs.push_back(parse_architecture(a));
    }
    timestamp = kv.get("experiment.timestamp").value_or(timestamp);
    sampler.burn_in = static_cast<int>(kv.get_int("sampler.burn_in", sampler.burn_in));
    sampler.thinning = static_cast<int>(kv.get_int("sampler.thinning", sampler.thinning));
    n = count("data.n", n);
    test_size = count("data.test_size", test_size);
    train.epochs = static_cast<int>(kv.get_int("train.epochs", train.epochs));
    train.learning_rate = kv.get_double("train.learning_rate", train.learning_rate);
    train.batch_size = static_cast<int>(kv.get_int("train.batch_size", train.batch_size));
    train.beta1 = kv.get_double("train.beta1", train.beta1);
    train.beta2 = kv.get_double("train.beta2", train.beta2);
    train.adam_eps = kv.get_double("train.adam_eps", train.adam_eps);
    if (auto v = kv.get("train.project")) train.project_during_training = parse_bool(*v, "train.project");
    if (auto v = kv.get("train.widths")) {
      widths.clear();
      if (*v != "auto") {
        for (long long w : kv.get_int_list("train.widths", {})) widths.push_back(static_cast<int>(w));
      }
    }
    if (kv.has("eval.sizes")) {
      sizes.clear();
      for (long long s : kv.get_int_list("eval.sizes", {})) sizes.push_back(static_cast<std::size_t>(s));
    }
    if (kv.has("eval.seeds")) {
      seeds.clear();
      for (const auto& s : kv.get_list("eval.seeds", {})) seeds.push_back(parse_seed(s));
    }
    trajectories = count("eval.trajectories", trajectories);
    cost_train_size = count("eval.cost_train_size", cost_train_size);
    k = count("acquire.k", k);
    epsilon = kv.get_double("acquire.epsilon", epsilon);
    cinf_path = kv.get("inputs.cinf").value_or(cinf_path);
    data_path = kv.get("inputs.data").value_or(data_path);
    if (kv.has("inputs.network")) network_paths = kv.get_list("inputs.network", {});
  }

  /// Fills derived defaults (seed list, timestamp) and checks the result.
  void resolve() {
    if (seeds.empty()) seeds = {seed, seed + 1, seed + 2};
    if (timestamp.empty()) timestamp = default_timestamp();
    validate();
  }

  void validate() const {
    sampler.validate();
    train.validate();
    if (archs.empty()) throw Error(ErrorCode::InvalidArgument, "at least one architecture is required");
    if (sizes.empty() || !std::is_sorted(sizes.begin(), sizes.end()) || sizes.front() == 0) {
      throw Error(ErrorCode::InvalidArgument, "eval.sizes must be a non-empty ascending list of positive sizes");
    }
    if (n == 0 || test_size == 0 || trajectories == 0 || cost_train_size == 0) {
      throw Error(ErrorCode::InvalidArgument, "sample counts must be positive");
    }
    if (epsilon < 0.0) throw Error(ErrorCode::InvalidArgument, "acquire.epsilon must be >= 0");
    for (int w : widths) {
      if (w < 1) throw Error(ErrorCode::InvalidArgument, "train.widths entries must be positive");
    }
    auto must_exist = [](const std::string& path, const char* what) {
      if (!path.empty() && !std::filesystem::exists(path)) {
        throw Error(ErrorCode::IoError, std::string(what) + " file '" + path + "' does not exist");
      }
    };
    must_exist(cinf_path, "cinf");
    must_exist(data_path, "data");
    for (const auto& p : network_paths) must_exist(p, "network");
  }

  /// Canonical text in the config-file schema. Thread count is omitted: it
  /// never changes an output.
  std::string to_text() const {
    std::ostringstream os;
    auto join = [](const auto& values, auto&& fmt) {
      std::string s;
      for (const auto& v : values) s += (s.empty() ? "" : ", ") + fmt(v);
      return s;
    };
    auto num = [](auto v) { return std::to_string(v); };
    os << "[experiment]\n";
    os << "spec = " << spec << "\n";
    os << "seed = " << seed << "\n";
    os << "out = " << out << "\n";
    os << "target_mode = " << to_string(target_mode) << "\n";
    os << "archs = " << join(archs, [](Architecture a) { return std::string(to_string(a)); }) << "\n";
    os << "timestamp = " << timestamp << "\n";
    os << "[sampler]\n";
    os << "burn_in = " << sampler.burn_in << "\n";
    os << "thinning = " << sampler.thinning << "\n";
    os << "[data]\n";
    os << "n = " << n << "\n";
    os << "test_size = " << test_size << "\n";
    os << "[train]\n";
    os << "epochs = " << train.epochs << "\n";
    os << "learning_rate = " << format_double(train.learning_rate) << "\n";
    os << "batch_size = " << train.batch_size << "\n";
    os << "beta1 = " << format_double(train.beta1) << "\n";
    os << "beta2 = " << format_double(train.beta2) << "\n";
    os << "adam_eps = " << format_double(train.adam_eps) << "\n";
    os << "project = " << (train.project_during_training ? "true" : "false") << "\n";
    os << "widths = " << (widths.empty() ? std::string("auto") : join(widths, num)) << "\n";
    os << "[eval]\n";
    os << "sizes = " << join(sizes, num) << "\n";
    os << "seeds = " << join(seeds, num) << "\n";
    os << "trajectories = " << trajectories << "\n";
    os << "cost_train_size = " << cost_train_size << "\n";
    os << "[acquire]\n";
    os << "k = " << k << "\n";
    os << "epsilon = " << format_double(epsilon) << "\n";
    os << "[inputs]\n";
    if (!cinf_path.empty()) os << "cinf = " << cinf_path << "\n";
    if (!data_path.empty()) os << "data = " << data_path << "\n";
    if (!network_paths.empty()) os << "network = " << join(network_paths, [](const std::string& s) { return s; }) << "\n";
    return os.str();
  }

  std::uint64_t hash() const { return stable_hash(to_text()); }

  unsigned thread_count() const { return threads ? threads : std::max(1u, std::thread::hardware_concurrency()); }

  static std::uint64_t parse_seed(const std::string& text) {
    try {
      std::size_t used = 0;
      const std::uint64_t v = std::stoull(text, &used);
      if (used != text.size() || text.front() == '-') throw std::invalid_argument(text);
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "seed must be a non-negative integer, got '" + text + "'");
    }
  }

  static bool parse_bool(const std::string& text, const std::string& key) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw Error(ErrorCode::FormatError, "config key '" + key + "' must be true or false");
  }
};

// ---------------------------------------------------------------------------
// Output tracking

/// Files written by one run. On failure `rollback` deletes them (and the
/// output directory when this run created it and it is left empty).
class OutputSet {
 public:
  explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    if (!std::filesystem::exists(dir_)) {
      std::filesystem::create_directories(dir_, ec);
      if (ec) throw Error(ErrorCode::IoError, "cannot create output directory " + dir_.string() + ": " + ec.message());
      created_dir_ = true;
    } else if (!std::filesystem::is_directory(dir_)) {
      throw Error(ErrorCode::IoError, dir_.string() + " exists and is not a directory");
    }
  }

  const std::filesystem::path& dir() const { return dir_; }
  const std::vector<std::string>& files() const { return files_; }

  void write(const std::string& name, const std::function<void(std::ostream&)>& body) {
    const auto path = dir_ / name;
    if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    body(os);
    os.flush();
    if (!os) throw Error(ErrorCode::IoError, "write failed for " + path.string());
  }

  void rollback() noexcept {
    std::error_code ec;
    for (const auto& f : files_) std::filesystem::remove(dir_ / f, ec);
    files_.clear();
    if (created_dir_ && std::filesystem::is_empty(dir_, ec)) std::filesystem::remove(dir_, ec);
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> files_;
  bool created_dir_ = false;
};

inline std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  return hex64(stable_hash(bytes)) + " " + std::to_string(bytes.size());
}

// ---------------------------------------------------------------------------
// Run context and stages

struct RunContext {
  ExperimentConfig cfg;
  MpcSpec spec;
  OutputSet outputs;
  std::ostream& log;
  std::string invocation;
  /// Stage name -> derived seed, reported in the manifest.
  std::map<std::string, std::uint64_t> stage_seeds;

  RunContext(ExperimentConfig c, std::ostream& log_stream, std::string argv_line)
      : cfg(std::move(c)), spec(load_spec(cfg.spec)), outputs(cfg.out), log(log_stream), invocation(std::move(argv_line)) {}

  std::uint64_t seed_for(const std::string& stage) {
    const std::uint64_t s = derive_seed(cfg.seed, stage);
    stage_seeds[stage] = s;
    return s;
  }

  HitAndRunConfig sampler_for(const std::string& stage) {
    HitAndRunConfig hr = cfg.sampler;
    hr.seed = seed_for(stage);
    return hr;
  }
};

namespace detail {

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

inline Polytope obtain_cinf(RunContext& ctx) {
  if (!ctx.cfg.cinf_path.empty()) {
    Polytope p = load_polytope_file(ctx.cfg.cinf_path);
    require_dims(p.dim() == ctx.spec.n(), "cinf file dimension differs from the spec state dimension");
    return p;
  }
  const InvariantSetResult res = max_control_invariant(ctx.spec.sys, ctx.spec.x_set, ctx.spec.u_set);
  if (!res.certified) {
    throw Error(ErrorCode::NoConvergence, "invariant-set iteration stopped after " + std::to_string(res.iterations) + " steps");
  }
  ctx.log << "invariant set: " << res.set.num_rows() << " rows after " << res.iterations << " iterations\n";
  ctx.outputs.write("cinf.txt", [&](std::ostream& os) { write_polytope(os, res.set); });
  return res.set;
}

inline Dataset load_bound_dataset(const RunContext& ctx) {
  if (ctx.cfg.data_path.empty()) throw Error(ErrorCode::InvalidArgument, ctx.cfg.command + " needs a dataset (--data)");
  Dataset ds = load_dataset(ctx.cfg.data_path);
  require_matching_metadata(ds, ctx.spec);
  require_dims(ds.state_dim() == ctx.spec.n(), "dataset state dimension differs from the spec");
  return ds;
}

inline std::vector<Checkpoint> load_networks(const RunContext& ctx, std::size_t min_count) {
  if (ctx.cfg.network_paths.size() < min_count) {
    throw Error(ErrorCode::InvalidArgument, ctx.cfg.command + " needs a network checkpoint (--network)");
  }
  std::vector<Checkpoint> out;
  for (const auto& p : ctx.cfg.network_paths) {
    Checkpoint ck = load_checkpoint(p);
    require_dims(ck.net.input_dim() == ctx.spec.n(), "network input dimension differs from the spec");
    out.push_back(std::move(ck));
  }
  return out;
}

/// Seeds the learning curve derives from one of its experiment seeds.
inline void record_curve_seeds(RunContext& ctx, std::uint64_t s) {
  const std::string tag = "/" + std::to_string(s);
  ctx.stage_seeds["nmse-train-data" + tag] = derive_seed(s, "nmse-train-data");
  for (Architecture a : ctx.cfg.archs) {
    ctx.stage_seeds[std::string("nmse-train-") + to_string(a) + tag] = derive_seed(s, std::string("nmse-train-") + to_string(a));
    ctx.stage_seeds[std::string("nmse-init-") + to_string(a) + tag] = derive_seed(s, std::string("nmse-init-") + to_string(a));
  }
}

inline std::vector<int> widths_for(const RunContext& ctx, Eigen::Index target_dim) {
  if (ctx.cfg.widths.empty()) return default_widths(ctx.spec.n(), target_dim);
  std::vector<int> w{static_cast<int>(ctx.spec.n())};
  w.insert(w.end(), ctx.cfg.widths.begin(), ctx.cfg.widths.end());
  w.push_back(static_cast<int>(target_dim));
  return w;
}

inline Checkpoint train_network(RunContext& ctx, const Dataset& ds, Architecture arch, const ProjectionSpec& ps,
                                const std::string& prefix) {
  TrainConfig tc = ctx.cfg.train;
  tc.seed = ctx.seed_for(prefix + "train-" + to_string(arch));
  const Mlp init = Mlp::random(widths_for(ctx, ds.target_dim()), ctx.seed_for(prefix + "init-" + to_string(arch)));
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult tr = train(init, ds, tc, arch, &ps);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ctx.log << "trained " << to_string(arch) << " on " << ds.size() << " samples: mse " << tr.final_mse << " (" << secs << " s)\n";
  return {tr.net, arch, tc.seed, ds.target_mode};
}

inline void write_nmse_mean(std::ostream& os, const std::vector<NmseRow>& rows, const ExperimentConfig& cfg) {
  os << "size";
  for (Architecture a : cfg.archs) os << ' ' << to_string(a);
  os << "\n";
  for (std::size_t s : cfg.sizes) {
    os << s;
    for (Architecture a : cfg.archs) os << ' ' << format_double(mean_nmse(rows, s, a));
    os << "\n";
  }
}

inline void write_cost_scatter(std::ostream& os, const CostTable& table) {
  os << "traj";
  for (const auto& s : table.summary) os << ' ' << s.controller;
  os << "\n";
  for (std::size_t t = 0; t < table.initial_states.size(); ++t) {
    os << t;
    for (const auto& s : table.summary) os << ' ' << format_double(table.j_n(t, s.controller));
    os << "\n";
  }
}

inline void write_plot_script(std::ostream& os, bool nmse, std::size_t n_controllers) {
  os << "# gnuplot script; run from this directory: gnuplot plots.gp\n";
  os << "set terminal pngcairo size 900,600\n";
  os << "set key autotitle columnheader\n";
  os << "set grid\n";
  if (nmse) {
    os << "set output 'nmse_curve.png'\n";
    os << "set logscale x\n";
    os << "set xlabel 'training samples'\n";
    os << "set ylabel 'test NMSE [dB]'\n";
    os << "plot for [i=2:*] 'nmse_mean.dat' using 1:i with linespoints\n";
    os << "unset logscale x\n";
  }
  if (n_controllers > 0) {
    os << "set output 'cost_comparison.png'\n";
    os << "set xlabel 'trajectory'\n";
    os << "set ylabel 'J_n'\n";
    os << "plot for [i=2:" << n_controllers + 1 << "] 'cost_scatter.dat' using 1:i with points pointtype 7 pointsize 0.6\n";
  }
}

inline std::vector<Controller> baseline_controllers(const MpcSpec& spec) {
  return {Controller::mpc(spec, Rollout::OpenLoop), Controller::mpc(spec, Rollout::Receding), Controller::lqr(spec)};
}

inline Controller network_controller(const Checkpoint& ck, const ProjectionSpec& ps) {
  return ck.arch == Architecture::BBNN ? Controller::bbnn(ck.net) : Controller::projection_nn(ck.net, ps);
}

inline void log_cost_summary(RunContext& ctx, const CostTable& table) {
  for (const auto& s : table.summary) {
    ctx.log << "  " << s.controller << ": mean J_n " << s.mean << ", violations " << s.total_violations << " in "
            << s.trajectories_with_violations << " trajectories\n";
  }
}

inline CostTable write_cost_outputs(RunContext& ctx, const Polytope& cinf, const std::vector<Controller>& controllers) {
  const CostTable table = cost_comparison(ctx.spec, cinf, controllers, ctx.cfg.trajectories,
                                          ctx.sampler_for("cost-initial-states"), ctx.cfg.thread_count());
  ctx.outputs.write("cost_comparison.csv", [&](std::ostream& os) { write_cost_csv(os, table); });
  ctx.outputs.write("cost_summary.csv", [&](std::ostream& os) { write_cost_summary_csv(os, table); });
  ctx.outputs.write("cost_scatter.dat", [&](std::ostream& os) { write_cost_scatter(os, table); });
  log_cost_summary(ctx, table);
  return table;
}

}  // namespace detail

inline void run_invariant_set(RunContext& ctx) {
  ctx.cfg.cinf_path.clear();
  detail::obtain_cinf(ctx);
}

inline void run_sample(RunContext& ctx) {
  const Polytope cinf = detail::obtain_cinf(ctx);
  const auto points = hit_and_run(cinf, ctx.cfg.n, ctx.sampler_for("sample"));
  ctx.outputs.write("samples.txt", [&](std::ostream& os) {
    os << "# format: mpcnn-samples 1\n# dim: " << cinf.dim() << "\n# count: " << points.size() << "\n";
    for (const auto& p : points) os << format_vector(p) << "\n";
  });
  ctx.log << "wrote " << points.size() << " samples\n";
}

inline void run_gen_data(RunContext& ctx) {
  const Polytope cinf = detail::obtain_cinf(ctx);
  GenerateOptions g;
  g.mode = ctx.cfg.target_mode;
  g.threads = ctx.cfg.thread_count();
  g.timestamp = ctx.cfg.timestamp;
  const Dataset ds = generate(ctx.spec, cinf, ctx.cfg.n, ctx.sampler_for("gen-data"), g);
  ctx.outputs.write("dataset.txt", [&](std::ostream& os) { write_dataset(os, ds); });
  ctx.log << "wrote " << ds.size() << " pairs (" << ds.metadata.skipped << " states skipped)\n";
}

inline void run_train(RunContext& ctx) {
  const Dataset ds = detail::load_bound_dataset(ctx);
  const Polytope cinf = detail::obtain_cinf(ctx);
  const ProjectionSpec ps = ProjectionSpec::build(ctx.spec.sys, ctx.spec.u_set, cinf);
  for (Architecture arch : ctx.cfg.archs) {
    TrainConfig tc = ctx.cfg.train;
    tc.seed = ctx.seed_for(std::string("train-") + to_string(arch));
    const Mlp init = Mlp::random(detail::widths_for(ctx, ds.target_dim()), ctx.seed_for(std::string("init-") + to_string(arch)));
    const TrainResult tr = train(init, ds, tc, arch, &ps);
    const std::string stem = detail::lower(to_string(arch));
    ctx.outputs.write(stem + ".net", [&](std::ostream& os) { write_checkpoint(os, {tr.net, arch, tc.seed, ds.target_mode}); });
    ctx.outputs.write(stem + "_loss.csv", [&](std::ostream& os) {
      os << "epoch,loss\n";
      for (std::size_t e = 0; e < tr.loss_history.size(); ++e) os << e + 1 << ',' << format_double(tr.loss_history[e]) << '\n';
    });
    ctx.log << "trained " << to_string(arch) << ": final mse " << tr.final_mse << "\n";
  }
}

/// With --network: scores each checkpoint on the --data test set. Without:
/// runs the learning curve over eval.sizes and eval.seeds.
inline void run_eval_nmse(RunContext& ctx) {
  const Polytope cinf = detail::obtain_cinf(ctx);
  const ProjectionSpec ps = ProjectionSpec::build(ctx.spec.sys, ctx.spec.u_set, cinf);
  Dataset test_set;
  if (!ctx.cfg.data_path.empty()) {
    test_set = detail::load_bound_dataset(ctx);
  } else {
    GenerateOptions g;
    g.mode = ctx.cfg.target_mode;
    g.threads = ctx.cfg.thread_count();
    g.timestamp = ctx.cfg.timestamp;
    test_set = generate(ctx.spec, cinf, ctx.cfg.test_size, ctx.sampler_for("test-data"), g);
    ctx.outputs.write("test_data.txt", [&](std::ostream& os) { write_dataset(os, test_set); });
  }
  if (!ctx.cfg.network_paths.empty()) {
    const auto nets = detail::load_networks(ctx, 1);
    ctx.outputs.write("nmse.csv", [&](std::ostream& os) {
      os << "network,arch,nmse_db\n";
      for (std::size_t i = 0; i < nets.size(); ++i) {
        require_dims(nets[i].net.output_dim() == test_set.target_dim(), "network output dimension differs from the test targets");
        const double db = nmse(predict(nets[i].arch, nets[i].net, &ps, test_set, ctx.cfg.thread_count()), test_set.targets);
        os << ctx.cfg.network_paths[i] << ',' << to_string(nets[i].arch) << ',' << format_double(db) << '\n';
        ctx.log << ctx.cfg.network_paths[i] << ": " << db << " dB\n";
      }
    });
    return;
  }
  NmseCurveConfig nc;
  nc.sizes = ctx.cfg.sizes;
  nc.archs = ctx.cfg.archs;
  nc.seeds = ctx.cfg.seeds;
  nc.sampler = ctx.cfg.sampler;
  nc.train = ctx.cfg.train;
  nc.widths = ctx.cfg.widths.empty() ? std::vector<int>{} : detail::widths_for(ctx, test_set.target_dim());
  nc.threads = ctx.cfg.thread_count();
  std::vector<Dataset> pools;
  for (std::uint64_t s : nc.seeds) {
    detail::record_curve_seeds(ctx, s);
    pools.push_back(nmse_training_pool(ctx.spec, cinf, s, nc.sizes.back(), test_set.target_mode, nc.sampler, nc.threads,
                                       ctx.cfg.timestamp));
  }
  const auto rows = nmse_curve(ctx.spec, ps, test_set, nc, pools);
  ctx.outputs.write("nmse_curve.csv", [&](std::ostream& os) { write_nmse_csv(os, rows); });
  ctx.outputs.write("nmse_mean.dat", [&](std::ostream& os) { detail::write_nmse_mean(os, rows, ctx.cfg); });
  ctx.outputs.write("plots.gp", [&](std::ostream& os) { detail::write_plot_script(os, true, 0); });
}

inline void run_eval_cost(RunContext& ctx) {
  const Polytope cinf = detail::obtain_cinf(ctx);
  const ProjectionSpec ps = ProjectionSpec::build(ctx.spec.sys, ctx.spec.u_set, cinf);
  std::vector<Controller> controllers = detail::baseline_controllers(ctx.spec);
  std::map<std::string, int> seen;
  for (const auto& ck : detail::load_networks(ctx, 0)) {
    Controller c = detail::network_controller(ck, ps);
    if (const int k = ++seen[c.name]; k > 1) c.name += "_" + std::to_string(k);
    controllers.push_back(std::move(c));
  }
  detail::write_cost_outputs(ctx, cinf, controllers);
  ctx.outputs.write("plots.gp", [&](std::ostream& os) { detail::write_plot_script(os, false, controllers.size()); });
}

/// Writes the proposed states, labelled by the MPC solver, as a dataset
/// fragment, and the anchor dataset augmented with them.
inline void run_acquire(RunContext& ctx) {
  const Dataset anchors = detail::load_bound_dataset(ctx);
  const auto nets = detail::load_networks(ctx, 1);
  if (nets.size() != 1) throw Error(ErrorCode::InvalidArgument, "acquire takes exactly one network");
  const Checkpoint& ck = nets.front();
  if (ck.target_mode != TargetMode::FirstInput) throw Error(ErrorCode::InvalidArgument, "acquire needs a network predicting u0");
  const Polytope cinf = detail::obtain_cinf(ctx);
  const ProjectionSpec ps = ProjectionSpec::build(ctx.spec.sys, ctx.spec.u_set, cinf);
  const double eps = ctx.cfg.epsilon > 0.0 ? ctx.cfg.epsilon : default_epsilon(cinf);
  const AcquisitionResult res =
      acquisition_round(ck.arch, ck.net, &ps, ctx.spec, cinf, anchors.states, eps, ctx.cfg.k, ctx.cfg.thread_count());
  Dataset fragment;
  fragment.target_mode = anchors.target_mode;
  fragment.metadata = anchors.metadata;
  fragment.metadata.generated = ctx.cfg.timestamp;
  fragment.metadata.skipped = res.skipped;
  fragment.states = res.points;
  fragment.targets.resize(res.points.size());
  parallel_for(res.points.size(), ctx.cfg.thread_count(), [&](std::size_t i) {
    fragment.targets[i] = make_target(solve_mpc(ctx.spec, res.points[i]), anchors.target_mode);
  });
  Dataset augmented = anchors;
  augmented.metadata.generated = ctx.cfg.timestamp;
  augmented.append(fragment);
  ctx.outputs.write("acquired.txt", [&](std::ostream& os) { write_dataset(os, fragment); });
  ctx.outputs.write("augmented.txt", [&](std::ostream& os) { write_dataset(os, augmented); });
  ctx.log << "acquired " << res.points.size() << " states (epsilon " << eps << ", " << res.skipped << " anchors skipped)\n";
}

/// Whole benchmark pipeline: invariant set, test set, learning curves, cost
/// networks and the closed-loop comparison.
inline void run_reproduce(RunContext& ctx) {
  using clock = std::chrono::steady_clock;
  auto stage_start = clock::now();
  auto lap = [&](const char* what) {
    const auto now = clock::now();
    ctx.log << "[" << what << "] " << std::chrono::duration<double>(now - stage_start).count() << " s\n";
    stage_start = now;
  };
  const unsigned threads = ctx.cfg.thread_count();
  ctx.cfg.cinf_path.clear();
  const Polytope cinf = detail::obtain_cinf(ctx);
  const ProjectionSpec ps = ProjectionSpec::build(ctx.spec.sys, ctx.spec.u_set, cinf);
  lap("invariant set");

  GenerateOptions g;
  g.mode = ctx.cfg.target_mode;
  g.threads = threads;
  g.timestamp = ctx.cfg.timestamp;
  const Dataset test_set = generate(ctx.spec, cinf, ctx.cfg.test_size, ctx.sampler_for("test-data"), g);
  ctx.outputs.write("test_data.txt", [&](std::ostream& os) { write_dataset(os, test_set); });

  const std::size_t pool_size = std::max(ctx.cfg.sizes.back(), ctx.cfg.cost_train_size);
  std::vector<Dataset> pools;
  for (std::uint64_t s : ctx.cfg.seeds) {
    detail::record_curve_seeds(ctx, s);
    pools.push_back(nmse_training_pool(ctx.spec, cinf, s, pool_size, g.mode, ctx.cfg.sampler, threads, g.timestamp));
    const Dataset& pool = pools.back();
    ctx.outputs.write("train_data_seed" + std::to_string(s) + ".txt", [&](std::ostream& os) { write_dataset(os, pool); });
  }
  lap("datasets");

  NmseCurveConfig nc;
  nc.sizes = ctx.cfg.sizes;
  nc.archs = ctx.cfg.archs;
  nc.seeds = ctx.cfg.seeds;
  nc.sampler = ctx.cfg.sampler;
  nc.train = ctx.cfg.train;
  nc.widths = ctx.cfg.widths.empty() ? std::vector<int>{} : detail::widths_for(ctx, test_set.target_dim());
  nc.threads = threads;
  const auto rows = nmse_curve(ctx.spec, ps, test_set, nc, pools);
  ctx.outputs.write("nmse_curve.csv", [&](std::ostream& os) { write_nmse_csv(os, rows); });
  ctx.outputs.write("nmse_mean.dat", [&](std::ostream& os) { detail::write_nmse_mean(os, rows, ctx.cfg); });
  for (Architecture a : ctx.cfg.archs) {
    ctx.log << "  " << to_string(a) << " NMSE:";
    for (std::size_t s : ctx.cfg.sizes) ctx.log << " " << s << "->" << mean_nmse(rows, s, a) << "dB";
    ctx.log << "\n";
  }
  lap("learning curves");

  const Dataset cost_train = pools.front().head(ctx.cfg.cost_train_size);
  std::vector<Controller> controllers = detail::baseline_controllers(ctx.spec);
  for (Architecture a : ctx.cfg.archs) {
    const Checkpoint ck = detail::train_network(ctx, cost_train, a, ps, "cost-");
    ctx.outputs.write(detail::lower(to_string(a)) + ".net", [&](std::ostream& os) { write_checkpoint(os, ck); });
    controllers.push_back(detail::network_controller(ck, ps));
  }
  lap("cost networks");

  detail::write_cost_outputs(ctx, cinf, controllers);
  ctx.outputs.write("plots.gp", [&](std::ostream& os) { detail::write_plot_script(os, true, controllers.size()); });
  lap("cost comparison");
}

inline void write_manifest(RunContext& ctx) {
  std::vector<std::pair<std::string, std::string>> digests;
  for (const auto& f : ctx.outputs.files()) digests.emplace_back(f, file_digest(ctx.outputs.dir() / f));
  ctx.outputs.write("manifest.txt", [&](std::ostream& os) {
    os << "# mpcnn run manifest\n";
    os << "# command: " << ctx.cfg.command << "\n";
    os << "# invocation: " << ctx.invocation << "\n";
    os << "# version: mpcnn " << kVersion << ", Eigen " << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.'
       << EIGEN_MINOR_VERSION << ", compiler " << __VERSION__ << "\n";
    os << "# spec_hash: " << hex64(spec_hash(ctx.spec)) << "\n";
    os << "# config_hash: " << hex64(ctx.cfg.hash()) << "\n";
    os << "# master_seed: " << ctx.cfg.seed << "\n";
    for (const auto& [stage, s] : ctx.stage_seeds) os << "# seed " << stage << ": " << s << "\n";
    os << "# threads: " << ctx.cfg.thread_count() << " (outputs do not depend on it)\n";
    os << "# files (name, fnv1a-64, bytes):\n";
    for (const auto& [name, d] : digests) os << "#   " << name << ' ' << d << "\n";
    os << "# replay: mpcnn " << ctx.cfg.command << " --config manifest.txt\n";
    os << ctx.cfg.to_text();
  });
}

/// Runs one command end to end. Outputs of a failed run are removed before
/// the error propagates.
inline void run_command(const ExperimentConfig& cfg, std::ostream& log, const std::string& invocation) {
  RunContext ctx(cfg, log, invocation);
  try {
    const std::string& c = cfg.command;
    if (c == "invariant-set") run_invariant_set(ctx);
    else if (c == "sample") run_sample(ctx);
    else if (c == "gen-data") run_gen_data(ctx);
    else if (c == "train") run_train(ctx);
    else if (c == "eval-nmse") run_eval_nmse(ctx);
    else if (c == "eval-cost") run_eval_cost(ctx);
    else if (c == "acquire") run_acquire(ctx);
    else if (c == "reproduce-2d" || c == "reproduce-4d") run_reproduce(ctx);
    else throw Error(ErrorCode::InvalidArgument, "unknown command '" + c + "'");
    write_manifest(ctx);
  } catch (...) {
    ctx.outputs.rollback();
    throw;
  }
}

}  // namespace mpcnn
