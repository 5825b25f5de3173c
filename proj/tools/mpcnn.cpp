// mpcnn: command-line runner for the invariant-set / dataset / training /
// evaluation pipeline. See `mpcnn --help` and the config schema documented in
// include/mpcnn/experiment.hpp.

#include <mpcnn/experiment.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

struct Flags {
  std::optional<std::string> spec, config, out, target_mode, arch, cinf, data, timestamp, sizes, seeds;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<std::size_t> n, test_size, trajectories, k;
  std::optional<int> epochs;
  std::optional<double> epsilon;
  std::vector<std::string> networks;
};

void add_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--spec", f.spec, "built-in spec (double-integrator-2d, system-4d) or spec file");
  cmd->add_option("--config", f.config, "experiment config file (a previous manifest.txt works too)");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--threads", f.threads, "worker threads (0 = all cores)");
  cmd->add_option("--target-mode", f.target_mode, "FirstInput or FullSequence");
  cmd->add_option("--arch", f.arch, "BBNN, ProjectionNN or a comma list");
  cmd->add_option("--cinf", f.cinf, "invariant-set file to reuse instead of recomputing");
  cmd->add_option("--data", f.data, "dataset file");
  cmd->add_option("--network", f.networks, "network checkpoint (repeatable)");
  cmd->add_option("--n", f.n, "number of samples or labelled pairs");
  cmd->add_option("--test-size", f.test_size, "test-set size");
  cmd->add_option("--sizes", f.sizes, "comma list of training-set sizes");
  cmd->add_option("--seeds", f.seeds, "comma list of experiment seeds for learning curves");
  cmd->add_option("--trajectories", f.trajectories, "closed-loop trajectories in the cost comparison");
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--k", f.k, "points proposed by acquire");
  cmd->add_option("--epsilon", f.epsilon, "acquisition step length (0 = default)");
  cmd->add_option("--timestamp", f.timestamp, "generation timestamp recorded in dataset headers");
}

mpcnn::ExperimentConfig build_config(const std::string& command, const Flags& f) {
  using mpcnn::KeyValueConfig;
  mpcnn::ExperimentConfig cfg = mpcnn::ExperimentConfig::preset(command);
  if (f.config) cfg.apply(KeyValueConfig::load(*f.config));
  // Flags go through the same parser as the config file so both accept the
  // same spellings.
  KeyValueConfig kv;
  if (f.spec) kv.set("experiment.spec", *f.spec);
  if (f.seed) kv.set("experiment.seed", std::to_string(*f.seed));
  if (f.out) kv.set("experiment.out", *f.out);
  if (f.target_mode) kv.set("experiment.target_mode", *f.target_mode);
  if (f.arch) kv.set("experiment.archs", *f.arch);
  if (f.timestamp) kv.set("experiment.timestamp", *f.timestamp);
  if (f.n) kv.set("data.n", std::to_string(*f.n));
  if (f.test_size) kv.set("data.test_size", std::to_string(*f.test_size));
  if (f.epochs) kv.set("train.epochs", std::to_string(*f.epochs));
  if (f.sizes) kv.set("eval.sizes", *f.sizes);
  if (f.seeds) kv.set("eval.seeds", *f.seeds);
  if (f.trajectories) kv.set("eval.trajectories", std::to_string(*f.trajectories));
  if (f.k) kv.set("acquire.k", std::to_string(*f.k));
  if (f.epsilon) kv.set("acquire.epsilon", mpcnn::format_double(*f.epsilon));
  if (f.cinf) kv.set("inputs.cinf", *f.cinf);
  if (f.data) kv.set("inputs.data", *f.data);
  cfg.apply(kv);
  // A seed given on the command line re-derives the learning-curve seeds
  // unless they were also given explicitly.
  if (f.seed && !f.seeds) cfg.seeds.clear();
  if (!f.networks.empty()) cfg.network_paths = f.networks;
  if (f.threads) cfg.threads = *f.threads;
  cfg.resolve();
  return cfg;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural approximation of linear MPC laws with feasibility projection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", mpcnn::kVersion);
  Flags flags;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"invariant-set", "compute the maximal control invariant set (cinf.txt)"},
      {"sample", "hit-and-run samples from the invariant set (samples.txt)"},
      {"gen-data", "labelled MPC dataset (dataset.txt)"},
      {"train", "train networks on --data (<arch>.net, <arch>_loss.csv)"},
      {"eval-nmse", "learning curve, or NMSE of --network checkpoints on --data"},
      {"eval-cost", "closed-loop cost comparison of baselines and --network checkpoints"},
      {"acquire", "propose new training states for a --network around --data anchors"},
      {"reproduce-2d", "full double-integrator benchmark"},
      {"reproduce-4d", "full four-state benchmark"},
  };
  for (const auto& [name, help] : commands) add_flags(app.add_subcommand(name, help), flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: InvalidArgument: " << one_line(e.what()) << "\n";
    return 1;
  }

  std::string invocation = "mpcnn";
  for (int i = 1; i < argc; ++i) invocation += std::string(" ") + argv[i];

  try {
    const std::string command = app.get_subcommands().front()->get_name();
    const mpcnn::ExperimentConfig cfg = build_config(command, flags);
    mpcnn::run_command(cfg, std::cout, invocation);
    std::cout << "outputs in " << cfg.out << "\n";
  } catch (const mpcnn::Error& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: Internal: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
