// fetfids: prepare NSL-KDD splits, train federated models, evaluate and inspect.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "fetfids/errors.hpp"
#include "fetfids/io.hpp"
#include "fetfids/pipeline.hpp"
#include "fetfids/run_config.hpp"
#include "fetfids/synthetic.hpp"

namespace fs = std::filesystem;
using namespace fetfids;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

/// Relative paths resolve against $FETFIDS_DATA_ROOT when it is set.
fs::path under_data_root(const fs::path& p) {
  const char* root = std::getenv("FETFIDS_DATA_ROOT");
  if (root == nullptr || *root == '\0' || p.is_absolute() || fs::exists(p)) return p;
  return fs::path(root) / p;
}

struct ConfigFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> named;  // filled by option callbacks

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "key = value run config");
    app->add_option("--set", sets, "override one key, e.g. --set rounds=3");
    flag(app, "--model-kind", "model_kind", "fetfids or mlr");
    flag(app, "--data-dir", "data_dir", "prepared data directory");
    flag(app, "--out", "out_dir", "output directory");
    flag(app, "--rounds", "rounds", "communication rounds");
    flag(app, "--local-epochs", "local_epochs", "local epochs per round");
    flag(app, "--nodes", "n_nodes", "number of nodes");
    flag(app, "--seed", "seed", "experiment seed");
    flag(app, "--threads", "threads", "node training threads");
    flag(app, "--subsample", "subsample", "fraction of every split to keep");
  }

  void flag(CLI::App* app, const std::string& name, std::string key, const std::string& help) {
    app->add_option_function<std::string>(
        name, [this, key](const std::string& v) { named.emplace_back(key, v); }, help);
  }

  /// File < $FETFIDS_DATA_ROOT (data_dir only) < flags.
  RunConfig resolve(std::optional<fs::path> fallback_file = std::nullopt) const {
    std::string text;
    if (!config_file.empty()) {
      text = read_file(config_file);
    } else if (fallback_file && fs::exists(*fallback_file)) {
      text = read_file(*fallback_file);
    }
    std::vector<std::pair<std::string, std::string>> overrides;
    if (const char* root = std::getenv("FETFIDS_DATA_ROOT"); root != nullptr && *root != '\0') {
      overrides.emplace_back("data_dir", root);
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    overrides.insert(overrides.end(), named.begin(), named.end());
    return load_run_config(text, overrides);
  }
};

int cmd_prepare(const PrepareOptions& opt) {
  PrepareOptions o = opt;
  o.input = under_data_root(o.input);
  const auto s = prepare_data(o);
  std::cout << "parsed " << s.records << " records from " << o.input.string() << "\n";
  std::cout << "wrote " << o.out.string() << " (train/val/test splits, " << o.n_nodes << " node manifests)\n\n";
  std::cout << read_file(o.out / "distribution.csv");
  return 0;
}

int cmd_train(const ConfigFlags& flags) {
  const auto cfg = flags.resolve();
  const auto result = train_run(cfg, &std::cerr);
  const auto& last = result.rounds.empty() ? result.baseline : result.rounds.back().test;
  std::cout << "\nfinal global model, test split (macro averages, %)\n";
  std::cout << metrics_table({{cfg.fed.model_kind == ModelKind::mlr ? "MLR" : "FetFIDS", last}});
  std::cout << "\noutputs in " << cfg.out_dir << "\n";
  return 0;
}

int cmd_eval(const ConfigFlags& flags, const fs::path& checkpoint, std::string data_dir, std::string out_dir) {
  const auto cfg = flags.resolve(checkpoint.parent_path() / "config.txt");
  if (data_dir.empty()) data_dir = cfg.data_dir;
  const auto r = eval_run(checkpoint, data_dir, cfg);
  const fs::path out = out_dir.empty() ? checkpoint.parent_path() : fs::path(out_dir);
  fs::create_directories(out);
  write_file_atomic(out / "eval_val.txt", r.val.to_key_value());
  write_file_atomic(out / "eval_test.txt", r.test.to_key_value());
  std::cout << "[val]\n" << r.val.to_key_value() << "\n[test]\n" << r.test.to_key_value();
  return 0;
}

int cmd_inspect(const ConfigFlags& flags, std::size_t calls) {
  const auto cfg = flags.resolve();
  const auto r = inspect_run(cfg, calls);
  std::cout << "model_kind=" << to_string(cfg.fed.model_kind) << "\n";
  std::cout << "param_count=" << r.params << "\n";
  std::cout << "flop_estimate=" << r.flops << "\n";
  std::cout << std::fixed << std::setprecision(3);
  std::cout << "latency_median_us=" << r.median_us << "\n";
  std::cout << "latency_p99_us=" << r.p99_us << "\n";
  std::cout << "latency_calls=" << r.calls << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated transformer intrusion detection on NSL-KDD"};
  app.require_subcommand(1);

  PrepareOptions prep;
  auto* prepare = app.add_subcommand("prepare", "parse, split, encode and partition an NSL-KDD file");
  prepare->add_option("--data", prep.input, "NSL-KDD text file (relative to $FETFIDS_DATA_ROOT if set)")->required();
  prepare->add_option("--seed", prep.seed, "split and partition seed");
  prepare->add_option("--out", prep.out, "output directory")->required();
  prepare->add_option("--nodes", prep.n_nodes, "number of node manifests");

  ConfigFlags train_flags;
  auto* train = app.add_subcommand("train", "run federated training");
  train_flags.attach(train);

  ConfigFlags eval_flags;
  std::string checkpoint, eval_data, eval_out;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the val and test splits");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "prepared data directory (defaults to the run's data_dir)");
  eval->add_option("--report-dir", eval_out, "where eval_val.txt / eval_test.txt go (defaults to the checkpoint dir)");
  eval->add_option("--config", eval_flags.config_file, "run config (defaults to config.txt next to the checkpoint)");
  eval->add_option("--set", eval_flags.sets, "override one key");

  ConfigFlags inspect_flags;
  std::size_t calls = 10000;
  auto* inspect = app.add_subcommand("inspect", "parameter count, FLOPs and inference latency");
  inspect_flags.attach(inspect);
  inspect->add_option("--calls", calls, "timed single-example calls")->check(CLI::Range(1, 100000000));

  std::size_t synth_n = 10000;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a synthetic corpus in NSL-KDD format");
  synth->add_option("--n", synth_n, "records");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*prepare) return cmd_prepare(prep);
    if (*train) return cmd_train(train_flags);
    if (*eval) return cmd_eval(eval_flags, checkpoint, eval_data, eval_out);
    if (*inspect) return cmd_inspect(inspect_flags, calls);
    if (*synth) {
      write_file_atomic(synth_out, synthetic_nslkdd(synth_n, synth_seed));
      std::cout << "wrote " << synth_n << " records to " << synth_out << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
