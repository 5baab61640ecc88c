#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "fetfids/data.hpp"
#include "fetfids/fedsim.hpp"
#include "fetfids/metrics.hpp"
#include "fetfids/run_config.hpp"

namespace fetfids {

struct PrepareOptions {
  std::filesystem::path input;
  std::filesystem::path out;
  std::uint64_t seed = 0;
  std::size_t n_nodes = 5;
  SplitRatios ratios;
};

struct PrepareSummary {
  std::size_t records = 0;
  std::vector<std::size_t> train, val, test;  // class histograms
};

/// Parses, splits, fits the encoder on the training split, encodes and
/// partitions. Output directory layout:
///   train.csv val.csv test.csv    encoded splits
///   nodes/node<k>.txt             training-row indices per node
///   distribution.csv              per-class counts per split and node
///   encoder.txt                   fitted vocabularies and ranges
/// Everything is staged in a sibling directory and renamed into place, so a
/// failure leaves no partial output.
PrepareSummary prepare_data(const PrepareOptions& options);

struct PreparedData {
  Dataset train, val, test;
  std::vector<NodePartition> nodes;
};

/// Loads the prepared splits under config.data_dir, applies the subsample and
/// builds node partitions. Saved manifests are used when they match n_nodes and
/// no subsample is requested; otherwise the training split is re-partitioned.
PreparedData load_prepared(const RunConfig& config);

/// Runs federated training and writes rounds.csv, timing.csv, final.ckpt,
/// config.txt and metrics_test.txt into config.out_dir. Progress goes to `log`.
FedResult train_run(const RunConfig& config, std::ostream* log = nullptr);

struct EvalResult {
  MetricsReport val, test;
};

/// Evaluates a checkpoint on the prepared val and test splits under `data_dir`
/// (subsampled as `config` says). Throws IncompatibleCheckpointError when the
/// checkpoint does not match the configured architecture.
EvalResult eval_run(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                    const RunConfig& config);

struct InspectReport {
  std::size_t params = 0;
  std::uint64_t flops = 0;  // per example
  double median_us = 0.0;
  double p99_us = 0.0;
  std::size_t calls = 0;
};

/// Counts and single-example eval-mode latency over `calls` timed calls after
/// a warm-up.
InspectReport inspect_run(const RunConfig& config, std::size_t calls = 10000);

/// Fixed-width table with one row per model: Accuracy, Precision, Recall,
/// F1-score (macro, percent).
std::string metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace fetfids
