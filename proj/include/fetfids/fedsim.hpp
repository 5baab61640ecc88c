#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fetfids/data.hpp"
#include "fetfids/metrics.hpp"
#include "fetfids/model.hpp"
#include "fetfids/param_set.hpp"

namespace fetfids {

struct FedConfig {
  std::size_t n_nodes = 5;
  std::size_t rounds = 20;
  std::size_t local_epochs = 20;
  std::size_t batch_size = 128;
  double base_lr = 1e-3;
  double weight_decay = 1e-2;
  double lr_gamma = 0.7;
  double mlr_lr = 0.01;  // constant SGD step for model_kind = mlr
  std::uint64_t seed = 0;
  ModelKind model_kind = ModelKind::fetfids;
  std::size_t threads = 1;

  std::vector<std::string> violations() const;
  void validate() const;
};

/// Seed of node `node`'s stream in round `round`.
std::uint64_t node_round_seed(std::uint64_t seed, std::size_t node, std::size_t round);
/// Seed of the shuffle for one local epoch.
std::uint64_t epoch_shuffle_seed(std::uint64_t seed, std::size_t node, std::size_t round, std::size_t epoch);

/// Mini-batch boundaries [start, end) over `n` rows. A trailing batch of one
/// row is folded into the previous batch so BatchNorm always sees ≥ 2 rows.
std::vector<std::pair<std::size_t, std::size_t>> batch_bounds(std::size_t n, std::size_t batch_size);

/// Step size for local epoch `epoch`: AdamW learning rate base_lr·gamma^epoch
/// for fetfids (restarting every round), the constant SGD rate for mlr.
double local_learning_rate(const FedConfig& config, std::size_t epoch);

struct NodeState {
  int node_id = 0;
  const Dataset* data = nullptr;
  std::uint64_t rng_seed = 0;  // node_round_seed(config.seed, node_id, round)
  std::size_t round = 0;
};

struct LocalTrainResult {
  ParamSet weights;
  std::vector<double> epoch_losses;  // example-weighted mean training loss per epoch
};

/// Trains a copy of `weights` on the node's data. A fresh optimizer is used
/// (moments reset every round). Shuffling is seeded per (seed, node, round,
/// epoch). `weights` is never modified. Throws EmptyNodeError for an empty
/// partition.
LocalTrainResult local_train(const NodeState& node, const Classifier& architecture, const ParamSet& weights,
                             std::size_t epochs, const FedConfig& config);

/// Sample-count weighted mean Σ (n_k / n) w_k of every entry, buffers included.
/// Throws AggregationError on length mismatch, non-positive counts or the
/// first structurally differing entry.
ParamSet fedavg(std::span<const ParamSet> locals, std::span<const std::size_t> counts);

/// Predicted class per row (argmax of log-probabilities, lowest index on ties).
std::vector<int> predict(const Classifier& model, const Dataset& data, std::size_t batch_size = 256);

/// Metrics of the eval-mode model on `data`. Throws ConfigError when empty.
MetricsReport evaluate(const Classifier& model, const Dataset& data, std::size_t batch_size = 256);

/// Mean eval-mode NLL on `data`.
double evaluate_loss(const Classifier& model, const Dataset& data, std::size_t batch_size = 256);

struct RoundLog {
  std::size_t round = 0;  // 1-based
  std::vector<double> node_losses;  // last local epoch, per node
  MetricsReport test;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct FedResult {
  MetricsReport baseline;  // initial global model on the test split
  std::vector<RoundLog> rounds;
  ParamSet final_weights;
};

using RoundCallback = std::function<void(const RoundLog&)>;

/// Broadcast → local_train on every node → fedavg weighted by partition size →
/// evaluate on `test`, once per round. The initial model comes from `spec`
/// with its seed. A failing node aborts the round with a NodeError.
FedResult run_federated(const FedConfig& config, const ModelSpec& spec, std::span<const NodePartition> nodes,
                        const Dataset& val, const Dataset& test, const RoundCallback& on_round = {});

/// CSV header `round,node0_loss,…,accuracy,precision_macro,recall_macro,f1_macro,seconds`.
std::string rounds_csv_header(std::size_t n_nodes);
/// One CSV row; metrics as percentages. `with_time` false writes 0 for seconds.
std::string rounds_csv_row(const RoundLog& log, bool with_time);

}  // namespace fetfids
