#include "fetfids/fedsim.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "fetfids/errors.hpp"
#include "fetfids/io.hpp"
#include "fetfids/optim.hpp"
#include "fetfids/rng.hpp"

namespace fetfids {

std::vector<std::string> FedConfig::violations() const {
  std::vector<std::string> v;
  if (n_nodes == 0) v.push_back("n_nodes must be positive");
  if (batch_size == 0) v.push_back("batch_size must be positive");
  if (threads == 0) v.push_back("threads must be positive");
  if (!(base_lr > 0.0)) v.push_back("base_lr must be positive");
  if (weight_decay < 0.0) v.push_back("weight_decay must be non-negative");
  if (!(lr_gamma > 0.0) || lr_gamma > 1.0) v.push_back("lr_gamma must be in (0, 1]");
  if (!(mlr_lr > 0.0)) v.push_back("mlr_lr must be positive");
  return v;
}

void FedConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid federated config:";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ConfigError(msg);
}

std::uint64_t node_round_seed(std::uint64_t seed, std::size_t node, std::size_t round) {
  return derive_seed({seed, 0xF00D, node, round});
}

std::uint64_t epoch_shuffle_seed(std::uint64_t seed, std::size_t node, std::size_t round, std::size_t epoch) {
  return derive_seed({node_round_seed(seed, node, round), epoch});
}

std::vector<std::pair<std::size_t, std::size_t>> batch_bounds(std::size_t n, std::size_t batch_size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch_size) out.emplace_back(s, std::min(n, s + batch_size));
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out[out.size() - 2].second = out.back().second;
    out.pop_back();
  }
  return out;
}

double local_learning_rate(const FedConfig& config, std::size_t epoch) {
  if (config.model_kind == ModelKind::mlr) return config.mlr_lr;
  return exp_lr_decay(config.base_lr, config.lr_gamma, static_cast<int>(epoch));
}

namespace {

Tensor gather_rows(const Dataset& data, std::span<const std::size_t> order, std::size_t begin, std::size_t end,
                   std::vector<int>& labels) {
  const std::size_t f = data.n_features();
  Tensor x({end - begin, f});
  labels.resize(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    const auto row = data.row(order[i]);
    std::copy(row.begin(), row.end(), x.raw() + (i - begin) * f);
    labels[i - begin] = data.label(order[i]);
  }
  return x;
}

}  // namespace

LocalTrainResult local_train(const NodeState& node, const Classifier& architecture, const ParamSet& weights,
                             std::size_t epochs, const FedConfig& config) {
  if (node.data == nullptr || node.data->empty()) throw EmptyNodeError("node " + std::to_string(node.node_id) + " has no training data");
  auto model = architecture.clone();
  model->set_weights(weights);
  auto& params = model->params();

  AdamWOptions adam;
  adam.base_lr = config.base_lr;
  adam.weight_decay = config.weight_decay;
  OptState opt = OptState::for_params(params, adam);

  const Dataset& data = *node.data;
  std::vector<std::size_t> order(data.size());
  std::vector<int> labels;
  LocalTrainResult result;
  const auto bounds = batch_bounds(data.size(), config.batch_size);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed({node.rng_seed, epoch}));
    rng.shuffle(std::span<std::size_t>(order));
    const double lr = local_learning_rate(config, epoch);
    double loss_sum = 0.0;
    for (const auto& [begin, end] : bounds) {
      Tensor x = gather_rows(data, order, begin, end, labels);
      Tensor log_probs = model->forward(x, nn::Mode::train);
      auto nll = nn::nll_loss(log_probs, labels);
      model->backward(nll.grad);
      if (config.model_kind == ModelKind::mlr) {
        sgd_step(params, lr);
      } else {
        adamw_step(params, opt, lr);
      }
      loss_sum += nll.loss * static_cast<double>(end - begin);
    }
    result.epoch_losses.push_back(loss_sum / static_cast<double>(data.size()));
  }
  params.clear_grads();
  result.weights = params;
  return result;
}

ParamSet fedavg(std::span<const ParamSet> locals, std::span<const std::size_t> counts) {
  if (locals.empty()) throw AggregationError("fedavg needs at least one local model");
  if (locals.size() != counts.size()) {
    throw AggregationError("fedavg: " + std::to_string(locals.size()) + " models but " + std::to_string(counts.size()) +
                           " sample counts");
  }
  double total = 0.0;
  for (auto c : counts) {
    if (c == 0) throw AggregationError("fedavg: sample counts must be positive");
    total += static_cast<double>(c);
  }
  const ParamSet& first = locals.front();
  for (std::size_t k = 1; k < locals.size(); ++k) {
    const ParamSet& other = locals[k];
    if (other.size() != first.size()) {
      throw AggregationError("fedavg: model " + std::to_string(k) + " has " + std::to_string(other.size()) +
                             " entries, model 0 has " + std::to_string(first.size()));
    }
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (other[i].name != first[i].name || other[i].kind != first[i].kind ||
          !other[i].value.same_shape(first[i].value)) {
        throw AggregationError("fedavg: entry " + std::to_string(i) + " differs between model 0 ('" + first[i].name +
                               "' " + shape_str(first[i].value.shape()) + ") and model " + std::to_string(k) + " ('" +
                               other[i].name + "' " + shape_str(other[i].value.shape()) + ")");
      }
    }
  }

  std::vector<double> weight(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) weight[k] = static_cast<double>(counts[k]) / total;

  ParamSet out;
  for (std::size_t i = 0; i < first.size(); ++i) {
    // Seeded with the first term so a single node reproduces its weights bit for bit.
    Tensor acc = first[i].value;
    for (auto& v : acc.data()) v *= weight[0];
    for (std::size_t k = 1; k < locals.size(); ++k) {
      const Tensor& src = locals[k][i].value;
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += weight[k] * src[j];
    }
    out.add(first[i].name, std::move(acc), first[i].kind);
  }
  return out;
}

std::vector<int> predict(const Classifier& model, const Dataset& data, std::size_t batch_size) {
  std::vector<int> pred(data.size());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> labels;
  for (std::size_t s = 0; s < data.size(); s += batch_size) {
    const std::size_t e = std::min(data.size(), s + batch_size);
    Tensor lp = model.infer(gather_rows(data, order, s, e, labels));
    const std::size_t j = lp.cols();
    for (std::size_t i = 0; i < e - s; ++i) {
      const double* row = lp.raw() + i * j;
      pred[s + i] = static_cast<int>(std::max_element(row, row + j) - row);
    }
  }
  return pred;
}

MetricsReport evaluate(const Classifier& model, const Dataset& data, std::size_t batch_size) {
  if (data.empty()) throw ConfigError("cannot evaluate on an empty dataset");
  const auto pred = predict(model, data, batch_size);
  return report(confusion(data.labels(), pred, model.n_classes()));
}

double evaluate_loss(const Classifier& model, const Dataset& data, std::size_t batch_size) {
  if (data.empty()) throw ConfigError("cannot evaluate on an empty dataset");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> labels;
  double sum = 0.0;
  for (std::size_t s = 0; s < data.size(); s += batch_size) {
    const std::size_t e = std::min(data.size(), s + batch_size);
    Tensor lp = model.infer(gather_rows(data, order, s, e, labels));
    sum += nn::nll_loss(lp, labels).loss * static_cast<double>(e - s);
  }
  return sum / static_cast<double>(data.size());
}

FedResult run_federated(const FedConfig& config, const ModelSpec& spec, std::span<const NodePartition> nodes,
                        const Dataset& val, const Dataset& test, const RoundCallback& on_round) {
  config.validate();
  if (nodes.size() != config.n_nodes) {
    throw ConfigError("config asks for " + std::to_string(config.n_nodes) + " nodes but " +
                      std::to_string(nodes.size()) + " partitions were given");
  }
  if (spec.kind != config.model_kind) throw ConfigError("model spec and federated config disagree on model_kind");
  auto global = make_model(spec);

  FedResult result;
  result.baseline = evaluate(*global, test);
  std::vector<std::size_t> counts;
  for (const auto& n : nodes) counts.push_back(n.examples.size());

  const std::size_t workers = std::min(config.threads, nodes.size());
  for (std::size_t round = 1; round <= config.rounds; ++round) {
    const auto started = std::chrono::steady_clock::now();
    const ParamSet broadcast = global->params();
    std::vector<LocalTrainResult> locals(nodes.size());
    std::vector<std::exception_ptr> failures(nodes.size());

    auto train_node = [&](std::size_t k) {
      try {
        NodeState state;
        state.node_id = nodes[k].node_id;
        state.data = &nodes[k].examples;
        state.round = round;
        state.rng_seed = node_round_seed(config.seed, static_cast<std::size_t>(nodes[k].node_id), round);
        locals[k] = local_train(state, *global, broadcast, config.local_epochs, config);
      } catch (...) {
        failures[k] = std::current_exception();
      }
    };
    if (workers <= 1) {
      for (std::size_t k = 0; k < nodes.size(); ++k) train_node(k);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (std::size_t k = next++; k < nodes.size(); k = next++) train_node(k);
        });
      }
      for (auto& t : pool) t.join();
    }
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (!failures[k]) continue;
      try {
        std::rethrow_exception(failures[k]);
      } catch (const std::exception& e) {
        throw NodeError(nodes[k].node_id, "round " + std::to_string(round) + ": " + e.what());
      }
    }

    std::vector<ParamSet> weights;
    weights.reserve(locals.size());
    RoundLog log;
    log.round = round;
    for (auto& l : locals) {
      log.node_losses.push_back(l.epoch_losses.empty() ? std::nan("") : l.epoch_losses.back());
      weights.push_back(std::move(l.weights));
    }
    global->set_weights(fedavg(weights, counts));
    log.test = evaluate(*global, test);
    if (!val.empty()) log.val_loss = evaluate_loss(*global, val);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (on_round) on_round(log);
    result.rounds.push_back(std::move(log));
  }
  result.final_weights = global->params();
  return result;
}

std::string rounds_csv_header(std::size_t n_nodes) {
  std::string h = "round";
  for (std::size_t k = 0; k < n_nodes; ++k) h += ",node" + std::to_string(k) + "_loss";
  return h + ",accuracy,precision_macro,recall_macro,f1_macro,seconds\n";
}

std::string rounds_csv_row(const RoundLog& log, bool with_time) {
  std::string r = std::to_string(log.round);
  for (double l : log.node_losses) r += "," + format_double(l);
  r += "," + format_double(100.0 * log.test.accuracy);
  r += "," + format_double(100.0 * log.test.precision_macro);
  r += "," + format_double(100.0 * log.test.recall_macro);
  r += "," + format_double(100.0 * log.test.f1_macro);
  r += "," + format_double(with_time ? log.seconds : 0.0);
  return r + "\n";
}

}  // namespace fetfids
