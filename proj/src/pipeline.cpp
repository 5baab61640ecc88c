#include "fetfids/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <unistd.h>

#include "fetfids/errors.hpp"
#include "fetfids/io.hpp"
#include "fetfids/rng.hpp"

namespace fs = std::filesystem;

namespace fetfids {

namespace {

std::string histogram_row(const std::string& name, const std::vector<std::size_t>& h) {
  std::string row = name;
  std::size_t total = 0;
  for (auto c : h) {
    row += "," + std::to_string(c);
    total += c;
  }
  return row + "," + std::to_string(total) + "\n";
}

std::string encoder_text(const Encoder& enc) {
  std::ostringstream os;
  for (std::size_t s = 0; s < kCategoricalColumns.size(); ++s) {
    os << "vocab." << feature_names()[kCategoricalColumns[s]] << " =";
    for (const auto& v : enc.vocab[s]) os << ' ' << v;
    os << '\n';
  }
  for (std::size_t f = 0; f < kNslKddFeatures; ++f) {
    if (is_categorical_column(f)) continue;
    os << "range." << feature_names()[f] << " = " << format_double(enc.min[f]) << ' ' << format_double(enc.max[f])
       << '\n';
  }
  return os.str();
}

std::string manifest_text(std::span<const std::size_t> rows) {
  std::string s;
  for (auto r : rows) s += std::to_string(r) + "\n";
  return s;
}

std::vector<std::size_t> parse_manifest(const fs::path& path, std::size_t limit) {
  std::vector<std::size_t> rows;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::size_t pos = 0;
    std::size_t v = 0;
    try {
      v = std::stoull(line, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != line.size() || v >= limit) {
      throw CorruptionError(path.string() + ":" + std::to_string(line_no) + ": bad row index '" + line + "'");
    }
    rows.push_back(v);
  }
  return rows;
}

Dataset subsampled(const Dataset& d, double fraction, std::uint64_t seed, std::uint64_t tag) {
  if (fraction >= 1.0 || d.empty()) return d;
  const auto rows = subsample_indices(d.labels(), fraction, derive_seed({seed, 0x5AB5, tag}));
  return d.subset(rows);
}

struct Splits {
  Dataset train, val, test;
};

Splits load_splits(const fs::path& dir, const RunConfig& config) {
  for (const char* name : {"train.csv", "val.csv", "test.csv"}) {
    if (!fs::exists(dir / name)) {
      throw ConfigError("prepared data missing: " + (dir / name).string() + " (run `fetfids prepare` first)");
    }
  }
  Splits s;
  s.train = subsampled(read_encoded_csv(dir / "train.csv"), config.subsample, config.fed.seed, 0);
  s.val = subsampled(read_encoded_csv(dir / "val.csv"), config.subsample, config.fed.seed, 1);
  s.test = subsampled(read_encoded_csv(dir / "test.csv"), config.subsample, config.fed.seed, 2);
  return s;
}

}  // namespace

PrepareSummary prepare_data(const PrepareOptions& options) {
  if (options.out.empty()) throw ConfigError("prepare: output directory is empty");
  if (options.n_nodes == 0) throw ConfigError("prepare: n_nodes must be positive");

  const auto records = parse_nslkdd(options.input);
  if (records.empty()) throw EmptyCorpusError("no records in " + options.input.string());
  std::vector<int> labels;
  labels.reserve(records.size());
  for (const auto& r : records) labels.push_back(map_label(r.label));

  const auto idx = split_indices(labels, options.ratios, options.seed);
  auto pick = [&](const std::vector<std::size_t>& rows) {
    std::vector<RawRecord> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(records[r]);
    return out;
  };
  const auto train_raw = pick(idx.train);
  const Encoder enc = fit_encoder(train_raw);
  const Dataset train = encode(train_raw, enc);
  const Dataset val = encode(pick(idx.val), enc);
  const Dataset test = encode(pick(idx.test), enc);
  const auto nodes = partition_indices(train.labels(), options.n_nodes, options.seed);

  PrepareSummary summary;
  summary.records = records.size();
  summary.train = train.histogram();
  summary.val = val.histogram();
  summary.test = test.histogram();

  std::string dist = "split";
  for (auto name : class_names()) dist += "," + std::string(name);
  dist += ",total\n";
  dist += histogram_row("train", summary.train);
  dist += histogram_row("val", summary.val);
  dist += histogram_row("test", summary.test);

  const fs::path out = fs::absolute(options.out);
  const std::string stamp = std::to_string(::getpid());
  const fs::path stage = out.parent_path() / ("." + out.filename().string() + ".stage-" + stamp);
  fs::remove_all(stage);
  try {
    fs::create_directories(stage / "nodes");
    write_encoded_csv(train, stage / "train.csv");
    write_encoded_csv(val, stage / "val.csv");
    write_encoded_csv(test, stage / "test.csv");
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      write_file_atomic(stage / "nodes" / ("node" + std::to_string(k) + ".txt"), manifest_text(nodes[k]));
      dist += histogram_row("node" + std::to_string(k), train.subset(nodes[k]).histogram());
    }
    write_file_atomic(stage / "distribution.csv", dist);
    write_file_atomic(stage / "encoder.txt", encoder_text(enc));

    if (fs::exists(out)) {
      const fs::path old = out.parent_path() / ("." + out.filename().string() + ".old-" + stamp);
      fs::rename(out, old);
      fs::rename(stage, out);
      fs::remove_all(old);
    } else {
      fs::rename(stage, out);
    }
  } catch (...) {
    std::error_code ec;
    fs::remove_all(stage, ec);
    throw;
  }
  return summary;
}

PreparedData load_prepared(const RunConfig& config) {
  const fs::path dir = config.data_dir.empty() ? fs::path(".") : fs::path(config.data_dir);
  auto splits = load_splits(dir, config);
  PreparedData data{std::move(splits.train), std::move(splits.val), std::move(splits.test), {}};
  const std::size_t n = config.fed.n_nodes;

  bool use_manifests = config.subsample >= 1.0 && fs::exists(dir / "nodes" / ("node" + std::to_string(n - 1) + ".txt")) &&
                       !fs::exists(dir / "nodes" / ("node" + std::to_string(n) + ".txt"));
  if (use_manifests) {
    for (std::size_t k = 0; k < n; ++k) {
      NodePartition p;
      p.node_id = static_cast<int>(k);
      p.rows = parse_manifest(dir / "nodes" / ("node" + std::to_string(k) + ".txt"), data.train.size());
      p.examples = data.train.subset(p.rows);
      data.nodes.push_back(std::move(p));
    }
  } else {
    data.nodes = partition(data.train, n, config.fed.seed);
  }
  return data;
}

FedResult train_run(const RunConfig& config, std::ostream* log) {
  const auto data = load_prepared(config);
  const auto spec = config.model_spec();
  if (data.train.n_features() != spec.fetfids.n_features) {
    throw DimensionError("prepared data has " + std::to_string(data.train.n_features()) + " features, config expects " +
                         std::to_string(spec.fetfids.n_features));
  }
  if (log) {
    *log << "training " << to_string(config.fed.model_kind) << " on " << data.train.size() << " examples across "
         << data.nodes.size() << " nodes (val " << data.val.size() << ", test " << data.test.size() << ")\n";
  }

  const fs::path out(config.out_dir);
  fs::create_directories(out);
  write_file_atomic(out / "config.txt", config.to_text());

  std::string rounds = rounds_csv_header(config.fed.n_nodes);
  std::string timing = "round,seconds\n";
  auto on_round = [&](const RoundLog& r) {
    rounds += rounds_csv_row(r, config.record_wall_time);
    timing += std::to_string(r.round) + "," + format_double(r.seconds) + "\n";
    write_file_atomic(out / "rounds.csv", rounds);
    if (log) {
      *log << "round " << r.round << "/" << config.fed.rounds << "  acc " << std::fixed << std::setprecision(2)
           << 100.0 * r.test.accuracy << "  f1 " << 100.0 * r.test.f1_macro << "  val_loss " << std::setprecision(4)
           << r.val_loss << "  " << std::setprecision(1) << r.seconds << "s\n"
           << std::defaultfloat;
    }
  };
  auto result = run_federated(config.fed, spec, data.nodes, data.val, data.test, on_round);

  auto model = make_model(spec);
  model->set_weights(result.final_weights);
  save_params(*model, out / "final.ckpt");
  write_file_atomic(out / "rounds.csv", rounds);
  write_file_atomic(out / "timing.csv", timing);
  const auto& final_test = result.rounds.empty() ? result.baseline : result.rounds.back().test;
  write_file_atomic(out / "metrics_test.txt", final_test.to_key_value());
  return result;
}

EvalResult eval_run(const fs::path& checkpoint, const fs::path& data_dir, const RunConfig& config) {
  const auto model = load_checkpoint(checkpoint, config.model_spec());
  const auto splits = load_splits(data_dir, config);
  return {evaluate(*model, splits.val), evaluate(*model, splits.test)};
}

InspectReport inspect_run(const RunConfig& config, std::size_t calls) {
  if (calls == 0) throw ConfigError("inspect: need at least one timed call");
  const auto model = make_model(config.model_spec());
  InspectReport rep;
  rep.params = model->param_count();
  rep.flops = model->flop_estimate(1);
  rep.calls = calls;

  Rng rng(derive_seed({config.fed.seed, 0x1A7E}));
  Tensor x({1, model->n_features()}, 0.0);
  for (auto& v : x.data()) v = rng.unit();

  volatile double sink = 0.0;
  for (std::size_t i = 0; i < std::max<std::size_t>(calls / 10, 100); ++i) sink = sink + model->infer(x)[0];
  std::vector<double> us(calls);
  for (std::size_t i = 0; i < calls; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor y = model->infer(x);
    const auto t1 = std::chrono::steady_clock::now();
    sink = sink + y[0];
    us[i] = std::chrono::duration<double, std::micro>(t1 - t0).count();
  }
  std::sort(us.begin(), us.end());
  rep.median_us = calls % 2 ? us[calls / 2] : 0.5 * (us[calls / 2 - 1] + us[calls / 2]);
  rep.p99_us = us[std::min(calls - 1, static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(calls))) - 1)];
  return rep;
}

std::string metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "Model" << std::right << std::setw(10) << "Accuracy" << std::setw(11)
     << "Precision" << std::setw(9) << "Recall" << std::setw(10) << "F1-score" << '\n';
  os << std::fixed << std::setprecision(2);
  for (const auto& [name, m] : rows) {
    os << std::left << std::setw(12) << name << std::right << std::setw(10) << 100.0 * m.accuracy << std::setw(11)
       << 100.0 * m.precision_macro << std::setw(9) << 100.0 * m.recall_macro << std::setw(10) << 100.0 * m.f1_macro
       << '\n';
  }
  return os.str();
}

}  // namespace fetfids
