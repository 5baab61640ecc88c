#include "fetfids/run_config.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "fetfids/errors.hpp"
#include "fetfids/io.hpp"

namespace fetfids {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool to_size(std::string_view s, std::size_t& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

bool to_u64(std::string_view s, std::uint64_t& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

bool to_double(std::string_view s, double& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

bool to_list(std::string_view s, std::vector<std::size_t>& out) {
  out.clear();
  if (trim(s).empty()) return true;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    const auto part = trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    std::size_t v = 0;
    if (!to_size(part, v)) return false;
    out.push_back(v);
    if (comma == std::string_view::npos) return true;
    start = comma + 1;
  }
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = {
      "model_kind", "data_dir",  "out_dir",        "n_nodes",      "rounds",    "local_epochs",
      "batch_size", "base_lr",   "weight_decay",   "lr_gamma",     "mlr_lr",    "seed",
      "threads",    "subsample", "record_wall_time", "n_features", "d_model",   "heads",
      "blocks",     "embed_channels", "embed_kernel", "ff_hidden", "mlp_hidden", "n_classes"};
  return k;
}

std::string RunConfig::set(std::string_view key, std::string_view raw) {
  const auto value = trim(raw);
  const std::string bad = "invalid value '" + std::string(value) + "' for " + std::string(key);
  auto size_key = [&](std::size_t& field) { return to_size(value, field) ? std::string{} : bad; };
  auto double_key = [&](double& field) { return to_double(value, field) ? std::string{} : bad; };
  auto list_key = [&](std::vector<std::size_t>& field) {
    std::vector<std::size_t> parsed;
    if (!to_list(value, parsed)) return bad;
    field = std::move(parsed);
    return std::string{};
  };

  if (key == "model_kind") {
    if (value == "fetfids") fed.model_kind = ModelKind::fetfids;
    else if (value == "mlr") fed.model_kind = ModelKind::mlr;
    else return bad + " (expected fetfids or mlr)";
    return {};
  }
  if (key == "data_dir") { data_dir = std::string(value); return {}; }
  if (key == "out_dir") { out_dir = std::string(value); return {}; }
  if (key == "n_nodes") return size_key(fed.n_nodes);
  if (key == "rounds") return size_key(fed.rounds);
  if (key == "local_epochs") return size_key(fed.local_epochs);
  if (key == "batch_size") return size_key(fed.batch_size);
  if (key == "base_lr") return double_key(fed.base_lr);
  if (key == "weight_decay") return double_key(fed.weight_decay);
  if (key == "lr_gamma") return double_key(fed.lr_gamma);
  if (key == "mlr_lr") return double_key(fed.mlr_lr);
  if (key == "seed") {
    if (!to_u64(value, fed.seed)) return bad;
    model.seed = fed.seed;
    return {};
  }
  if (key == "threads") return size_key(fed.threads);
  if (key == "subsample") return double_key(subsample);
  if (key == "record_wall_time") {
    if (value == "1" || value == "true") record_wall_time = true;
    else if (value == "0" || value == "false") record_wall_time = false;
    else return bad;
    return {};
  }
  if (key == "n_features") return size_key(model.n_features);
  if (key == "d_model") return size_key(model.d_model);
  if (key == "heads") return size_key(model.heads);
  if (key == "blocks") return size_key(model.blocks);
  if (key == "embed_channels") return list_key(model.embed_channels);
  if (key == "embed_kernel") return size_key(model.embed_kernel);
  if (key == "ff_hidden") return size_key(model.ff_hidden);
  if (key == "mlp_hidden") return list_key(model.mlp_hidden);
  if (key == "n_classes") return size_key(model.n_classes);
  return "unknown config key '" + std::string(key) + "'";
}

std::vector<std::string> RunConfig::violations() const {
  auto v = fed.violations();
  if (fed.model_kind == ModelKind::fetfids) {
    auto m = model.violations();
    v.insert(v.end(), m.begin(), m.end());
  } else if (model.n_classes < 2 || model.n_features == 0) {
    v.push_back("mlr needs n_features > 0 and n_classes >= 2");
  }
  if (!(subsample > 0.0) || subsample > 1.0) v.push_back("subsample must be in (0, 1]");
  return v;
}

ModelSpec RunConfig::model_spec() const {
  ModelSpec s;
  s.kind = fed.model_kind;
  s.fetfids = model;
  s.fetfids.seed = fed.seed;
  return s;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "model_kind = " << to_string(fed.model_kind) << "\n";
  os << "data_dir = " << data_dir << "\n";
  os << "out_dir = " << out_dir << "\n";
  os << "n_nodes = " << fed.n_nodes << "\n";
  os << "rounds = " << fed.rounds << "\n";
  os << "local_epochs = " << fed.local_epochs << "\n";
  os << "batch_size = " << fed.batch_size << "\n";
  os << "base_lr = " << format_double(fed.base_lr) << "\n";
  os << "weight_decay = " << format_double(fed.weight_decay) << "\n";
  os << "lr_gamma = " << format_double(fed.lr_gamma) << "\n";
  os << "mlr_lr = " << format_double(fed.mlr_lr) << "\n";
  os << "seed = " << fed.seed << "\n";
  os << "threads = " << fed.threads << "\n";
  os << "subsample = " << format_double(subsample) << "\n";
  os << "record_wall_time = " << (record_wall_time ? 1 : 0) << "\n";
  os << "n_features = " << model.n_features << "\n";
  os << "d_model = " << model.d_model << "\n";
  os << "heads = " << model.heads << "\n";
  os << "blocks = " << model.blocks << "\n";
  os << "embed_channels = " << join(model.embed_channels) << "\n";
  os << "embed_kernel = " << model.embed_kernel << "\n";
  os << "ff_hidden = " << model.ff_hidden << "\n";
  os << "mlp_hidden = " << join(model.mlp_hidden) << "\n";
  os << "n_classes = " << model.n_classes << "\n";
  return os.str();
}

RunConfig load_run_config(std::string_view text, const std::vector<std::pair<std::string, std::string>>& overrides,
                          RunConfig base) {
  RunConfig cfg = std::move(base);
  std::vector<std::string> errors;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      errors.push_back("line " + std::to_string(line_no) + ": expected 'key = value'");
      continue;
    }
    if (auto err = cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1)); !err.empty()) {
      errors.push_back("line " + std::to_string(line_no) + ": " + err);
    }
  }
  for (const auto& [k, v] : overrides) {
    if (auto err = cfg.set(k, v); !err.empty()) errors.push_back("override: " + err);
  }
  // Keys that failed to parse keep their previous value, so the remaining
  // constraints can still be checked in the same pass.
  auto v = cfg.violations();
  errors.insert(errors.end(), v.begin(), v.end());
  if (!errors.empty()) {
    std::string msg = "invalid run config:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  return cfg;
}

}  // namespace fetfids
