#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fetfids/fedsim.hpp"
#include "fetfids/model.hpp"

namespace fetfids {

/// Everything a CLI run needs, loadable from flat `key = value` text.
struct RunConfig {
  FedConfig fed;
  FetFidsConfig model;  // model.seed mirrors fed.seed
  std::string data_dir;
  std::string out_dir = "runs/latest";
  double subsample = 1.0;
  bool record_wall_time = false;  // rounds.csv `seconds` column; timing.csv always has it

  /// Applies one key. Returns an error message, empty on success.
  std::string set(std::string_view key, std::string_view value);

  /// All problems with the current values (unknown keys are reported by parse/apply).
  std::vector<std::string> violations() const;

  ModelSpec model_spec() const;

  /// Resolved config in the same `key = value` format, keys in fixed order.
  std::string to_text() const;

  static const std::vector<std::string>& keys();
};

/// Parses `key = value` lines ('#' starts a comment) on top of `base`, then
/// applies `overrides` (flag wins). Collects every bad line, unknown key and
/// constraint violation and throws one ConfigError listing them all.
RunConfig load_run_config(std::string_view text, const std::vector<std::pair<std::string, std::string>>& overrides = {},
                          RunConfig base = {});

}  // namespace fetfids
