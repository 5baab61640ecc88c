#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "fetfids/data.hpp"
#include "fetfids/model.hpp"
#include "fetfids/synthetic.hpp"

namespace fixture {

/// Encoded synthetic corpus, encoder fitted on itself.
inline fetfids::Dataset synthetic_dataset(std::size_t n, std::uint64_t seed) {
  const auto raw = fetfids::parse_nslkdd_text(fetfids::synthetic_nslkdd(n, seed));
  return fetfids::encode(raw, fetfids::fit_encoder(raw));
}

/// A narrow FetFIDS on the full 41 features, cheap enough for multi-round tests.
inline fetfids::FetFidsConfig narrow_config(std::uint64_t seed = 0) {
  fetfids::FetFidsConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.blocks = 1;
  c.embed_channels = {7};
  c.ff_hidden = 8;
  c.mlp_hidden = {16};
  c.seed = seed;
  return c;
}

/// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("fetfids_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixture
