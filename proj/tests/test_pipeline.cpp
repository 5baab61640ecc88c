#include "doctest.h"

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "fetfids/errors.hpp"
#include "fetfids/io.hpp"
#include "fetfids/pipeline.hpp"
#include "fetfids/run_config.hpp"
#include "fixtures.hpp"

using namespace fetfids;
namespace fs = std::filesystem;

namespace {

std::string last_line(const std::string& text) {
  auto end = text.find_last_not_of('\n');
  auto start = text.rfind('\n', end);
  return text.substr(start == std::string::npos ? 0 : start + 1, end - (start == std::string::npos ? 0 : start + 1) + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  return out;
}

/// Prepared synthetic corpus shared by the training cases.
const fs::path& prepared_dir() {
  static const fs::path dir = [] {
    const auto root = fixture::scratch_dir("pipeline");
    write_file_atomic(root / "corpus.txt", synthetic_nslkdd(1200, 3));
    PrepareOptions o;
    o.input = root / "corpus.txt";
    o.out = root / "prepared";
    o.n_nodes = 3;
    prepare_data(o);
    return o.out;
  }();
  return dir;
}

RunConfig tiny_run(const std::string& out, ModelKind kind = ModelKind::fetfids) {
  const std::vector<std::pair<std::string, std::string>> o = {
      {"data_dir", prepared_dir().string()},
      {"out_dir", (prepared_dir().parent_path() / out).string()},
      {"model_kind", to_string(kind)},
      {"n_nodes", "3"},
      {"rounds", "2"},
      {"local_epochs", "1"},
      {"batch_size", "64"},
      {"d_model", "8"},
      {"heads", "2"},
      {"blocks", "1"},
      {"embed_channels", "7"},
      {"ff_hidden", "8"},
      {"mlp_hidden", "16"}};
  return load_run_config("", o);
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("run config parsing") {
  const auto c = load_run_config("# comment\nrounds = 3\nbase_lr=0.01\nmlp_hidden = 10, 20\n\n");
  CHECK(c.fed.rounds == 3);
  CHECK(c.fed.base_lr == 0.01);
  CHECK(c.model.mlp_hidden == std::vector<std::size_t>{10, 20});
  CHECK(c.fed.n_nodes == 5);

  const auto flagged = load_run_config("rounds = 3\nseed = 1\n", {{"rounds", "7"}});
  CHECK(flagged.fed.rounds == 7);
  CHECK(flagged.model.seed == 1);

  const auto again = load_run_config(c.to_text());
  CHECK(again.to_text() == c.to_text());
}

TEST_CASE("run config reports every problem at once") {
  try {
    load_run_config("rounds = many\ncolour = blue\nheads = 3\nlr_gamma = 1.5\nnot a pair\n");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const char* needle : {"rounds", "colour", "heads", "lr_gamma", "line 5"})
      CHECK_MESSAGE(msg.find(needle) != std::string::npos, needle);
  }
  CHECK_THROWS_AS(load_run_config("", {{"subsample", "0"}}), ConfigError);
  CHECK_THROWS_AS(load_run_config("model_kind = svm\n"), ConfigError);
}

TEST_CASE("shipped presets load") {
  for (const char* name : {"full.cfg", "smoke.cfg"}) {
    const auto c = load_run_config(read_file(fs::path(FETFIDS_SOURCE_DIR) / "configs" / name));
    CHECK(c.model_spec().fetfids.d_model == 16);
  }
  const auto full = load_run_config(read_file(fs::path(FETFIDS_SOURCE_DIR) / "configs" / "full.cfg"));
  CHECK(full.fed.rounds == 20);
  CHECK(full.fed.local_epochs == 20);
  CHECK(full.fed.n_nodes == 5);
  CHECK(full.fed.lr_gamma == 0.7);
  CHECK(FetFidsModel(full.model).param_count() == FetFidsModel(FetFidsConfig{}).param_count());
}

TEST_CASE("prepare") {
  const auto root = fixture::scratch_dir("prepare");
  write_file_atomic(root / "corpus.txt", synthetic_nslkdd(500, 8));
  PrepareOptions o;
  o.input = root / "corpus.txt";
  o.out = root / "a";
  o.seed = 4;
  const auto s = prepare_data(o);
  CHECK(s.records == 500);
  for (const char* f : {"train.csv", "val.csv", "test.csv", "distribution.csv", "encoder.txt", "nodes/node4.txt"})
    CHECK_MESSAGE(fs::exists(o.out / f), f);

  SUBCASE("deterministic") {
    o.out = root / "b";
    prepare_data(o);
    for (const char* f : {"train.csv", "val.csv", "test.csv", "distribution.csv", "encoder.txt", "nodes/node2.txt"})
      CHECK(read_file(root / "a" / f) == read_file(root / "b" / f));
  }
  SUBCASE("missing input leaves nothing behind") {
    o.input = root / "absent.txt";
    o.out = root / "c";
    CHECK_THROWS(prepare_data(o));
    CHECK_FALSE(fs::exists(root / "c"));
  }
  SUBCASE("a bad line leaves nothing behind") {
    write_file_atomic(root / "bad.txt", synthetic_nslkdd(20, 1) + "1,2,3\n");
    o.input = root / "bad.txt";
    o.out = root / "d";
    CHECK_THROWS_AS(prepare_data(o), ParseError);
    CHECK_FALSE(fs::exists(root / "d"));
  }
  SUBCASE("node manifests partition the training split") {
    const auto data = load_prepared(load_run_config("", {{"data_dir", (root / "a").string()}}));
    std::size_t rows = 0;
    for (const auto& n : data.nodes) rows += n.examples.size();
    CHECK(rows == data.train.size());
    CHECK(data.train.size() + data.val.size() + data.test.size() == 500);
  }
  SUBCASE("training without prepared data is a config error") {
    auto cfg = load_run_config("", {{"data_dir", (root / "nowhere").string()}});
    CHECK_THROWS_AS(load_prepared(cfg), ConfigError);
  }
}

TEST_CASE("train, then eval the checkpoint") {
  const auto cfg = tiny_run("run_a");
  const auto result = train_run(cfg);
  const fs::path out(cfg.out_dir);
  for (const char* f : {"config.txt", "rounds.csv", "timing.csv", "final.ckpt", "metrics_test.txt"})
    CHECK_MESSAGE(fs::exists(out / f), f);

  const auto rows = read_file(out / "rounds.csv");
  CHECK(std::count(rows.begin(), rows.end(), '\n') == 3);
  const auto last = split_csv(last_line(rows));
  REQUIRE(last.size() == 1 + 3 + 5);
  CHECK(last.back() == "0");

  const auto reloaded = load_run_config(read_file(out / "config.txt"));
  const auto e1 = eval_run(out / "final.ckpt", cfg.data_dir, reloaded);
  CHECK(std::abs(100.0 * e1.test.accuracy - std::stod(last[4])) < 1e-9);
  CHECK(std::abs(100.0 * e1.test.precision_macro - std::stod(last[5])) < 1e-9);
  CHECK(std::abs(100.0 * e1.test.recall_macro - std::stod(last[6])) < 1e-9);
  CHECK(std::abs(100.0 * e1.test.f1_macro - std::stod(last[7])) < 1e-9);
  const auto e2 = eval_run(out / "final.ckpt", cfg.data_dir, reloaded);
  CHECK(e1.val.to_key_value() == e2.val.to_key_value());
  CHECK(e1.test.to_key_value() == e2.test.to_key_value());

  SUBCASE("same config, same bytes") {
    auto again = cfg;
    again.out_dir = (prepared_dir().parent_path() / "run_b").string();
    train_run(again);
    CHECK(read_file(out / "rounds.csv") == read_file(fs::path(again.out_dir) / "rounds.csv"));
    CHECK(read_file(out / "final.ckpt") == read_file(fs::path(again.out_dir) / "final.ckpt"));
  }
  SUBCASE("checkpoint from another architecture") {
    auto other = reloaded;
    other.model.ff_hidden = 9;
    CHECK_THROWS_AS(eval_run(out / "final.ckpt", cfg.data_dir, other), IncompatibleCheckpointError);
  }
}

TEST_CASE("mlr runs through the same harness") {
  const auto cfg = tiny_run("run_mlr", ModelKind::mlr);
  const auto r = train_run(cfg);
  CHECK(r.rounds.size() == 2);
  CHECK(r.final_weights.trainable_count() == 210);
  const auto e = eval_run(fs::path(cfg.out_dir) / "final.ckpt", cfg.data_dir, cfg);
  CHECK(e.test.accuracy == r.rounds.back().test.accuracy);
}

TEST_CASE("inspect") {
  auto mlr = load_run_config("model_kind = mlr\n");
  const auto m = inspect_run(mlr, 200);
  CHECK(m.params == 210);
  CHECK(m.flops == 430);
  CHECK(m.calls == 200);
  CHECK(m.median_us > 0.0);
  CHECK(m.p99_us >= m.median_us);
  const auto f = inspect_run(load_run_config(""), 20);
  CHECK(f.params == 116554);
  CHECK_THROWS_AS(inspect_run(mlr, 0), ConfigError);
}

TEST_CASE("metrics table") {
  MetricsReport r;
  r.accuracy = 0.77;
  r.precision_macro = 0.9747;
  r.recall_macro = 0.6466;
  r.f1_macro = 0.7773;
  const auto t = metrics_table({{"FetFIDS", r}});
  CHECK(t.find("Model") != std::string::npos);
  CHECK(t.find("77.00") != std::string::npos);
  CHECK(t.find("97.47") != std::string::npos);
  CHECK(t.find("64.66") != std::string::npos);
  CHECK(t.find("77.73") != std::string::npos);
}

}  // TEST_SUITE
