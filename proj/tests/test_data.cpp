#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "fetfids/data.hpp"
#include "fetfids/errors.hpp"
#include "fetfids/rng.hpp"
#include "fetfids/synthetic.hpp"

using namespace fetfids;
namespace fs = std::filesystem;

namespace {

const char* kFirstTrainLine =
    "0,tcp,ftp_data,SF,491,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,2,2,0.00,0.00,0.00,0.00,1.00,0.00,0.00,150,25,"
    "0.17,0.03,0.17,0.00,0.00,0.00,0.05,0.00,normal,20";

RawRecord record(const std::string& protocol, double f0, const std::string& label = "normal") {
  RawRecord r;
  r.categorical = {protocol, "http", "SF"};
  r.numeric[0] = f0;
  r.label = label;
  return r;
}

std::vector<int> balanced_labels(std::size_t n) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % kNumClasses);
  return labels;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("parse a KDDTrain+ line") {
  const auto rs = parse_nslkdd_text(kFirstTrainLine);
  REQUIRE(rs.size() == 1);
  const auto& r = rs[0];
  CHECK(r.categorical[0] == "tcp");
  CHECK(r.categorical[1] == "ftp_data");
  CHECK(r.categorical[2] == "SF");
  CHECK(r.numeric[4] == 491);
  CHECK(r.numeric[22] == 2);
  CHECK(r.numeric[31] == 150);
  CHECK(r.numeric[39] == 0.05);
  CHECK(r.label == "normal");
  CHECK(r.difficulty == 20);
  CHECK(parse_nslkdd_text(format_record(r))[0] == r);
}

TEST_CASE("parse edge cases") {
  CHECK(parse_nslkdd_text("").empty());
  CHECK(parse_nslkdd_text("\n\n").size() == 0);

  std::string short_line = kFirstTrainLine;
  for (int drop = 0; drop < 3; ++drop) short_line.erase(short_line.rfind(','));  // 40 fields
  const std::string text = std::string(kFirstTrainLine) + "\n" + short_line + "\n";
  try {
    parse_nslkdd_text(text, "corpus.txt");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("corpus.txt:2") != std::string::npos);
    CHECK(std::string(e.what()).find("40") != std::string::npos);
  }

  std::string bad = kFirstTrainLine;
  bad.replace(bad.find("491"), 3, "4x1");
  CHECK_THROWS_AS(parse_nslkdd_text(bad), ParseError);
  CHECK_THROWS_AS(parse_nslkdd(fs::path("/nonexistent/KDDTrain+.txt")), Error);
}

TEST_CASE("format and parse round trip on generated records") {
  const auto rs = parse_nslkdd_text(synthetic_nslkdd(200, 4));
  REQUIRE(rs.size() == 200);
  for (const auto& r : rs) CHECK(parse_nslkdd_text(format_record(r))[0] == r);
}

TEST_CASE("map_label") {
  CHECK(map_label("normal") == 0);
  CHECK(map_label("neptune") == static_cast<int>(TrafficClass::dos));
  CHECK(map_label("smurf") == static_cast<int>(TrafficClass::dos));
  CHECK(map_label("buffer_overflow") == static_cast<int>(TrafficClass::u2r));
  CHECK(map_label("guess_passwd") == static_cast<int>(TrafficClass::r2l));
  CHECK(map_label("portsweep") == static_cast<int>(TrafficClass::probe));
  CHECK(map_label("normal.") == 0);
  CHECK_THROWS_AS(map_label("xyzzy"), UnknownLabelError);
  CHECK(CategoryTable::builtin().size() >= 39);

  const auto t = CategoryTable::parse("label,category\n# note\nfoo,dos\nbar,probe\n");
  CHECK(t.map("foo") == 1);
  CHECK(t.map("bar") == 4);
  CHECK_THROWS_AS(t.map("normal"), UnknownLabelError);
  CHECK_THROWS_AS(CategoryTable::parse("foo,villain\n"), ConfigError);
}

TEST_CASE("encoder") {
  const std::vector<RawRecord> train = {record("tcp", 0), record("udp", 100), record("tcp", 50)};
  const auto enc = fit_encoder(train);

  SUBCASE("vocabulary in first-seen order") {
    CHECK(enc.vocab[0] == std::vector<std::string>{"tcp", "udp"});
    CHECK(enc.vocab_index(0, "tcp") == 0);
    CHECK(enc.vocab_index(0, "udp") == 1);
    CHECK(enc.vocab_index(0, "icmp") == -1);
  }
  SUBCASE("min-max range") {
    CHECK(enc.encode_features(record("tcp", 50))[0] == 0.5);
    CHECK(enc.encode_features(record("tcp", 100))[0] == 1.0);
    CHECK(enc.encode_features(record("tcp", 250))[0] == 1.0);
    CHECK(enc.encode_features(record("tcp", -7))[0] == 0.0);
  }
  SUBCASE("constant feature encodes to 0") {
    auto a = record("tcp", 1), b = record("tcp", 2);
    a.numeric[5] = b.numeric[5] = 5.0;
    const auto e = fit_encoder(std::vector<RawRecord>{a, b});
    CHECK(e.encode_features(a)[5] == 0.0);
    auto c = a;
    c.numeric[5] = 9.0;
    CHECK(e.encode_features(c)[5] == 0.0);
  }
  SUBCASE("categorical scaling") {
    CHECK(enc.encode_features(record("tcp", 0))[1] == 0.0);
    CHECK(enc.encode_features(record("udp", 0))[1] == 1.0);
    CHECK(enc.encode_features(record("icmp", 0))[1] == 1.0);  // out of vocabulary
    CHECK(enc.encode_features(record("tcp", 0))[2] == 0.0);   // single-entry vocabulary
  }
  CHECK_THROWS_AS(fit_encoder(std::vector<RawRecord>{}), EmptyCorpusError);
}

TEST_CASE("encode stays inside the unit cube") {
  const auto train = parse_nslkdd_text(synthetic_nslkdd(300, 1));
  const auto enc = fit_encoder(train);
  auto others = parse_nslkdd_text(synthetic_nslkdd(300, 2));
  Rng rng(3);
  for (auto& r : others)
    for (std::size_t f = 0; f < kNslKddFeatures; ++f)
      if (!is_categorical_column(f) && rng.unit() < 0.2) r.numeric[f] = rng.uniform(-1e9, 1e9);
  const auto d = encode(others, enc);
  REQUIRE(d.size() == others.size());
  for (double v : d.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("split") {
  const auto labels = balanced_labels(1000);
  const auto a = split_indices(labels, {}, 7);
  CHECK(a.train.size() >= 845);
  CHECK(a.train.size() <= 855);
  CHECK(a.val.size() >= 70);
  CHECK(a.val.size() <= 80);
  CHECK(a.test.size() >= 70);
  CHECK(a.test.size() <= 80);

  const auto b = split_indices(labels, {}, 7);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);
  CHECK(split_indices(labels, {}, 8).train != a.train);

  std::vector<std::size_t> all;
  for (const auto* part : {&a.train, &a.val, &a.test}) {
    CHECK(std::is_sorted(part->begin(), part->end()));
    all.insert(all.end(), part->begin(), part->end());
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expected(1000);
  for (std::size_t i = 0; i < 1000; ++i) expected[i] = i;
  CHECK(all == expected);

  CHECK_THROWS_AS(split_indices(labels, {0.8, 0.1, 0.2}, 0), ConfigError);
  CHECK_THROWS_AS(split_indices(labels, {1.1, -0.05, -0.05}, 0), ConfigError);
}

TEST_CASE("split keeps class proportions") {
  std::vector<int> labels;
  const std::size_t per_class[] = {500, 300, 20, 100, 80};
  for (int c = 0; c < 5; ++c) labels.insert(labels.end(), per_class[c], c);
  const auto s = split_indices(labels, {}, 1);
  std::vector<std::size_t> train_counts(5, 0);
  for (auto i : s.train) ++train_counts[static_cast<std::size_t>(labels[i])];
  for (int c = 0; c < 5; ++c) CHECK(train_counts[c] == static_cast<std::size_t>(std::lround(0.85 * per_class[c])));
}

TEST_CASE("partition") {
  Dataset d(2);
  const auto labels = balanced_labels(100);
  for (std::size_t i = 0; i < 100; ++i) d.push_back(std::vector<double>{double(i), 0.5}, labels[i]);

  SUBCASE("one node is the identity") {
    const auto p = partition(d, 1, 3);
    REQUIRE(p.size() == 1);
    CHECK(p[0].examples == d);
  }
  SUBCASE("five nodes") {
    const auto p = partition(d, 5, 3);
    REQUIRE(p.size() == 5);
    std::set<std::size_t> seen;
    const auto global = d.histogram();
    for (const auto& node : p) {
      CHECK(node.examples.size() >= 19);
      CHECK(node.examples.size() <= 21);
      const auto h = node.examples.histogram();
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        const double share = static_cast<double>(global[c]) / 5.0;
        CHECK(std::abs(static_cast<double>(h[c]) - share) <= 1.0);
      }
      for (auto r : node.rows) CHECK(seen.insert(r).second);
    }
    CHECK(seen.size() == 100);
    const auto again = partition(d, 5, 3);
    for (std::size_t k = 0; k < 5; ++k) CHECK(again[k].rows == p[k].rows);
  }
  SUBCASE("uneven classes") {
    Dataset u(1);
    std::vector<int> uneven;
    const std::size_t counts[] = {53, 31, 2, 9, 17};
    for (int c = 0; c < 5; ++c)
      for (std::size_t i = 0; i < counts[c]; ++i) u.push_back(std::vector<double>{0.0}, c);
    const auto p = partition(u, 5, 9);
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& node : p) {
      lo = std::min(lo, node.examples.size());
      hi = std::max(hi, node.examples.size());
      const auto h = node.examples.histogram();
      for (int c = 0; c < 5; ++c) CHECK(std::abs(double(h[c]) - counts[c] / 5.0) <= 1.0);
    }
    CHECK(hi - lo <= 1);
  }
  CHECK_THROWS_AS(partition(d, 0, 1), ConfigError);
  CHECK_THROWS_AS(partition(d, 101, 1), ConfigError);
}

TEST_CASE("subsample") {
  const auto labels = balanced_labels(1000);
  const auto s = subsample_indices(labels, 0.1, 2);
  CHECK(s.size() == 100);
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(s == subsample_indices(labels, 0.1, 2));
  std::vector<int> rare(50, 0);
  rare.push_back(3);
  const auto r = subsample_indices(rare, 0.1, 1);
  CHECK(std::count_if(r.begin(), r.end(), [&](std::size_t i) { return rare[i] == 3; }) == 1);
  CHECK_THROWS_AS(subsample_indices(labels, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(subsample_indices(labels, 1.5, 1), ConfigError);
}

TEST_CASE("encoded csv round trip") {
  const auto raw = parse_nslkdd_text(synthetic_nslkdd(120, 5));
  const auto d = encode(raw, fit_encoder(raw));
  const auto path = fs::temp_directory_path() / "fetfids_test_data_roundtrip.csv";
  write_encoded_csv(d, path);
  CHECK(read_encoded_csv(path) == d);
  fs::remove(path);
}

}  // TEST_SUITE
