#include <bit>
#include <cstring>
#include <string>

#include "fetfids/errors.hpp"
#include "fetfids/io.hpp"
#include "fetfids/model.hpp"

namespace fetfids {

namespace {

constexpr std::string_view kMagic = "FETFIDS-CKPT-1\n";
constexpr std::size_t kMaxRank = 8;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw CorruptionError("checkpoint truncated at byte " + std::to_string(pos_));
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t config_digest(const Classifier& model) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : model.architecture()) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

void save_params(const Classifier& model, const std::filesystem::path& path) {
  std::string out(kMagic);
  put_u64(out, config_digest(model));
  const auto& params = model.params();
  put_u64(out, params.size());
  for (const auto& e : params) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_u32(out, static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) put_u64(out, d);
    for (double v : e.value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  write_file_atomic(path, out);
}

void load_params(const std::filesystem::path& path, Classifier& model) {
  const std::string bytes = read_file(path);
  Reader r(bytes);
  if (bytes.size() < kMagic.size() || r.take(kMagic.size()) != kMagic) {
    throw CorruptionError("'" + path.string() + "' is not a checkpoint (bad magic)");
  }
  const std::uint64_t digest = r.u64();
  if (digest != config_digest(model)) {
    throw IncompatibleCheckpointError("checkpoint '" + path.string() +
                                      "' was written for a different model configuration");
  }
  const std::uint64_t count = r.u64();
  const auto& current = model.params();
  if (count != current.size()) {
    throw IncompatibleCheckpointError("checkpoint holds " + std::to_string(count) + " tensors, model has " +
                                      std::to_string(current.size()));
  }

  std::vector<Tensor> values;
  values.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    const std::string name(r.take(name_len));
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > kMaxRank) throw CorruptionError("checkpoint record '" + name + "' has invalid rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    const auto& expected = current[i];
    if (name != expected.name || shape != expected.value.shape()) {
      throw IncompatibleCheckpointError("checkpoint record " + std::to_string(i) + " ('" + name + "' " +
                                        shape_str(shape) + ") does not match model entry '" + expected.name + "' " +
                                        shape_str(expected.value.shape()));
    }
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = r.f64();
    values.emplace_back(std::move(shape), std::move(data));
  }
  if (!r.done()) throw CorruptionError("checkpoint '" + path.string() + "' has trailing bytes");

  auto& params = model.params();
  for (std::size_t i = 0; i < values.size(); ++i) params[i].value = std::move(values[i]);
}

std::unique_ptr<Classifier> load_checkpoint(const std::filesystem::path& path, const ModelSpec& spec) {
  auto model = make_model(spec);
  load_params(path, *model);
  return model;
}

}  // namespace fetfids
