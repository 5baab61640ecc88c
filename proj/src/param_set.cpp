#include "fetfids/param_set.hpp"

#include "fetfids/errors.hpp"

namespace fetfids {

std::size_t ParamSet::add(std::string name, Tensor value, EntryKind kind) {
  if (find(name) != nullptr) throw ConfigError("duplicate parameter name '" + name + "'");
  entries_.push_back(ParamEntry{std::move(name), std::move(value), Tensor{}, kind});
  return entries_.size() - 1;
}

std::size_t ParamSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  throw ConfigError("no parameter named '" + std::string(name) + "'");
}

const ParamEntry* ParamSet::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

Tensor& ParamSet::grad(std::size_t i) {
  auto& e = entries_[i];
  if (!e.grad.same_shape(e.value)) e.grad = Tensor(e.value.shape());
  return e.grad;
}

void ParamSet::zero_grads() {
  for (auto& e : entries_) {
    if (!e.trainable()) continue;
    if (e.grad.same_shape(e.value)) {
      e.grad.fill(0.0);
    } else {
      e.grad = Tensor(e.value.shape());
    }
  }
}

void ParamSet::clear_grads() {
  for (auto& e : entries_) e.grad = Tensor{};
}

std::size_t ParamSet::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable()) n += e.value.size();
  }
  return n;
}

bool ParamSet::structurally_equal(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.kind != b.kind || !a.value.same_shape(b.value)) return false;
  }
  return true;
}

bool ParamSet::values_identical(const ParamSet& other) const {
  if (!structurally_equal(other)) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (!entries_[i].value.identical(other.entries_[i].value)) return false;
  }
  return true;
}

}  // namespace fetfids
