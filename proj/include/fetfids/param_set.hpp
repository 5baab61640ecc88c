#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "fetfids/tensor.hpp"

namespace fetfids {

/// Trainable entries are optimized and counted as parameters. Buffers
/// (BatchNorm running statistics) travel with the weights and are averaged by
/// FedAvg, but have no gradient and are never touched by an optimizer.
enum class EntryKind { trainable, buffer };

struct ParamEntry {
  std::string name;
  Tensor value;
  Tensor grad;  // empty until a backward pass populates it
  EntryKind kind = EntryKind::trainable;

  bool trainable() const noexcept { return kind == EntryKind::trainable; }
};

/// Ordered, uniquely named collection of tensors. Insertion order is the
/// iteration order, so two structurally equal models always line up entry by
/// entry.
class ParamSet {
 public:
  /// Appends an entry and returns its index. Throws ConfigError on duplicate names.
  std::size_t add(std::string name, Tensor value, EntryKind kind = EntryKind::trainable);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  ParamEntry& operator[](std::size_t i) { return entries_[i]; }
  const ParamEntry& operator[](std::size_t i) const { return entries_[i]; }

  auto begin() noexcept { return entries_.begin(); }
  auto end() noexcept { return entries_.end(); }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

  /// Index of the named entry; throws ConfigError if absent.
  std::size_t index_of(std::string_view name) const;
  const ParamEntry* find(std::string_view name) const;

  Tensor& value(std::size_t i) { return entries_[i].value; }
  const Tensor& value(std::size_t i) const { return entries_[i].value; }
  /// Gradient buffer of entry i, allocated (zeroed) on first use.
  Tensor& grad(std::size_t i);

  /// Sets every trainable gradient to zero, allocating where needed.
  void zero_grads();
  /// Drops all gradient buffers.
  void clear_grads();

  /// Number of trainable scalars (buffers excluded).
  std::size_t trainable_count() const;

  /// Same names, kinds and shapes, in the same order.
  bool structurally_equal(const ParamSet& other) const;
  /// Bitwise equality of every value (gradients ignored).
  bool values_identical(const ParamSet& other) const;

 private:
  std::vector<ParamEntry> entries_;
};

}  // namespace fetfids
