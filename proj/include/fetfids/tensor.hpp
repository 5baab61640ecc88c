#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fetfids {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles with an explicit shape.
///
/// A default-constructed Tensor is empty (rank 0, no storage) and is used as
/// the "not populated" marker for gradient buffers.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  // 2-D element access; rows/cols refer to the last two axes flattened.
  double& at(std::size_t i, std::size_t j) noexcept { return data_[i * shape_.back() + j]; }
  double at(std::size_t i, std::size_t j) const noexcept { return data_[i * shape_.back() + j]; }

  std::size_t rows() const;
  std::size_t cols() const;

  /// Reinterprets the storage with a new shape of equal element count.
  void reshape(Shape shape);
  Tensor reshaped(Shape shape) const;

  void fill(double value);
  bool all_finite() const noexcept;

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  /// Bitwise equality of shape and payload.
  bool identical(const Tensor& other) const noexcept;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Largest absolute entrywise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace fetfids
