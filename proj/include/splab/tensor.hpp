#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace splab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major f64 array. Value semantics; gradients live on graph nodes.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor({1}, std::vector<double>{value}); }
  static Tensor from(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double item() const;

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  /// Rows [begin, end) along the leading axis.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;
  /// Gather leading-axis rows by index.
  Tensor gather_rows(std::span<const std::size_t> rows) const;

  bool all_finite() const noexcept;
  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace splab
