#include "splab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "splab/error.hpp"

namespace splab {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
  for (auto e : shape)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != shape_numel(shape_))
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > shape_.at(0)) throw ArgumentError("bad row slice");
  const std::size_t row = data_.size() / shape_[0];
  Shape s = shape_;
  s[0] = end - begin;
  std::vector<double> d(data_.begin() + static_cast<std::ptrdiff_t>(begin * row),
                        data_.begin() + static_cast<std::ptrdiff_t>(end * row));
  return Tensor(std::move(s), std::move(d));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> rows) const {
  if (rows.empty()) throw ArgumentError("gather of zero rows");
  const std::size_t row = data_.size() / shape_.at(0);
  Shape s = shape_;
  s[0] = rows.size();
  std::vector<double> d(rows.size() * row);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= shape_[0]) throw ArgumentError("gather row out of range");
    std::memcpy(d.data() + i * row, data_.data() + rows[i] * row, row * sizeof(double));
  }
  return Tensor(std::move(s), std::move(d));
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace splab
