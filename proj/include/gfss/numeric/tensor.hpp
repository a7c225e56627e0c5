// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace gfss {

/// Shape of a dense tensor of rank 0, 1 or 2.
///
/// Rank-0 tensors are scalars (1x1). A rank-1 tensor of length n is laid out
/// as a single row (rows = 1, cols = n), so row-wise ops treat it as one row.
struct Shape {
  int rank = 0;
  std::size_t rows = 1;
  std::size_t cols = 1;

  static Shape scalar() { return {0, 1, 1}; }
  static Shape vector(std::size_t n) { return {1, 1, n}; }
  static Shape matrix(std::size_t r, std::size_t c) { return {2, r, c}; }

  std::size_t numel() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense row-major float64 tensor with value semantics.
class Tensor {
 public:
  Tensor() : Tensor(Shape::scalar()) {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(shape); }
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  /// Nested initializer: `Tensor::from_rows({{1, 2}, {3, 4}})`.
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  int rank() const { return shape_.rank; }
  std::size_t rows() const { return shape_.rows; }
  std::size_t cols() const { return shape_.cols; }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  std::span<const double> row(std::size_t r) const { return {data_.data() + r * shape_.cols, shape_.cols}; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * shape_.cols, shape_.cols}; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_.cols + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_.cols + c]; }

  /// Scalar value; the tensor must hold exactly one element.
  double item() const;
  bool all_finite() const;
  Tensor reshaped(Shape shape) const;
  Tensor transposed() const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Throws ShapeError with `what` unless `a == b`.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

/// Largest absolute elementwise difference. Shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace gfss
