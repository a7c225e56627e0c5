// SPDX-License-Identifier: Apache-2.0
#include "gfss/numeric/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "gfss/errors.hpp"

namespace gfss {

std::string Shape::str() const {
  switch (rank) {
    case 0:
      return "()";
    case 1:
      return "(" + std::to_string(cols) + ")";
    default:
      return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
  }
}

Tensor::Tensor(Shape shape) : shape_(shape), data_(shape.numel(), 0.0) {
  if (shape.rank < 0 || shape.rank > 2) throw ShapeError("tensor rank must be 0, 1 or 2");
  if (shape.rank == 0 && (shape.rows != 1 || shape.cols != 1)) throw ShapeError("scalar shape must be 1x1");
  if (shape.rank == 1 && shape.rows != 1) throw ShapeError("vector shape must have a single row");
}

Tensor::Tensor(Shape shape, std::vector<double> data) : Tensor(shape) {
  if (data.size() != shape.numel()) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " + shape.str());
  }
  data_ = std::move(data);
}

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(shape);
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::scalar(double v) { return Tensor(Shape::scalar(), {v}); }

Tensor Tensor::vector(std::vector<double> v) {
  const auto n = v.size();
  return Tensor(Shape::vector(n), std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor(Shape::matrix(rows, cols), std::move(data));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged rows in Tensor::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return matrix(r, c, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(Shape::matrix(n, n));
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_.str());
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != shape_.numel()) throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  return Tensor(shape, data_);
}

Tensor Tensor::transposed() const {
  Tensor out(Shape::matrix(shape_.cols, shape_.rows));
  for (std::size_t r = 0; r < shape_.rows; ++r)
    for (std::size_t c = 0; c < shape_.cols; ++c) out(c, r) = (*this)(r, c);
  return out;
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace gfss
