#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mocnn/error.hpp"

namespace mocnn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major n-d array.
template <typename Scalar>
class Tensor {
 public:
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, const std::vector<Scalar>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (data_.size() != shape_size(shape_)) {
      throw Error(Errc::ShapeMismatch, "data length does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(Scalar(0)); }

  Tensor& reshape(Shape shape) {
    if (shape_size(shape) != data_.size()) {
      throw Error(Errc::ShapeMismatch,
                  "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
    return *this;
  }

  /// Views the data as rows x cols (rows * cols must equal size()).
  MatrixMap matrix(std::size_t rows, std::size_t cols) {
    check_matrix(rows, cols);
    return MatrixMap(data_.data(), Eigen::Index(rows), Eigen::Index(cols));
  }
  ConstMatrixMap matrix(std::size_t rows, std::size_t cols) const {
    check_matrix(rows, cols);
    return ConstMatrixMap(data_.data(), Eigen::Index(rows), Eigen::Index(cols));
  }
  /// Leading dimension as rows, everything else flattened into columns.
  MatrixMap matrix() { return matrix(shape_.empty() ? 1 : shape_[0], rows_stride()); }
  ConstMatrixMap matrix() const { return matrix(shape_.empty() ? 1 : shape_[0], rows_stride()); }

  /// Copy of item `i` along the leading dimension.
  Tensor slice(std::size_t i) const {
    Shape inner(shape_.begin() + 1, shape_.end());
    const std::size_t n = shape_size(inner);
    Tensor out(std::move(inner));
    std::copy(data_.begin() + i * n, data_.begin() + (i + 1) * n, out.data_.begin());
    return out;
  }
  std::span<const Scalar> row(std::size_t i) const {
    const std::size_t n = rows_stride();
    return std::span<const Scalar>(data_).subspan(i * n, n);
  }
  std::span<Scalar> row(std::size_t i) {
    const std::size_t n = rows_stride();
    return std::span<Scalar>(data_).subspan(i * n, n);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_stride() const { return shape_.empty() ? data_.size() : shape_size(Shape(shape_.begin() + 1, shape_.end())); }
  void check_matrix(std::size_t rows, std::size_t cols) const {
    if (rows * cols != data_.size()) {
      throw Error(Errc::ShapeMismatch, "matrix view " + std::to_string(rows) + "x" +
                                           std::to_string(cols) + " of " + shape_string(shape_));
    }
  }

  Shape shape_;
  // Packet-aligned so vectorized reductions split work identically for every allocation.
  std::vector<Scalar, Eigen::aligned_allocator<Scalar>> data_;
};

using Tensord = Tensor<double>;

/// NaN or Inf anywhere is a hard failure.
template <typename Scalar>
void ensure_finite(const Tensor<Scalar>& t, const std::string& where) {
  if (!t.all_finite()) throw Error(Errc::NonFinite, "non-finite value in " + where);
}

/// Trainable tensor with its gradient accumulator.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<Scalar> v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}

  void zero_grad() { grad.set_zero(); }
};

using Parameterd = Parameter<double>;

}  // namespace mocnn
