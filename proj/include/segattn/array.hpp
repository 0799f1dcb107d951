#pragma once

#include <Eigen/Dense>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "segattn/check.hpp"
#include "segattn/rng.hpp"

namespace segattn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

// Dense n-d array, row-major logical indexing over flat Eigen storage.
template <typename Scalar>
class Array {
public:
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using VecMap = Eigen::Map<Vec>;
  using ConstVecMap = Eigen::Map<const Vec>;
  using MatMap = Eigen::Map<Mat>;
  using ConstMatMap = Eigen::Map<const Mat>;

  Array() = default;
  explicit Array(Shape shape) : shape_(std::move(shape)) {
    data_.setZero(shape_size(shape_));
  }
  Array(Shape shape, Scalar fill) : shape_(std::move(shape)) {
    data_.setConstant(shape_size(shape_), fill);
  }
  Array(Shape shape, std::initializer_list<Scalar> values)
      : shape_(std::move(shape)) {
    SEGATTN_CHECK(static_cast<Index>(values.size()) == shape_size(shape_),
                  "initializer size mismatch for " << shape_str(shape_));
    data_.resize(shape_size(shape_));
    Index i = 0;
    for (Scalar v : values) data_[i++] = v;
  }

  static Array zeros(Shape shape) { return Array(std::move(shape)); }
  static Array full(Shape shape, Scalar v) { return Array(std::move(shape), v); }

  static Array random_normal(Shape shape, Rng& rng, Scalar stddev = Scalar(1),
                             Scalar mean = Scalar(0)) {
    Array a(std::move(shape));
    for (Index i = 0; i < a.size(); ++i)
      a.data_[i] = mean + stddev * static_cast<Scalar>(rng.normal());
    return a;
  }

  static Array random_uniform(Shape shape, Rng& rng, Scalar lo, Scalar hi) {
    Array a(std::move(shape));
    for (Index i = 0; i < a.size(); ++i)
      a.data_[i] = static_cast<Scalar>(rng.uniform(lo, hi));
    return a;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_[static_cast<size_t>(i)]; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& at(Index i, Index j) { return data_[i * dim(1) + j]; }
  Scalar at(Index i, Index j) const { return data_[i * dim(1) + j]; }
  Scalar& at(Index i, Index j, Index k) {
    return data_[(i * dim(1) + j) * dim(2) + k];
  }
  Scalar at(Index i, Index j, Index k) const {
    return data_[(i * dim(1) + j) * dim(2) + k];
  }
  Scalar& at(Index n, Index c, Index h, Index w) {
    return data_[((n * dim(1) + c) * dim(2) + h) * dim(3) + w];
  }
  Scalar at(Index n, Index c, Index h, Index w) const {
    return data_[((n * dim(1) + c) * dim(2) + h) * dim(3) + w];
  }

  VecMap vec() { return VecMap(data_.data(), data_.size()); }
  ConstVecMap vec() const { return ConstVecMap(data_.data(), data_.size()); }

  // 2-D row-major view with explicit dimensions (must cover the whole array).
  MatMap mat(Index rows, Index cols) {
    SEGATTN_CHECK(rows * cols == size(), "mat view size mismatch");
    return MatMap(data_.data(), rows, cols);
  }
  ConstMatMap mat(Index rows, Index cols) const {
    SEGATTN_CHECK(rows * cols == size(), "mat view size mismatch");
    return ConstMatMap(data_.data(), rows, cols);
  }

  // 2-D view of a rank-2 array.
  MatMap mat() { return mat(dim(0), dim(1)); }
  ConstMatMap mat() const { return mat(dim(0), dim(1)); }

  void set_zero() { data_.setZero(); }
  void fill(Scalar v) { data_.setConstant(v); }

  Array reshaped(Shape shape) const {
    SEGATTN_CHECK(shape_size(shape) == size(),
                  "reshape " << shape_str(shape_) << " -> " << shape_str(shape));
    Array out = *this;
    out.shape_ = std::move(shape);
    return out;
  }

  bool same_shape(const Array& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (Index i = 0; i < size(); ++i)
      if (!std::isfinite(static_cast<double>(data_[i]))) return false;
    return true;
  }

  template <typename Other>
  Array<Other> cast() const {
    Array<Other> out(shape_);
    for (Index i = 0; i < size(); ++i)
      out[i] = static_cast<Other>(data_[i]);
    return out;
  }

private:
  template <typename S>
  friend class Array;

  Shape shape_;
  Vec data_;
};

using ArrayF = Array<float>;
using ArrayD = Array<double>;

}  // namespace segattn
