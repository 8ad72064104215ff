#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbmi {

using Index = Eigen::Index;
using TokenId = std::int32_t;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatrixXd = Matrix<double>;
using MatrixXf = Matrix<float>;

/// Dense row-major tensor of rank 1 or 2 with an optional gradient buffer.
///
/// Rank-1 tensors of length n are stored as a 1 x n row so every tensor can be
/// viewed as a matrix without copies. The gradient, when allocated, always has
/// the value's shape.
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;

  Tensor() = default;

  explicit Tensor(std::vector<Index> shape, bool requires_grad = false)
      : shape_(std::move(shape)), requires_grad_(requires_grad) {
    validate_rank();
    data_ = Matrix<Scalar>::Zero(rows(), cols());
    if (requires_grad_) grad_ = Matrix<Scalar>::Zero(rows(), cols());
  }

  Tensor(std::vector<Index> shape, Matrix<Scalar> data, bool requires_grad = false)
      : shape_(std::move(shape)), data_(std::move(data)), requires_grad_(requires_grad) {
    validate_rank();
    if (data_.rows() != rows() || data_.cols() != cols())
      throw std::invalid_argument("tensor data does not match shape");
    if (requires_grad_) grad_ = Matrix<Scalar>::Zero(rows(), cols());
  }

  static Tensor from_matrix(Matrix<Scalar> m, bool requires_grad = false) {
    std::vector<Index> shape{m.rows(), m.cols()};
    return Tensor(std::move(shape), std::move(m), requires_grad);
  }

  const std::vector<Index>& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const {
    return std::accumulate(shape_.begin(), shape_.end(), Index{1}, std::multiplies<>());
  }
  Index rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  Index cols() const { return shape_.empty() ? 1 : shape_.back(); }

  Matrix<Scalar>& value() { return data_; }
  const Matrix<Scalar>& value() const { return data_; }

  bool requires_grad() const { return requires_grad_; }
  Matrix<Scalar>& grad() { return grad_; }
  const Matrix<Scalar>& grad() const { return grad_; }
  void zero_grad() {
    if (requires_grad_) grad_.setZero(rows(), cols());
  }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

 private:
  void validate_rank() const {
    if (shape_.empty() || shape_.size() > 2)
      throw std::invalid_argument("tensor rank must be 1 or 2");
    for (Index d : shape_)
      if (d < 0) throw std::invalid_argument("negative tensor dimension");
  }

  std::vector<Index> shape_;
  Matrix<Scalar> data_;
  Matrix<Scalar> grad_;
  bool requires_grad_ = false;
};

}  // namespace cbmi
