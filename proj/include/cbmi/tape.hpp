#pragma once

#include "cbmi/tensor.hpp"

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbmi {

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  const Matrix<Scalar>& value() const { return tape_->value(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }

  Tape<Scalar>& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

/// Linear record of operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so parents always precede their
/// children and a single reverse sweep visits every node once. Leaves created
/// from a Tensor read its value in place and accumulate into its gradient.
/// A tape that is not recording keeps values only (inference mode).
template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using Backward = std::function<void(Tape&, const Mat& grad)>;

  explicit Tape(bool recording = true) : recording_(recording) { nodes_.reserve(512); }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var<Scalar> constant(Mat value) {
    Node node;
    node.value = std::move(value);
    return push(std::move(node));
  }

  Var<Scalar> leaf(Tensor<Scalar>& tensor) {
    Node node;
    node.ref = &tensor.value();
    if (recording_ && tensor.requires_grad()) {
      node.requires_grad = true;
      node.leaf = &tensor;
    }
    return push(std::move(node));
  }

  /// Records an op result. The backward closure is dropped when no input
  /// requires a gradient or the tape is not recording.
  Var<Scalar> record(Mat value, std::initializer_list<Var<Scalar>> parents, Backward backward) {
    Node node;
    node.value = std::move(value);
    if (recording_) {
      for (const auto& p : parents) {
        check_owner(p);
        node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
      }
      if (node.requires_grad) node.backward = std::move(backward);
    }
    return push(std::move(node));
  }

  const Mat& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.ref ? *n.ref : n.value;
  }

  bool needs_grad(const Var<Scalar>& v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient buffer of a node, zero-initialized on first use. Leaves write
  /// straight into the owning tensor's gradient.
  Mat& grad(const Var<Scalar>& v) {
    Node& n = nodes_[v.id()];
    if (n.leaf) {
      if (n.leaf->grad().rows() != n.leaf->rows() || n.leaf->grad().cols() != n.leaf->cols())
        n.leaf->grad() = Mat::Zero(n.leaf->rows(), n.leaf->cols());
      return n.leaf->grad();
    }
    if (!n.has_grad) {
      const Mat& val = value(v.id());
      n.grad = Mat::Zero(val.rows(), val.cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  /// Propagates d(loss)/d(node) to every recorded node and leaf tensor.
  void backward(const Var<Scalar>& loss) {
    check_owner(loss);
    const Mat& v = loss.value();
    if (v.rows() != 1 || v.cols() != 1)
      throw std::invalid_argument("backward requires a scalar loss, got shape [" +
                                  std::to_string(v.rows()) + ", " + std::to_string(v.cols()) + "]");
    if (!nodes_[loss.id()].requires_grad) return;
    grad(loss)(0, 0) += Scalar(1);
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    const Mat* ref = nullptr;
    Tensor<Scalar>* leaf = nullptr;
    Backward backward;
    bool requires_grad = false;
    bool has_grad = false;
  };

  Var<Scalar> push(Node node) {
    nodes_.push_back(std::move(node));
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  void check_owner(const Var<Scalar>& v) const {
    if (&v.tape() != this) throw std::invalid_argument("variable belongs to a different tape");
  }

  std::vector<Node> nodes_;
  bool recording_;
};

}  // namespace cbmi
