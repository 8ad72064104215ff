#pragma once

#include "cbmi/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace cbmi {

/// Inverse square-root schedule with linear warmup:
///   base_lr * min(step^-1/2, step * warmup^-3/2),  step >= 1.
inline double lr_schedule(std::int64_t step, double base_lr, std::int64_t warmup) {
  if (step < 1) throw std::invalid_argument("lr_schedule: step must be >= 1");
  if (warmup < 1) throw std::invalid_argument("lr_schedule: warmup must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return base_lr * std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

template <typename Scalar>
struct OptimizerState {
  std::vector<Matrix<Scalar>> first;   // one per parameter, in visit order
  std::vector<Matrix<Scalar>> second;
  std::int64_t step = 0;
  AdamHyper hyper;

  void reset() {
    for (auto& m : first) m.setZero();
    for (auto& m : second) m.setZero();
    step = 0;
  }
};

template <typename Scalar>
OptimizerState<Scalar> make_optimizer_state(std::span<Tensor<Scalar>* const> params, AdamHyper hyper) {
  OptimizerState<Scalar> s;
  s.hyper = hyper;
  for (const auto* p : params) {
    s.first.push_back(Matrix<Scalar>::Zero(p->rows(), p->cols()));
    s.second.push_back(Matrix<Scalar>::Zero(p->rows(), p->cols()));
  }
  return s;
}

/// Global L2 norm of all parameter gradients.
template <typename Scalar>
double grad_norm(std::span<Tensor<Scalar>* const> params) {
  double sq = 0.0;
  for (const auto* p : params)
    if (p->grad().size() > 0) sq += p->grad().template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

/// Rescales gradients so their global norm is at most max_norm (0 disables).
template <typename Scalar>
double clip_grad_norm(std::span<Tensor<Scalar>* const> params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const Scalar f = static_cast<Scalar>(max_norm / (norm + 1e-6));
    for (auto* p : params) p->grad() *= f;
  }
  return norm;
}

/// One bias-corrected Adam step over every parameter.
template <typename Scalar>
void adam_update(std::span<Tensor<Scalar>* const> params, OptimizerState<Scalar>& state, double lr) {
  if (state.first.size() != params.size()) throw std::invalid_argument("adam_update: state/parameter count mismatch");
  ++state.step;
  const double b1 = state.hyper.beta1, b2 = state.hyper.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const Scalar step_size = static_cast<Scalar>(lr / c1);
  const Scalar inv_c2 = static_cast<Scalar>(1.0 / c2);
  const Scalar eps = static_cast<Scalar>(state.hyper.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<Scalar>& p = *params[i];
    if (p.grad().size() == 0) continue;
    auto& m = state.first[i];
    auto& v = state.second[i];
    if (m.rows() != p.rows() || m.cols() != p.cols())
      throw std::invalid_argument("adam_update: moment shape does not match parameter");
    m = Scalar(b1) * m + Scalar(1.0 - b1) * p.grad();
    v = Scalar(b2) * v + Scalar(1.0 - b2) * p.grad().cwiseAbs2();
    p.value().array() -= step_size * m.array() / ((v.array() * inv_c2).sqrt() + eps);
  }
}

}  // namespace cbmi
