#pragma once

#include "cbmi/random.hpp"
#include "cbmi/tape.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbmi {

inline constexpr TokenId kPadId = 0;

/// Contiguous run of rows belonging to one sentence in a packed batch.
struct Segment {
  Index offset = 0;
  Index length = 0;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(op) + ": shape mismatch [" + std::to_string(a.rows()) + ", " +
              std::to_string(a.cols()) + "] vs [" + std::to_string(b.rows()) + ", " +
              std::to_string(b.cols()) + "]");
}

template <typename Scalar>
void check_finite_rows(const Matrix<Scalar>& x, const char* op) {
  for (Index r = 0; r < x.rows(); ++r)
    if (!x.row(r).allFinite())
      throw std::domain_error(std::string(op) + ": non-finite input in row " + std::to_string(r));
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix<Scalar> out = a.value() * b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (t.needs_grad(a)) t.grad(a).noalias() += g * b.value().transpose();
    if (t.needs_grad(b)) t.grad(b).noalias() += a.value().transpose() * g;
  });
}

/// x * weight + bias, with weight stored [in, out] and bias [1, out].
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  detail::require(x.cols() == weight.rows(), "linear: input width does not match weight rows");
  detail::require(bias.rows() == 1 && bias.cols() == weight.cols(), "linear: bias shape");
  Matrix<Scalar> out = x.value() * weight.value();
  out.rowwise() += bias.value().row(0);
  return x.tape().record(std::move(out), {x, weight, bias},
                         [x, weight, bias](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                           if (t.needs_grad(x)) t.grad(x).noalias() += g * weight.value().transpose();
                           if (t.needs_grad(weight)) t.grad(weight).noalias() += x.value().transpose() * g;
                           if (t.needs_grad(bias)) t.grad(bias) += g.colwise().sum();
                         });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  Matrix<Scalar> out = a.value() + b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (t.needs_grad(a)) t.grad(a) += g;
    if (t.needs_grad(b)) t.grad(b) += g;
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
  Matrix<Scalar> out = a.value() * factor;
  return a.tape().record(std::move(out), {a}, [a, factor](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.grad(a) += g * factor;
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record(std::move(out), {a}, [a](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.grad(a).array() += g(0, 0);
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  Matrix<Scalar> out = a.value().cwiseMax(Scalar(0));
  return a.tape().record(std::move(out), {a}, [a](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.grad(a).array() += (a.value().array() > Scalar(0)).select(g.array(), Scalar(0));
  });
}

/// Inverted dropout. Identity when rate is zero or no generator is supplied.
template <typename Scalar>
Var<Scalar> dropout(const Var<Scalar>& a, double rate, Rng* rng) {
  if (rate <= 0.0 || rng == nullptr) return a;
  detail::require(rate < 1.0, "dropout: rate must be < 1");
  const Scalar keep_scale = Scalar(1.0 / (1.0 - rate));
  auto mask = std::make_shared<Matrix<Scalar>>(a.rows(), a.cols());
  for (Index i = 0; i < mask->size(); ++i)
    mask->data()[i] = rng->uniform() < rate ? Scalar(0) : keep_scale;
  Matrix<Scalar> out = a.value().cwiseProduct(*mask);
  return a.tape().record(std::move(out), {a}, [a, mask](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.grad(a) += g.cwiseProduct(*mask);
  });
}

/// Row-wise layer normalization with population variance and eps inside the
/// square root, followed by an elementwise affine map.
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gain, const Var<Scalar>& bias,
                       Scalar eps = Scalar(1e-5)) {
  const Index dim = x.cols();
  detail::require(dim >= 1, "layer_norm: dim must be >= 1");
  detail::require(gain.rows() == 1 && gain.cols() == dim && bias.rows() == 1 && bias.cols() == dim,
                  "layer_norm: gain/bias shape");
  auto normalized = std::make_shared<Matrix<Scalar>>(x.rows(), dim);
  auto inv_std = std::make_shared<RowVector<Scalar>>(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const auto row = x.value().row(r).array();
    const Scalar mean = row.mean();
    const Scalar var = (row - mean).square().mean();
    const Scalar is = Scalar(1) / std::sqrt(var + eps);
    (*inv_std)(r) = is;
    normalized->row(r) = (row - mean) * is;
  }
  Matrix<Scalar> out = normalized->array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, normalized, inv_std, dim](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        if (t.needs_grad(gain)) t.grad(gain) += g.cwiseProduct(*normalized).colwise().sum();
        if (t.needs_grad(bias)) t.grad(bias) += g.colwise().sum();
        if (!t.needs_grad(x)) return;
        Matrix<Scalar>& gx = t.grad(x);
        for (Index r = 0; r < g.rows(); ++r) {
          const RowVector<Scalar> dxhat = g.row(r).cwiseProduct(gain.value().row(0));
          const Scalar mean_d = dxhat.mean();
          const Scalar mean_dx = dxhat.dot(normalized->row(r)) / Scalar(dim);
          gx.row(r).array() +=
              (*inv_std)(r) * (dxhat.array() - mean_d - normalized->row(r).array() * mean_dx);
        }
      });
}

template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& x) {
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> log_softmax_rows(const Matrix<Scalar>& x) {
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.row(r).maxCoeff();
    const Scalar lse = m + std::log((x.row(r).array() - m).exp().sum());
    out.row(r) = x.row(r).array() - lse;
  }
  return out;
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& logits) {
  detail::check_finite_rows(logits.value(), "softmax");
  auto probs = std::make_shared<Matrix<Scalar>>(softmax_rows(logits.value()));
  Matrix<Scalar> out = *probs;
  return logits.tape().record(std::move(out), {logits},
                              [logits, probs](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                                const auto dot = g.cwiseProduct(*probs).rowwise().sum();
                                t.grad(logits).array() +=
                                    probs->array() * (g.colwise() - dot).array();
                              });
}

template <typename Scalar>
Var<Scalar> log_softmax(const Var<Scalar>& logits) {
  detail::check_finite_rows(logits.value(), "log_softmax");
  Matrix<Scalar> out = log_softmax_rows(logits.value());
  auto probs = std::make_shared<Matrix<Scalar>>(out.array().exp().matrix());
  return logits.tape().record(std::move(out), {logits},
                              [logits, probs](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                                const auto total = g.rowwise().sum();
                                Matrix<Scalar>& gl = t.grad(logits);
                                for (Index r = 0; r < g.rows(); ++r)
                                  gl.row(r) += g.row(r) - probs->row(r) * total(r);
                              });
}

/// Gathers rows of an embedding table.
template <typename Scalar>
Var<Scalar> embedding(const Var<Scalar>& table, std::span<const TokenId> ids) {
  const Index vocab = table.rows();
  Matrix<Scalar> out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab)
      throw std::out_of_range("embedding: token id " + std::to_string(ids[i]) +
                              " outside vocabulary of size " + std::to_string(vocab));
    out.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  auto saved = std::make_shared<std::vector<TokenId>>(ids.begin(), ids.end());
  return table.tape().record(std::move(out), {table},
                             [table, saved](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                               Matrix<Scalar>& gt = t.grad(table);
                               for (std::size_t i = 0; i < saved->size(); ++i)
                                 gt.row((*saved)[i]) += g.row(static_cast<Index>(i));
                             });
}

/// Multi-head scaled dot-product attention over packed sentences.
///
/// Query rows of sentence b attend only to key rows of the same sentence
/// (query_segments[b] / key_segments[b]). With `causal`, query position i
/// sees keys 0..i. Attention dropout is applied to the probabilities.
template <typename Scalar>
Var<Scalar> attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v,
                      std::span<const Segment> query_segments, std::span<const Segment> key_segments,
                      int heads, bool causal, double dropout_rate = 0.0, Rng* rng = nullptr) {
  const Index dim = q.cols();
  detail::require(heads >= 1 && dim % heads == 0, "attention: dim not divisible by heads");
  detail::require(k.cols() == dim && v.cols() == dim && k.rows() == v.rows(),
                  "attention: q/k/v shapes");
  detail::require(query_segments.size() == key_segments.size(), "attention: segment count mismatch");
  const Index head_dim = dim / heads;
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(Scalar(head_dim));
  const bool use_dropout = dropout_rate > 0.0 && rng != nullptr;
  const Scalar keep_scale = use_dropout ? Scalar(1.0 / (1.0 - dropout_rate)) : Scalar(1);

  struct Saved {
    std::vector<Segment> qs, ks;
    std::vector<Matrix<Scalar>> probs;  // per (segment, head), pre-dropout
    std::vector<Matrix<Scalar>> masks;  // per (segment, head), scaled keep mask
  };
  auto saved = std::make_shared<Saved>();
  saved->qs.assign(query_segments.begin(), query_segments.end());
  saved->ks.assign(key_segments.begin(), key_segments.end());
  saved->probs.reserve(saved->qs.size() * static_cast<std::size_t>(heads));

  Matrix<Scalar> out = Matrix<Scalar>::Zero(q.rows(), dim);
  const auto& Q = q.value();
  const auto& K = k.value();
  const auto& V = v.value();
  for (std::size_t b = 0; b < saved->qs.size(); ++b) {
    const Segment qs = saved->qs[b];
    const Segment ks = saved->ks[b];
    detail::require(qs.offset + qs.length <= Q.rows() && ks.offset + ks.length <= K.rows(),
                    "attention: segment out of range");
    for (int h = 0; h < heads; ++h) {
      const Index c0 = h * head_dim;
      Matrix<Scalar> scores = Q.block(qs.offset, c0, qs.length, head_dim) *
                              K.block(ks.offset, c0, ks.length, head_dim).transpose();
      scores *= inv_sqrt;
      Matrix<Scalar> p(qs.length, ks.length);
      for (Index i = 0; i < qs.length; ++i) {
        const Index visible = causal ? std::min(i + 1, ks.length) : ks.length;
        const Scalar m = scores.row(i).head(visible).maxCoeff();
        p.row(i).head(visible) = (scores.row(i).head(visible).array() - m).exp();
        p.row(i).head(visible) /= p.row(i).head(visible).sum();
        if (visible < ks.length) p.row(i).tail(ks.length - visible).setZero();
      }
      if (use_dropout) {
        Matrix<Scalar> mask(qs.length, ks.length);
        for (Index i = 0; i < mask.size(); ++i)
          mask.data()[i] = rng->uniform() < dropout_rate ? Scalar(0) : keep_scale;
        out.block(qs.offset, c0, qs.length, head_dim).noalias() =
            p.cwiseProduct(mask) * V.block(ks.offset, c0, ks.length, head_dim);
        saved->masks.push_back(std::move(mask));
      } else {
        out.block(qs.offset, c0, qs.length, head_dim).noalias() =
            p * V.block(ks.offset, c0, ks.length, head_dim);
      }
      saved->probs.push_back(std::move(p));
    }
  }

  return q.tape().record(
      std::move(out), {q, k, v},
      [q, k, v, saved, heads, head_dim, inv_sqrt, use_dropout](Tape<Scalar>& t,
                                                               const Matrix<Scalar>& g) {
        const bool gq = t.needs_grad(q), gk = t.needs_grad(k), gv = t.needs_grad(v);
        const auto& Q = q.value();
        const auto& K = k.value();
        const auto& V = v.value();
        std::size_t idx = 0;
        for (std::size_t b = 0; b < saved->qs.size(); ++b) {
          const Segment qs = saved->qs[b];
          const Segment ks = saved->ks[b];
          for (int h = 0; h < heads; ++h, ++idx) {
            const Index c0 = h * head_dim;
            const Matrix<Scalar>& p = saved->probs[idx];
            const auto go = g.block(qs.offset, c0, qs.length, head_dim);
            const auto vh = V.block(ks.offset, c0, ks.length, head_dim);
            Matrix<Scalar> dp = go * vh.transpose();
            if (use_dropout) {
              const Matrix<Scalar>& mask = saved->masks[idx];
              if (gv)
                t.grad(v).block(ks.offset, c0, ks.length, head_dim).noalias() +=
                    p.cwiseProduct(mask).transpose() * go;
              dp = dp.cwiseProduct(mask);
            } else if (gv) {
              t.grad(v).block(ks.offset, c0, ks.length, head_dim).noalias() += p.transpose() * go;
            }
            const auto row_dot = dp.cwiseProduct(p).rowwise().sum();
            Matrix<Scalar> ds = p.array() * (dp.colwise() - row_dot).array();
            ds *= inv_sqrt;
            if (gq)
              t.grad(q).block(qs.offset, c0, qs.length, head_dim).noalias() +=
                  ds * K.block(ks.offset, c0, ks.length, head_dim);
            if (gk)
              t.grad(k).block(ks.offset, c0, ks.length, head_dim).noalias() +=
                  ds.transpose() * Q.block(qs.offset, c0, qs.length, head_dim);
          }
        }
      });
}

/// Sum over rows of w_j * l_j, where l_j is the label-smoothed negative
/// log-likelihood of the gold token:
///   l_j = -(1 - eps) log p(y_j) - (eps / V) sum_v log p(v).
/// Weights are constants. Rows whose target is the pad id contribute nothing.
template <typename Scalar>
Var<Scalar> weighted_cross_entropy(const Var<Scalar>& log_probs, std::span<const TokenId> targets,
                                   std::span<const double> weights, double smoothing) {
  const Index rows = log_probs.rows();
  const Index vocab = log_probs.cols();
  detail::require(static_cast<Index>(targets.size()) == rows,
                  "weighted_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                      std::to_string(rows) + " rows");
  detail::require(static_cast<Index>(weights.size()) == rows,
                  "weighted_cross_entropy: " + std::to_string(weights.size()) + " weights for " +
                      std::to_string(rows) + " rows");
  detail::require(smoothing >= 0.0 && smoothing < 1.0, "weighted_cross_entropy: smoothing outside [0,1)");
  auto w = std::make_shared<std::vector<Scalar>>(targets.size());
  auto tg = std::make_shared<std::vector<TokenId>>(targets.begin(), targets.end());
  const Scalar gold_coef = Scalar(1.0 - smoothing);
  const Scalar uniform_coef = Scalar(smoothing / static_cast<double>(vocab));
  Scalar total(0);
  for (Index r = 0; r < rows; ++r) {
    const TokenId y = targets[static_cast<std::size_t>(r)];
    if (y < 0 || y >= vocab)
      throw std::out_of_range("weighted_cross_entropy: target id " + std::to_string(y) +
                              " outside vocabulary");
    const Scalar wr = y == kPadId ? Scalar(0) : Scalar(weights[static_cast<std::size_t>(r)]);
    (*w)[static_cast<std::size_t>(r)] = wr;
    if (wr == Scalar(0)) continue;
    Scalar loss = -gold_coef * log_probs.value()(r, y);
    if (uniform_coef != Scalar(0)) loss -= uniform_coef * log_probs.value().row(r).sum();
    total += wr * loss;
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = total;
  return log_probs.tape().record(
      std::move(out), {log_probs},
      [log_probs, w, tg, gold_coef, uniform_coef](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        Matrix<Scalar>& gl = t.grad(log_probs);
        const Scalar upstream = g(0, 0);
        for (Index r = 0; r < gl.rows(); ++r) {
          const Scalar wr = (*w)[static_cast<std::size_t>(r)] * upstream;
          if (wr == Scalar(0)) continue;
          if (uniform_coef != Scalar(0)) gl.row(r).array() -= wr * uniform_coef;
          gl(r, (*tg)[static_cast<std::size_t>(r)]) -= wr * gold_coef;
        }
      });
}

/// Sum over rows of w_j * (-sum_v q_jv log p_jv) against a constant target
/// distribution q (teacher / prior).
template <typename Scalar>
Var<Scalar> soft_cross_entropy(const Var<Scalar>& log_probs, const Matrix<Scalar>& target_dist,
                               std::span<const double> weights) {
  detail::require(target_dist.rows() == log_probs.rows() && target_dist.cols() == log_probs.cols(),
                  "soft_cross_entropy: target distribution shape");
  detail::require(static_cast<Index>(weights.size()) == log_probs.rows(),
                  "soft_cross_entropy: weight count");
  auto scaled = std::make_shared<Matrix<Scalar>>(target_dist);
  for (Index r = 0; r < scaled->rows(); ++r) scaled->row(r) *= Scalar(weights[static_cast<std::size_t>(r)]);
  Matrix<Scalar> out(1, 1);
  out(0, 0) = -scaled->cwiseProduct(log_probs.value()).sum();
  return log_probs.tape().record(std::move(out), {log_probs},
                                 [log_probs, scaled](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                                   t.grad(log_probs) -= *scaled * g(0, 0);
                                 });
}

}  // namespace cbmi
