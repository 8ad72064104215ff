#pragma once

#include "cbmi/batch.hpp"
#include "cbmi/ops.hpp"
#include "cbmi/random.hpp"
#include "cbmi/tape.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace cbmi {

struct ModelConfig {
  int embed_dim = 64;
  int ff_dim = 128;
  int enc_layers = 2;
  int dec_layers = 2;
  int lm_layers = 2;
  int heads = 4;
  double dropout_residual = 0.1;
  double dropout_attention = 0.1;
  double dropout_activation = 0.1;
  int vocab_size_src = 0;
  int vocab_size_tgt = 0;
  bool share_vocab = false;

  /// Throws std::invalid_argument naming the first violated field.
  void validate() const;

  /// Transformer-base sizes (6/6/6 layers, 512 dim, 8 heads, 2048 ff).
  static ModelConfig base();
  /// Transformer-big sizes (6/6/6 layers, 1024 dim, 16 heads, 4096 ff).
  static ModelConfig big();
};

template <typename Scalar>
using ParamVisitor = std::function<void(const std::string& name, Tensor<Scalar>& tensor)>;

template <typename Scalar>
struct LinearParams {
  Tensor<Scalar> weight;  // [in, out]
  Tensor<Scalar> bias;    // [out]

  void visit(const std::string& prefix, const ParamVisitor<Scalar>& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

template <typename Scalar>
struct LayerNormParams {
  Tensor<Scalar> gain;
  Tensor<Scalar> bias;

  void visit(const std::string& prefix, const ParamVisitor<Scalar>& fn) {
    fn(prefix + ".gain", gain);
    fn(prefix + ".bias", bias);
  }
};

template <typename Scalar>
struct AttentionParams {
  LinearParams<Scalar> query, key, value, output;

  void visit(const std::string& prefix, const ParamVisitor<Scalar>& fn) {
    query.visit(prefix + ".q", fn);
    key.visit(prefix + ".k", fn);
    value.visit(prefix + ".v", fn);
    output.visit(prefix + ".o", fn);
  }
};

template <typename Scalar>
struct FeedForwardParams {
  LinearParams<Scalar> inner, outer;

  void visit(const std::string& prefix, const ParamVisitor<Scalar>& fn) {
    inner.visit(prefix + ".fc1", fn);
    outer.visit(prefix + ".fc2", fn);
  }
};

/// Encoder layer; also the language-model layer (self-attention run causally).
template <typename Scalar>
struct SelfAttentionLayerParams {
  AttentionParams<Scalar> self_attn;
  LayerNormParams<Scalar> attn_norm;
  FeedForwardParams<Scalar> ffn;
  LayerNormParams<Scalar> ffn_norm;

  void visit(const std::string& prefix, const ParamVisitor<Scalar>& fn) {
    self_attn.visit(prefix + ".self_attn", fn);
    attn_norm.visit(prefix + ".self_attn_norm", fn);
    ffn.visit(prefix + ".ffn", fn);
    ffn_norm.visit(prefix + ".ffn_norm", fn);
  }
};

template <typename Scalar>
struct DecoderLayerParams {
  AttentionParams<Scalar> self_attn;
  LayerNormParams<Scalar> self_attn_norm;
  AttentionParams<Scalar> cross_attn;
  LayerNormParams<Scalar> cross_attn_norm;
  FeedForwardParams<Scalar> ffn;
  LayerNormParams<Scalar> ffn_norm;

  void visit(const std::string& prefix, const ParamVisitor<Scalar>& fn) {
    self_attn.visit(prefix + ".self_attn", fn);
    self_attn_norm.visit(prefix + ".self_attn_norm", fn);
    cross_attn.visit(prefix + ".cross_attn", fn);
    cross_attn_norm.visit(prefix + ".cross_attn_norm", fn);
    ffn.visit(prefix + ".ffn", fn);
    ffn_norm.visit(prefix + ".ffn_norm", fn);
  }
};

template <typename Scalar>
struct NmtParams {
  Tensor<Scalar> src_embed;  // [vocab_src, dim]
  Tensor<Scalar> tgt_embed;  // [vocab_tgt, dim]
  std::vector<SelfAttentionLayerParams<Scalar>> encoder;
  std::vector<DecoderLayerParams<Scalar>> decoder;
  LinearParams<Scalar> output;  // [dim, vocab_tgt]

  void visit(const ParamVisitor<Scalar>& fn) {
    fn("nmt.src_embed", src_embed);
    fn("nmt.tgt_embed", tgt_embed);
    for (std::size_t i = 0; i < encoder.size(); ++i) encoder[i].visit("nmt.enc." + std::to_string(i), fn);
    for (std::size_t i = 0; i < decoder.size(); ++i) decoder[i].visit("nmt.dec." + std::to_string(i), fn);
    output.visit("nmt.output", fn);
  }
};

/// Target-side language model: the NMT decoder without cross-attention and
/// with its own embedding table.
template <typename Scalar>
struct LmParams {
  Tensor<Scalar> embed;
  std::vector<SelfAttentionLayerParams<Scalar>> layers;
  LinearParams<Scalar> output;

  void visit(const ParamVisitor<Scalar>& fn) {
    fn("lm.embed", embed);
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit("lm.layer." + std::to_string(i), fn);
    output.visit("lm.output", fn);
  }
};

template <typename Scalar>
struct ModelParams {
  ModelConfig config;
  NmtParams<Scalar> nmt;
  LmParams<Scalar> lm;

  void visit(const ParamVisitor<Scalar>& fn) {
    nmt.visit(fn);
    lm.visit(fn);
  }

  void zero_grad() {
    visit([](const std::string&, Tensor<Scalar>& t) { t.zero_grad(); });
  }
};

struct ParamCounts {
  std::int64_t nmt = 0;
  std::int64_t nmt_decoder = 0;  // target embedding + decoder layers + output projection
  std::int64_t lm = 0;
};

/// Deterministic initialization. Embeddings ~ N(0, dim^-1/2); projection
/// weights use Xavier-uniform bounds sqrt(6 / (in + out)); biases zero;
/// layer-norm gains one.
template <typename Scalar>
ModelParams<Scalar> init_params(const ModelConfig& config, std::uint64_t seed);

template <typename Scalar>
ParamCounts count_params(ModelParams<Scalar>& params);

/// Sinusoidal position table, sin on even and cos on odd channels.
template <typename Scalar>
Matrix<Scalar> positional_encoding(std::span<const Index> positions, int dim);

template <typename Scalar>
struct ModelOutput {
  Var<Scalar> logits;
  Var<Scalar> log_probs;
};

/// Dropout is active only when `rng` is non-null (training mode).
template <typename Scalar>
Var<Scalar> nmt_encode(Tape<Scalar>& tape, NmtParams<Scalar>& params, const ModelConfig& config,
                       std::span<const TokenId> src, const std::vector<Segment>& src_segments, Rng* rng);

template <typename Scalar>
ModelOutput<Scalar> nmt_decode(Tape<Scalar>& tape, NmtParams<Scalar>& params, const ModelConfig& config,
                               const Var<Scalar>& memory, const std::vector<Segment>& src_segments,
                               std::span<const TokenId> tgt_in, const std::vector<Segment>& tgt_segments,
                               Rng* rng);

/// Row j holds log p(y_j | y_<j, x) for the packed target rows.
template <typename Scalar>
ModelOutput<Scalar> nmt_forward(Tape<Scalar>& tape, NmtParams<Scalar>& params, const ModelConfig& config,
                                const PackedBatch& batch, Rng* rng);

/// Row j holds log p(y_j | y_<j). Never reads the source side of the batch.
template <typename Scalar>
ModelOutput<Scalar> lm_forward(Tape<Scalar>& tape, LmParams<Scalar>& params, const ModelConfig& config,
                               std::span<const TokenId> tgt_in, const std::vector<Segment>& tgt_segments,
                               Rng* rng);

/// Single-pair inference conveniences returning [N, vocab] log-probabilities.
template <typename Scalar>
Matrix<Scalar> nmt_log_probs(ModelParams<Scalar>& params, std::span<const TokenId> src,
                             std::span<const TokenId> tgt_in);

template <typename Scalar>
Matrix<Scalar> lm_log_probs(ModelParams<Scalar>& params, std::span<const TokenId> tgt_in);

}  // namespace cbmi
