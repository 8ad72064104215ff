#include "cbmi/model.hpp"

#include <stdexcept>

namespace cbmi {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw std::invalid_argument(std::string(name) + " must be positive");
  };
  auto probability = [](double p, const char* name) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument(std::string(name) + " must be in [0, 1)");
  };
  positive(embed_dim, "embed_dim");
  positive(ff_dim, "ff_dim");
  positive(enc_layers, "enc_layers");
  positive(dec_layers, "dec_layers");
  positive(lm_layers, "lm_layers");
  positive(heads, "heads");
  if (embed_dim % heads != 0) throw std::invalid_argument("embed_dim must be divisible by heads");
  probability(dropout_residual, "dropout_residual");
  probability(dropout_attention, "dropout_attention");
  probability(dropout_activation, "dropout_activation");
  positive(vocab_size_src, "vocab_size_src");
  positive(vocab_size_tgt, "vocab_size_tgt");
  if (share_vocab && vocab_size_src != vocab_size_tgt)
    throw std::invalid_argument("share_vocab requires vocab_size_src == vocab_size_tgt");
}

ModelConfig ModelConfig::base() {
  ModelConfig c;
  c.embed_dim = 512;
  c.ff_dim = 2048;
  c.enc_layers = c.dec_layers = c.lm_layers = 6;
  c.heads = 8;
  c.dropout_residual = c.dropout_attention = c.dropout_activation = 0.1;
  return c;
}

ModelConfig ModelConfig::big() {
  ModelConfig c = base();
  c.embed_dim = 1024;
  c.ff_dim = 4096;
  c.heads = 16;
  c.dropout_residual = 0.3;
  return c;
}

namespace {

template <typename Scalar>
Tensor<Scalar> make_embedding(Index rows, Index dim, Rng& rng) {
  Tensor<Scalar> t({rows, dim}, true);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(rng.normal(0.0, stddev));
  return t;
}

template <typename Scalar>
LinearParams<Scalar> make_linear(Index in, Index out, Rng& rng) {
  LinearParams<Scalar> p{Tensor<Scalar>({in, out}, true), Tensor<Scalar>({out}, true)};
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  for (Index i = 0; i < p.weight.size(); ++i)
    p.weight.data()[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
  return p;
}

template <typename Scalar>
LayerNormParams<Scalar> make_norm(Index dim) {
  LayerNormParams<Scalar> p{Tensor<Scalar>({dim}, true), Tensor<Scalar>({dim}, true)};
  p.gain.value().setOnes();
  return p;
}

template <typename Scalar>
AttentionParams<Scalar> make_attention(Index dim, Rng& rng) {
  AttentionParams<Scalar> p;
  p.query = make_linear<Scalar>(dim, dim, rng);
  p.key = make_linear<Scalar>(dim, dim, rng);
  p.value = make_linear<Scalar>(dim, dim, rng);
  p.output = make_linear<Scalar>(dim, dim, rng);
  return p;
}

template <typename Scalar>
FeedForwardParams<Scalar> make_ffn(Index dim, Index ff, Rng& rng) {
  return {make_linear<Scalar>(dim, ff, rng), make_linear<Scalar>(ff, dim, rng)};
}

template <typename Scalar>
SelfAttentionLayerParams<Scalar> make_self_layer(Index dim, Index ff, Rng& rng) {
  SelfAttentionLayerParams<Scalar> p;
  p.self_attn = make_attention<Scalar>(dim, rng);
  p.attn_norm = make_norm<Scalar>(dim);
  p.ffn = make_ffn<Scalar>(dim, ff, rng);
  p.ffn_norm = make_norm<Scalar>(dim);
  return p;
}

template <typename Scalar>
DecoderLayerParams<Scalar> make_decoder_layer(Index dim, Index ff, Rng& rng) {
  DecoderLayerParams<Scalar> p;
  p.self_attn = make_attention<Scalar>(dim, rng);
  p.self_attn_norm = make_norm<Scalar>(dim);
  p.cross_attn = make_attention<Scalar>(dim, rng);
  p.cross_attn_norm = make_norm<Scalar>(dim);
  p.ffn = make_ffn<Scalar>(dim, ff, rng);
  p.ffn_norm = make_norm<Scalar>(dim);
  return p;
}

/// Layers share one forward context: the tape, config and optional dropout source.
template <typename Scalar>
struct Forward {
  Tape<Scalar>& tape;
  const ModelConfig& config;
  Rng* rng;

  Var<Scalar> p(Tensor<Scalar>& t) const { return tape.leaf(t); }

  Var<Scalar> linear(const Var<Scalar>& x, LinearParams<Scalar>& lp) const {
    return cbmi::linear(x, p(lp.weight), p(lp.bias));
  }

  Var<Scalar> norm(const Var<Scalar>& x, LayerNormParams<Scalar>& np) const {
    return layer_norm(x, p(np.gain), p(np.bias));
  }

  Var<Scalar> residual_dropout(const Var<Scalar>& x) const {
    return dropout(x, config.dropout_residual, rng);
  }

  Var<Scalar> mha(const Var<Scalar>& queries, const Var<Scalar>& keys, AttentionParams<Scalar>& ap,
                  const std::vector<Segment>& qsegs, const std::vector<Segment>& ksegs, bool causal) const {
    Var<Scalar> q = linear(queries, ap.query);
    Var<Scalar> k = linear(keys, ap.key);
    Var<Scalar> v = linear(keys, ap.value);
    Var<Scalar> o = attention(q, k, v, std::span<const Segment>(qsegs), std::span<const Segment>(ksegs),
                              config.heads, causal, config.dropout_attention, rng);
    return linear(o, ap.output);
  }

  Var<Scalar> ffn(const Var<Scalar>& x, FeedForwardParams<Scalar>& fp) const {
    Var<Scalar> h = relu(linear(x, fp.inner));
    h = dropout(h, config.dropout_activation, rng);
    return linear(h, fp.outer);
  }

  // PostNorm: x = LN(x + Dropout(Sublayer(x)))
  Var<Scalar> self_layer(Var<Scalar> x, SelfAttentionLayerParams<Scalar>& lp, const std::vector<Segment>& segs,
                         bool causal) const {
    x = norm(add(x, residual_dropout(mha(x, x, lp.self_attn, segs, segs, causal))), lp.attn_norm);
    return norm(add(x, residual_dropout(ffn(x, lp.ffn))), lp.ffn_norm);
  }

  Var<Scalar> decoder_layer(Var<Scalar> x, const Var<Scalar>& memory, DecoderLayerParams<Scalar>& lp,
                            const std::vector<Segment>& tsegs, const std::vector<Segment>& ssegs) const {
    x = norm(add(x, residual_dropout(mha(x, x, lp.self_attn, tsegs, tsegs, true))), lp.self_attn_norm);
    x = norm(add(x, residual_dropout(mha(x, memory, lp.cross_attn, tsegs, ssegs, false))),
             lp.cross_attn_norm);
    return norm(add(x, residual_dropout(ffn(x, lp.ffn))), lp.ffn_norm);
  }

  Var<Scalar> embed(Tensor<Scalar>& table, std::span<const TokenId> ids, const std::vector<Segment>& segs) const {
    Var<Scalar> x = embedding(p(table), ids);
    x = scale(x, static_cast<Scalar>(std::sqrt(static_cast<double>(config.embed_dim))));
    const auto pos = PackedBatch::positions(segs);
    if (pos.size() != ids.size()) throw std::invalid_argument("segments do not cover the token sequence");
    x = add(x, tape.constant(positional_encoding<Scalar>(pos, config.embed_dim)));
    return residual_dropout(x);
  }

  ModelOutput<Scalar> project(const Var<Scalar>& x, LinearParams<Scalar>& out) const {
    Var<Scalar> logits = linear(x, out);
    return {logits, log_softmax(logits)};
  }
};

void check_segments(const std::vector<Segment>& segs, std::size_t tokens, const char* side) {
  Index expected = 0;
  for (const auto& s : segs) {
    if (s.offset != expected || s.length < 1)
      throw std::invalid_argument(std::string(side) + " segments must be contiguous and non-empty");
    expected += s.length;
  }
  if (static_cast<std::size_t>(expected) != tokens)
    throw std::invalid_argument(std::string(side) + " segments do not cover all tokens");
}

}  // namespace

template <typename Scalar>
ModelParams<Scalar> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const Index dim = config.embed_dim, ff = config.ff_dim;
  ModelParams<Scalar> m;
  m.config = config;
  m.nmt.src_embed = make_embedding<Scalar>(config.vocab_size_src, dim, rng);
  m.nmt.tgt_embed = make_embedding<Scalar>(config.vocab_size_tgt, dim, rng);
  for (int i = 0; i < config.enc_layers; ++i) m.nmt.encoder.push_back(make_self_layer<Scalar>(dim, ff, rng));
  for (int i = 0; i < config.dec_layers; ++i) m.nmt.decoder.push_back(make_decoder_layer<Scalar>(dim, ff, rng));
  m.nmt.output = make_linear<Scalar>(dim, config.vocab_size_tgt, rng);
  m.lm.embed = make_embedding<Scalar>(config.vocab_size_tgt, dim, rng);
  for (int i = 0; i < config.lm_layers; ++i) m.lm.layers.push_back(make_self_layer<Scalar>(dim, ff, rng));
  m.lm.output = make_linear<Scalar>(dim, config.vocab_size_tgt, rng);
  return m;
}

template <typename Scalar>
ParamCounts count_params(ModelParams<Scalar>& params) {
  ParamCounts c;
  params.nmt.visit([&](const std::string& name, Tensor<Scalar>& t) {
    c.nmt += t.size();
    if (name.starts_with("nmt.tgt_embed") || name.starts_with("nmt.dec.") || name.starts_with("nmt.output"))
      c.nmt_decoder += t.size();
  });
  params.lm.visit([&](const std::string&, Tensor<Scalar>& t) { c.lm += t.size(); });
  return c;
}

template <typename Scalar>
Matrix<Scalar> positional_encoding(std::span<const Index> positions, int dim) {
  Matrix<Scalar> pe(static_cast<Index>(positions.size()), dim);
  for (std::size_t r = 0; r < positions.size(); ++r) {
    const double pos = static_cast<double>(positions[r]);
    for (int c = 0; c < dim; ++c) {
      const double rate = std::pow(10000.0, -static_cast<double>(c - c % 2) / dim);
      pe(static_cast<Index>(r), c) = static_cast<Scalar>(c % 2 == 0 ? std::sin(pos * rate) : std::cos(pos * rate));
    }
  }
  return pe;
}

template <typename Scalar>
Var<Scalar> nmt_encode(Tape<Scalar>& tape, NmtParams<Scalar>& params, const ModelConfig& config,
                       std::span<const TokenId> src, const std::vector<Segment>& src_segments, Rng* rng) {
  check_segments(src_segments, src.size(), "source");
  Forward<Scalar> f{tape, config, rng};
  Var<Scalar> x = f.embed(params.src_embed, src, src_segments);
  for (auto& layer : params.encoder) x = f.self_layer(x, layer, src_segments, false);
  return x;
}

template <typename Scalar>
ModelOutput<Scalar> nmt_decode(Tape<Scalar>& tape, NmtParams<Scalar>& params, const ModelConfig& config,
                               const Var<Scalar>& memory, const std::vector<Segment>& src_segments,
                               std::span<const TokenId> tgt_in, const std::vector<Segment>& tgt_segments,
                               Rng* rng) {
  check_segments(tgt_segments, tgt_in.size(), "target");
  if (src_segments.size() != tgt_segments.size())
    throw std::invalid_argument("source and target sentence counts differ");
  Forward<Scalar> f{tape, config, rng};
  Var<Scalar> x = f.embed(params.tgt_embed, tgt_in, tgt_segments);
  for (auto& layer : params.decoder) x = f.decoder_layer(x, memory, layer, tgt_segments, src_segments);
  return f.project(x, params.output);
}

template <typename Scalar>
ModelOutput<Scalar> nmt_forward(Tape<Scalar>& tape, NmtParams<Scalar>& params, const ModelConfig& config,
                                const PackedBatch& batch, Rng* rng) {
  Var<Scalar> memory = nmt_encode(tape, params, config, std::span<const TokenId>(batch.src),
                                  batch.src_segments, rng);
  return nmt_decode(tape, params, config, memory, batch.src_segments, std::span<const TokenId>(batch.tgt_in),
                    batch.tgt_segments, rng);
}

template <typename Scalar>
ModelOutput<Scalar> lm_forward(Tape<Scalar>& tape, LmParams<Scalar>& params, const ModelConfig& config,
                               std::span<const TokenId> tgt_in, const std::vector<Segment>& tgt_segments,
                               Rng* rng) {
  check_segments(tgt_segments, tgt_in.size(), "target");
  Forward<Scalar> f{tape, config, rng};
  Var<Scalar> x = f.embed(params.embed, tgt_in, tgt_segments);
  for (auto& layer : params.layers) x = f.self_layer(x, layer, tgt_segments, true);
  return f.project(x, params.output);
}

template <typename Scalar>
Matrix<Scalar> nmt_log_probs(ModelParams<Scalar>& params, std::span<const TokenId> src,
                             std::span<const TokenId> tgt_in) {
  Tape<Scalar> tape(false);
  PackedBatch b;
  b.src.assign(src.begin(), src.end());
  b.tgt_in.assign(tgt_in.begin(), tgt_in.end());
  b.src_segments = {{0, static_cast<Index>(src.size())}};
  b.tgt_segments = {{0, static_cast<Index>(tgt_in.size())}};
  return nmt_forward(tape, params.nmt, params.config, b, nullptr).log_probs.value();
}

template <typename Scalar>
Matrix<Scalar> lm_log_probs(ModelParams<Scalar>& params, std::span<const TokenId> tgt_in) {
  Tape<Scalar> tape(false);
  std::vector<Segment> segs{{0, static_cast<Index>(tgt_in.size())}};
  return lm_forward(tape, params.lm, params.config, tgt_in, segs, nullptr).log_probs.value();
}

#define CBMI_INSTANTIATE_MODEL(S)                                                                        \
  template ModelParams<S> init_params<S>(const ModelConfig&, std::uint64_t);                            \
  template ParamCounts count_params<S>(ModelParams<S>&);                                                 \
  template Matrix<S> positional_encoding<S>(std::span<const Index>, int);                               \
  template Var<S> nmt_encode<S>(Tape<S>&, NmtParams<S>&, const ModelConfig&, std::span<const TokenId>,  \
                                const std::vector<Segment>&, Rng*);                                      \
  template ModelOutput<S> nmt_decode<S>(Tape<S>&, NmtParams<S>&, const ModelConfig&, const Var<S>&,     \
                                        const std::vector<Segment>&, std::span<const TokenId>,          \
                                        const std::vector<Segment>&, Rng*);                              \
  template ModelOutput<S> nmt_forward<S>(Tape<S>&, NmtParams<S>&, const ModelConfig&, const PackedBatch&, \
                                         Rng*);                                                          \
  template ModelOutput<S> lm_forward<S>(Tape<S>&, LmParams<S>&, const ModelConfig&,                     \
                                        std::span<const TokenId>, const std::vector<Segment>&, Rng*);   \
  template Matrix<S> nmt_log_probs<S>(ModelParams<S>&, std::span<const TokenId>, std::span<const TokenId>); \
  template Matrix<S> lm_log_probs<S>(ModelParams<S>&, std::span<const TokenId>);

CBMI_INSTANTIATE_MODEL(float)
CBMI_INSTANTIATE_MODEL(double)

}  // namespace cbmi
