#pragma once

#include "cbmi/model.hpp"

#include <cstdint>

namespace cbmi::testing {

inline std::int64_t attention_block(std::int64_t d) { return 4 * (d * d + d); }
inline std::int64_t ffn_block(std::int64_t d, std::int64_t f) { return 2 * d * f + f + d; }
inline std::int64_t norm_block(std::int64_t d) { return 2 * d; }

struct ClosedForm {
  std::int64_t nmt = 0;
  std::int64_t lm = 0;
};

inline ClosedForm closed_form(const ModelConfig& c) {
  const std::int64_t d = c.embed_dim, f = c.ff_dim, vs = c.vocab_size_src, vt = c.vocab_size_tgt;
  const std::int64_t enc_layer = attention_block(d) + ffn_block(d, f) + 2 * norm_block(d);
  const std::int64_t dec_layer = 2 * attention_block(d) + ffn_block(d, f) + 3 * norm_block(d);
  const std::int64_t output = d * vt + vt;
  ClosedForm cf;
  cf.nmt = vs * d + vt * d + c.enc_layers * enc_layer + c.dec_layers * dec_layer + output;
  // The LM layer is a decoder layer without the cross-attention block and its norm.
  cf.lm = vt * d + c.lm_layers * (dec_layer - attention_block(d) - norm_block(d)) + output;
  return cf;
}

}  // namespace cbmi::testing
