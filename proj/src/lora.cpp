#include "medrag/lora.hpp"

namespace medrag::lora {

std::int64_t ModelShape::total_params() const {
  std::int64_t n = extra_params;
  for (const auto& m : matrices) n += m.count * m.d_out * m.d_in;
  return n;
}

std::int64_t ModelShape::adapter_params(std::int64_t r) const {
  std::int64_t n = 0;
  for (const auto& m : matrices) {
    if (m.targeted) n += m.count * r * (m.d_out + m.d_in);
  }
  return n;
}

double trainable_fraction(const ModelShape& shape, std::int64_t r) {
  if (r < 1) throw Error(Errc::invalid_argument, "adapter rank must be >= 1");
  bool any = false;
  for (const auto& m : shape.matrices) any = any || m.targeted;
  if (!any) throw Error(Errc::invalid_argument, "model shape has no LoRA-targeted matrices");
  const auto total = shape.total_params();
  if (total <= 0) throw Error(Errc::invalid_argument, "model shape has no parameters");
  return static_cast<double>(shape.adapter_params(r)) / static_cast<double>(total);
}

ModelShape llama2_13b_like_shape() {
  constexpr std::int64_t layers = 40, hidden = 5120, mlp = 13824, vocab = 32000;
  ModelShape s;
  for (const char* proj : {"q_proj", "k_proj", "v_proj", "o_proj"}) {
    s.matrices.push_back({proj, hidden, hidden, true, layers});
  }
  s.matrices.push_back({"gate_proj", mlp, hidden, false, layers});
  s.matrices.push_back({"up_proj", mlp, hidden, false, layers});
  s.matrices.push_back({"down_proj", hidden, mlp, false, layers});
  s.matrices.push_back({"embed_tokens", vocab, hidden, false, 1});
  s.matrices.push_back({"lm_head", vocab, hidden, false, 1});
  // Two RMSNorm vectors per layer plus the final norm.
  s.extra_params = layers * 2 * hidden + hidden;
  return s;
}

}  // namespace medrag::lora
