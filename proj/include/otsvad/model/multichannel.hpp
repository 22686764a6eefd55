#pragma once

// Multi-channel extension: per (frame, speaker) position, self-attention
// across the C channels of the paired embeddings, then an average over
// channels feeds the single-channel detection head.

#include <string>
#include <vector>

#include "otsvad/model/backend.hpp"

namespace otsvad {

struct MultichannelConfig {
  std::size_t layers = 3;
  std::size_t heads = 4;
  std::size_t ffn_dim = 256;

  void validate(std::size_t pair_dim) const {
    if (heads == 0 || pair_dim % heads != 0)
      throw ConfigError("multichannel: heads (" + std::to_string(heads) + ") must divide 2D = " +
                        std::to_string(pair_dim));
  }
};

// Cross-channel layers are pre-norm residual blocks
//   x <- x + MHA(LN(x)),  x <- x + FFN(LN(x))
// whose output projections start at zero. In that state every layer is
// the identity, so the whole multi-channel path reduces exactly to the
// single-channel head for C = 1.
template <class T, class Rng>
void init_multichannel(ParameterStore<T>& st, const MultichannelConfig& cfg, std::size_t embed_dim, Rng& rng) {
  const std::size_t e = 2 * embed_dim;
  cfg.validate(e);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = "multichannel/layer" + std::to_string(l);
    layers::add_layer_norm(st, p + "/mhsa_ln", e);
    layers::add_attention(st, p + "/mhsa", e, rng, true);
    layers::add_layer_norm(st, p + "/ffn_ln", e);
    layers::add_feed_forward(st, p + "/ffn", e, cfg.ffn_dim, rng, true);
  }
}

// Stacks per-channel pair blocks [B, N, T, 2D] into [B, N, T, C, 2D].
template <class T>
Tensor<T> build_channel_stack(const std::vector<Tensor<T>>& banks, const std::vector<Tensor<T>>& frames) {
  if (banks.empty() || banks.size() != frames.size())
    throw ShapeError("multichannel: need one bank per channel and at least one channel");
  std::vector<Tensor<T>> blocks;
  for (std::size_t c = 0; c < banks.size(); ++c) {
    auto g = concat_speaker_frames(banks[c], frames[c]);
    if (c && g.shape() != blocks[0].shape())
      throw ShapeError("multichannel: channel " + std::to_string(c) + " block " + shape_str(g.shape()) +
                       " differs from channel 0 " + shape_str(blocks[0].shape()));
    blocks.push_back(g);
  }
  const Shape s = blocks[0].shape();
  std::vector<Tensor<T>> parts;
  for (auto& g : blocks) parts.push_back(ops::reshape(g, {s[0], s[1], s[2], 1, s[3]}));
  return ops::concat(parts, 3);
}

// stack [B, N, T, C, E] -> same shape. probs, when given, receives the
// attention weights of the last layer laid out [B*N*T, heads, C, C].
template <class T>
Tensor<T> cross_channel_attention(ParameterStore<T>& st, const MultichannelConfig& cfg, const Tensor<T>& stack,
                                  std::vector<T>* probs = nullptr) {
  if (stack.rank() != 5) throw ShapeError("multichannel: expected stack [B, N, T, C, 2D]");
  const Shape s = stack.shape();
  cfg.validate(s[4]);
  auto x = ops::reshape(stack, {s[0] * s[1] * s[2], s[3], s[4]});
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = "multichannel/layer" + std::to_string(l);
    x = ops::add(x, ops::multi_head_attention(layers::layer_norm(st, p + "/mhsa_ln", x),
                                              layers::attention(st, p + "/mhsa"), cfg.heads,
                                              l + 1 == cfg.layers ? probs : nullptr));
    x = ops::add(x, ops::feed_forward(layers::layer_norm(st, p + "/ffn_ln", x), layers::feed_forward(st, p + "/ffn")));
  }
  return ops::reshape(x, s);
}

// [B, N, T, C, E] -> [B, N, T, E].
template <class T>
Tensor<T> channel_average_pool(const Tensor<T>& x) {
  return ops::mean_axis(x, 3);
}

// Per-channel banks [B, N, D] and frames [B, T, D] -> probabilities [B, T, N].
template <class T>
Tensor<T> mc_detect_forward(ParameterStore<T>& st, const MultichannelConfig& mc, const BackendConfig& bc,
                            const std::vector<Tensor<T>>& banks, const std::vector<Tensor<T>>& frames,
                            std::mt19937_64* rng = nullptr) {
  auto pooled = channel_average_pool(cross_channel_attention(st, mc, build_channel_stack(banks, frames)));
  return backend_forward(st, bc, pooled, rng);
}

}  // namespace otsvad
