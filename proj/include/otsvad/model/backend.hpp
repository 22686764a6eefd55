#pragma once

// Target-speaker detection head. Each (target embedding, frame embedding)
// pair sequence is scored by a per-speaker encoder f_d with weights shared
// across speakers; a joint bidirectional LSTM f_j then refines the scores
// of all speakers together and a sigmoid layer emits probabilities.

#include <random>
#include <string>

#include "otsvad/model/layers.hpp"

namespace otsvad {

// How f_j mixes information across speakers.
//  kSymmetric: every speaker's score sequence is paired with the mean over
//    speakers and run through a shared BiLSTM and a shared 1-unit output
//    layer. The head is then exactly equivariant to bank permutations.
//  kConcat: all N score sequences are concatenated in bank order and a
//    single BiLSTM and N-unit output layer see them at once.
enum class JointMode { kSymmetric, kConcat };

struct BackendConfig {
  std::size_t num_speakers = 4;  // N
  std::size_t embed_dim = 64;    // D
  std::size_t model_dim = 128;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_dim = 512;
  double dropout = 0.1;
  std::size_t score_dim = 32;
  std::size_t lstm_hidden = 64;
  JointMode joint = JointMode::kSymmetric;

  void validate() const {
    if (num_speakers == 0 || embed_dim == 0 || model_dim == 0 || score_dim == 0 || lstm_hidden == 0)
      throw ConfigError("backend: sizes must be positive");
    if (heads == 0 || model_dim % heads != 0) throw ConfigError("backend: heads must divide model_dim");
    if (dropout < 0 || dropout >= 1) throw ConfigError("backend: dropout must lie in [0, 1)");
  }
};

template <class T, class Rng>
void init_backend(ParameterStore<T>& st, const BackendConfig& cfg, Rng& rng) {
  cfg.validate();
  using namespace layers;
  const std::size_t d = cfg.model_dim;
  add_linear(st, "backend/fd/in", 2 * cfg.embed_dim, d, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = "backend/fd/layer" + std::to_string(l);
    add_layer_norm(st, p + "/mhsa_ln", d);
    add_attention(st, p + "/mhsa", d, rng);
    add_layer_norm(st, p + "/ffn_ln", d);
    add_feed_forward(st, p + "/ffn", d, cfg.ffn_dim, rng);
  }
  add_layer_norm(st, "backend/fd/out_ln", d);
  add_linear(st, "backend/fd/score", d, cfg.score_dim, rng);
  if (cfg.joint == JointMode::kSymmetric) {
    add_bilstm(st, "backend/fj/lstm", 2 * cfg.score_dim, cfg.lstm_hidden, rng);
    add_linear(st, "backend/fj/out", 2 * cfg.lstm_hidden, 1, rng);
  } else {
    add_bilstm(st, "backend/fj/lstm", cfg.num_speakers * cfg.score_dim, cfg.lstm_hidden, rng);
    add_linear(st, "backend/fj/out", 2 * cfg.lstm_hidden, cfg.num_speakers, rng);
  }
}

// Replicates target embeddings along time and pairs them with frame
// embeddings: bank [B, N, D], frames [B, T, D] -> [B, N, T, 2D].
template <class T>
Tensor<T> concat_speaker_frames(const Tensor<T>& bank, const Tensor<T>& frames) {
  return ops::speaker_frame_concat(bank, frames);
}

namespace detail {

template <class T>
Tensor<T> maybe_dropout(const Tensor<T>& x, double p, std::mt19937_64* rng) {
  return rng && p > 0 ? ops::dropout(x, p, true, *rng) : x;
}

}  // namespace detail

// Per-speaker scores S' of f_d: block [B, N, T, 2D] -> [B, N, T, score_dim].
// rng enables dropout (training); pass nullptr for inference.
template <class T>
Tensor<T> backend_speaker_scores(ParameterStore<T>& st, const BackendConfig& cfg, const Tensor<T>& block,
                                 std::mt19937_64* rng = nullptr) {
  if (block.rank() != 4 || block.dim(3) != 2 * cfg.embed_dim)
    throw ShapeError("backend: expected block [B, N, T, " + std::to_string(2 * cfg.embed_dim) + "], got " +
                     shape_str(block.shape()));
  using namespace layers;
  const std::size_t B = block.dim(0), N = block.dim(1), Tn = block.dim(2);
  auto x = linear(st, "backend/fd/in", ops::reshape(block, {B * N, Tn, 2 * cfg.embed_dim}));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = "backend/fd/layer" + std::to_string(l);
    auto a = ops::multi_head_attention(layer_norm(st, p + "/mhsa_ln", x), attention(st, p + "/mhsa"), cfg.heads);
    x = ops::add(x, detail::maybe_dropout(a, cfg.dropout, rng));
    auto f = ops::feed_forward(layer_norm(st, p + "/ffn_ln", x), feed_forward(st, p + "/ffn"));
    x = ops::add(x, detail::maybe_dropout(f, cfg.dropout, rng));
  }
  x = linear(st, "backend/fd/score", layer_norm(st, "backend/fd/out_ln", x));
  return ops::reshape(x, {B, N, Tn, cfg.score_dim});
}

// Full head: block [B, N, T, 2D] -> probabilities [B, T, N] in (0, 1).
template <class T>
Tensor<T> backend_forward(ParameterStore<T>& st, const BackendConfig& cfg, const Tensor<T>& block,
                          std::mt19937_64* rng = nullptr) {
  if (block.dim(1) != cfg.num_speakers)
    throw ShapeError("backend: block has " + std::to_string(block.dim(1)) + " speakers, configured N = " +
                     std::to_string(cfg.num_speakers));
  const std::size_t B = block.dim(0), N = block.dim(1), Tn = block.dim(2), F = cfg.score_dim;
  auto s = backend_speaker_scores(st, cfg, block, rng);
  if (cfg.joint == JointMode::kSymmetric) {
    auto h = layers::bilstm(st, "backend/fj/lstm", ops::reshape(ops::concat_speaker_mean(s), {B * N, Tn, 2 * F}));
    auto y = ops::sigmoid(layers::linear(st, "backend/fj/out", h));  // [B*N, T, 1]
    return ops::permute(ops::reshape(y, {B, N, Tn}), {0, 2, 1});
  }
  auto j = ops::reshape(ops::permute(s, {0, 2, 1, 3}), {B, Tn, N * F});
  return ops::sigmoid(layers::linear(st, "backend/fj/out", layers::bilstm(st, "backend/fj/lstm", j)));
}

// Convenience: bank [B, N, D] and frames [B, T, D] -> [B, T, N].
template <class T>
Tensor<T> detect_forward(ParameterStore<T>& st, const BackendConfig& cfg, const Tensor<T>& bank,
                         const Tensor<T>& frames, std::mt19937_64* rng = nullptr) {
  return backend_forward(st, cfg, concat_speaker_frames(bank, frames), rng);
}

}  // namespace otsvad
