#pragma once

// Streaming state and the pure operations that update it. Frames here are
// the 0.08 s front-end frames; matrices are row-major [frames, N] or
// [frames, D] in flat vectors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "otsvad/core/error.hpp"

namespace otsvad {

enum class Strategy { kBuffer, kAccumulate };

inline Strategy parse_strategy(const std::string& s) {
  if (s == "buffer") return Strategy::kBuffer;
  if (s == "accumulate") return Strategy::kAccumulate;
  throw ConfigError("stream.strategy: expected buffer or accumulate, got " + s);
}

inline const char* strategy_name(Strategy s) { return s == Strategy::kBuffer ? "buffer" : "accumulate"; }

struct StreamConfig {
  double block_length_s = 16.0;
  double block_shift_s = 0.8;
  double thres_upper = 0.7;
  double thres_lower = 0.3;
  std::size_t num_speakers = 4;
  Strategy strategy = Strategy::kBuffer;
  std::size_t buffer_prune_k = 512;  // 0 disables pruning
  double frame_s = 0.08;

  static std::size_t to_frames(double seconds, double frame_s, const char* what) {
    const double f = seconds / frame_s;
    const double r = std::round(f);
    if (!(r >= 1) || std::abs(f - r) > 1e-6)
      throw ConfigError(std::string("stream.") + what + ": must be a positive multiple of the " +
                        std::to_string(frame_s) + " s frame");
    return std::size_t(r);
  }
  std::size_t block_frames() const { return to_frames(block_length_s, frame_s, "block_length_s"); }
  std::size_t shift_frames() const { return to_frames(block_shift_s, frame_s, "block_shift_s"); }

  void validate() const {
    if (block_shift_s > block_length_s + 1e-9) throw ConfigError("stream: block_shift_s must not exceed block_length_s");
    block_frames();
    shift_frames();
    if (!(thres_upper > 0.5 && thres_upper < 1.0)) throw ConfigError("stream.thres_upper: must lie in (0.5, 1)");
    if (!(thres_lower > 0.0 && thres_lower <= 0.5)) throw ConfigError("stream.thres_lower: must lie in (0, 0.5]");
    if (num_speakers == 0) throw ConfigError("stream.num_speakers: must be >= 1");
  }
};

// Masked mean over rows: out[n] = sum_t mask[t,n] * rows[t] / sum_t mask[t,n],
// zero where the mask column is empty. Returns the per-speaker counts.
template <class T>
std::vector<T> masked_row_mean(const T* rows, const char* mask, std::size_t frames, std::size_t N, std::size_t D,
                               T* out) {
  std::vector<T> count(N, T(0));
  std::fill(out, out + N * D, T(0));
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t n = 0; n < N; ++n) {
      if (!mask[t * N + n]) continue;
      count[n] += T(1);
      for (std::size_t d = 0; d < D; ++d) out[n * D + d] += rows[t * D + d];
    }
  for (std::size_t n = 0; n < N; ++n)
    if (count[n] > T(0))
      for (std::size_t d = 0; d < D; ++d) out[n * D + d] /= count[n];
  return count;
}

// Output buffer holding per-frame means of every block prediction covering
// the frame (kept as sums so the mean is exact), per-channel embedding
// buffers (buffer strategy only) and the per-speaker retention mask left by
// pruning.
template <class T>
struct BufferState {
  std::size_t N = 0, D = 0, channels = 1;
  std::vector<T> out;                  // [frames, N] means
  std::vector<T> out_sum;              // [frames, N]
  std::vector<std::vector<T>> emb;     // per channel [frames, D] means
  std::vector<std::vector<T>> emb_sum;
  std::vector<std::uint32_t> coverage;  // [frames]
  std::vector<char> retained;          // [frames, N]
  std::size_t cursor = 0;              // t': frames written so far

  BufferState() = default;
  BufferState(std::size_t n, std::size_t d, std::size_t c, bool keep_embeddings) : N(n), D(d), channels(c) {
    if (keep_embeddings) {
      emb.assign(c, {});
      emb_sum.assign(c, {});
    }
  }

  std::size_t frames() const { return coverage.size(); }
  bool keeps_embeddings() const { return !emb.empty(); }
  T prob(std::size_t t, std::size_t n) const { return out[t * N + n]; }

  void grow(std::size_t frames) {
    if (frames <= coverage.size()) return;
    out.resize(frames * N, T(0));
    out_sum.resize(frames * N, T(0));
    for (auto& e : emb) e.resize(frames * D, T(0));
    for (auto& e : emb_sum) e.resize(frames * D, T(0));
    coverage.resize(frames, 0);
    retained.resize(frames * N, 1);
  }

  // Folds one block starting at `start` into the means. probs [W, N],
  // embeddings per channel [W, D].
  void write(std::size_t start, std::size_t W, const std::vector<T>& probs, const std::vector<std::vector<T>>* embeddings) {
    if (start > cursor) throw StateError("stream: block leaves a gap after the cursor");
    grow(start + W);
    for (std::size_t i = 0; i < W; ++i) {
      const std::size_t t = start + i;
      const T c = T(++coverage[t]);
      for (std::size_t n = 0; n < N; ++n) {
        out_sum[t * N + n] += probs[i * N + n];
        out[t * N + n] = out_sum[t * N + n] / c;
      }
      if (keeps_embeddings() && embeddings)
        for (std::size_t ch = 0; ch < channels; ++ch) {
          T* e = emb[ch].data() + t * D;
          T* es = emb_sum[ch].data() + t * D;
          const T* x = (*embeddings)[ch].data() + i * D;
          for (std::size_t d = 0; d < D; ++d) {
            es[d] += x[d];
            e[d] = es[d] / c;
          }
        }
    }
    cursor = std::max(cursor, start + W);
  }
};

// Keeps, per speaker, at most k retained frames below the cursor with the
// highest buffered probability (ties keep the earlier frame). Pruned
// frames stay pruned. k = 0 leaves the state unchanged.
template <class T>
void prune_buffer(BufferState<T>& st, std::size_t k) {
  if (k == 0) return;
  std::vector<std::size_t> idx;
  for (std::size_t n = 0; n < st.N; ++n) {
    idx.clear();
    for (std::size_t t = 0; t < st.cursor; ++t)
      if (st.retained[t * st.N + n]) idx.push_back(t);
    if (idx.size() <= k) continue;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return st.prob(a, n) > st.prob(b, n); });
    for (std::size_t i = k; i < idx.size(); ++i) st.retained[idx[i] * st.N + n] = 0;
  }
}

// Binarises the buffered outputs on [0, t') at thres_upper (>=), drops
// pruned frames and averages the buffered embeddings of each channel.
// Returns per-channel banks [N, D] and the per-speaker frame counts.
template <class T>
std::vector<std::vector<T>> targets_from_buffer(const BufferState<T>& st, double thres_upper, std::vector<T>* counts = nullptr) {
  if (!st.keeps_embeddings()) throw StateError("stream: buffer has no embeddings");
  const std::size_t F = st.cursor, N = st.N;
  std::vector<char> mask(F * N);
  for (std::size_t t = 0; t < F; ++t)
    for (std::size_t n = 0; n < N; ++n)
      mask[t * N + n] = st.retained[t * N + n] && st.out[t * N + n] >= T(thres_upper);
  std::vector<std::vector<T>> banks(st.channels, std::vector<T>(N * st.D));
  for (std::size_t ch = 0; ch < st.channels; ++ch) {
    auto c = masked_row_mean(st.emb[ch].data(), mask.data(), F, N, st.D, banks[ch].data());
    if (counts && ch == 0) *counts = std::move(c);
  }
  return banks;
}

// Per-speaker running sums of selected embeddings and their frame counts.
template <class T>
struct AccumulatorState {
  std::size_t N = 0, D = 0, channels = 1;
  std::vector<std::vector<T>> sum;  // per channel [N, D]
  std::vector<std::size_t> count;   // [N]

  AccumulatorState() = default;
  AccumulatorState(std::size_t n, std::size_t d, std::size_t c)
      : N(n), D(d), channels(c), sum(c, std::vector<T>(n * d, T(0))), count(n, 0) {}

  // e_n = sum_n / F_n, zero when F_n = 0.
  std::vector<std::vector<T>> targets() const {
    std::vector<std::vector<T>> banks(channels, std::vector<T>(N * D, T(0)));
    for (std::size_t ch = 0; ch < channels; ++ch)
      for (std::size_t n = 0; n < N; ++n)
        if (count[n])
          for (std::size_t d = 0; d < D; ++d) banks[ch][n * D + d] = sum[ch][n * D + d] / T(count[n]);
    return banks;
  }
};

// Adds the embeddings of the selected frames: frames per channel [W, D],
// selected [W, N] in {0,1}.
template <class T>
void accumulate_update(AccumulatorState<T>& st, const std::vector<std::vector<T>>& frames, const std::vector<char>& selected,
                       std::size_t W) {
  if (frames.size() != st.channels || selected.size() != W * st.N)
    throw ShapeError("accumulate_update: shape mismatch");
  for (std::size_t ch = 0; ch < st.channels; ++ch) {
    if (frames[ch].size() != W * st.D) throw ShapeError("accumulate_update: frame matrix shape mismatch");
    for (std::size_t t = 0; t < W; ++t)
      for (std::size_t n = 0; n < st.N; ++n) {
        if (!selected[t * st.N + n]) continue;
        for (std::size_t d = 0; d < st.D; ++d) st.sum[ch][n * st.D + d] += frames[ch][t * st.D + d];
      }
  }
  for (std::size_t t = 0; t < W; ++t)
    for (std::size_t n = 0; n < st.N; ++n) st.count[n] += selected[t * st.N + n] ? 1 : 0;
}

// New-speaker rule on a block output probs [W, N]: when every probability
// of the `active` speakers over the last `tail` rows is below thres_lower
// and a free slot remains, that slot's tail is set to thres_upper and the
// new active count is returned.
template <class T>
std::size_t detect_new_speaker(std::vector<T>& probs, std::size_t W, std::size_t N, std::size_t tail, std::size_t active,
                               double thres_lower, double thres_upper) {
  if (active >= N) return active;
  tail = std::min(tail, W);
  for (std::size_t t = W - tail; t < W; ++t)
    for (std::size_t n = 0; n < active; ++n)
      if (probs[t * N + n] >= T(thres_lower)) return active;
  for (std::size_t t = W - tail; t < W; ++t) probs[t * N + active] = T(thres_upper);
  return active + 1;
}

}  // namespace otsvad
