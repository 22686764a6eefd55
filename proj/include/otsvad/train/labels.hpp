#pragma once

// Frame labels at 0.08 s and the per-sample plumbing around them: block
// splitting, overlap masking, target extraction and left-block replacement.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "otsvad/audio/fbank.hpp"
#include "otsvad/audio/vad.hpp"
#include "otsvad/core/ops.hpp"
#include "otsvad/scoring/rttm.hpp"

namespace otsvad {

struct LabelMatrix {
  std::size_t frames = 0;
  std::size_t speakers = 0;
  std::vector<std::uint8_t> values;  // [frames, speakers]
  double frame_s = 0.08;

  LabelMatrix() = default;
  LabelMatrix(std::size_t t, std::size_t n) : frames(t), speakers(n), values(t * n, 0) {}

  std::uint8_t& at(std::size_t t, std::size_t n) { return values[t * speakers + n]; }
  std::uint8_t at(std::size_t t, std::size_t n) const { return values[t * speakers + n]; }

  std::size_t active_frames(std::size_t n) const {
    std::size_t c = 0;
    for (std::size_t t = 0; t < frames; ++t) c += at(t, n);
    return c;
  }

  LabelMatrix slice(std::size_t t0, std::size_t t1) const {
    if (t0 > t1 || t1 > frames) throw RangeError("labels: slice out of range");
    LabelMatrix out(t1 - t0, speakers);
    out.frame_s = frame_s;
    std::copy(values.begin() + std::ptrdiff_t(t0 * speakers), values.begin() + std::ptrdiff_t(t1 * speakers), out.values.begin());
    return out;
  }

  // Column n of the result is column from[n] of this matrix, or all zero
  // when from[n] < 0.
  LabelMatrix remap(const std::vector<int>& from) const {
    LabelMatrix out(frames, from.size());
    out.frame_s = frame_s;
    for (std::size_t n = 0; n < from.size(); ++n) {
      if (from[n] < 0) continue;
      if (std::size_t(from[n]) >= speakers) throw RangeError("labels: remap column out of range");
      for (std::size_t t = 0; t < frames; ++t) out.at(t, n) = at(t, std::size_t(from[n]));
    }
    return out;
  }

  void validate() const {
    if (values.size() != frames * speakers) throw ShapeError("labels: value count does not match shape");
    for (const auto v : values)
      if (v > 1) throw DataError("labels: entries must be 0 or 1");
  }

  bool operator==(const LabelMatrix&) const = default;
};

// Any frame with two or more active speakers is cleared for every speaker.
inline LabelMatrix mask_overlaps(const LabelMatrix& y) {
  LabelMatrix out = y;
  for (std::size_t t = 0; t < y.frames; ++t) {
    std::size_t c = 0;
    for (std::size_t n = 0; n < y.speakers; ++n) c += y.at(t, n);
    if (c >= 2)
      for (std::size_t n = 0; n < y.speakers; ++n) out.at(t, n) = 0;
  }
  return out;
}

// Rows [0, R) split into two equal halves; odd R gets one zero row appended.
inline std::pair<FeatureMatrix, FeatureMatrix> split_blocks(const FeatureMatrix& x) {
  FeatureMatrix padded = x;
  if (padded.num_frames() % 2) padded.values.resize(padded.values.size() + padded.bins, 0.0f);
  const std::size_t half = padded.num_frames() / 2 * padded.bins;
  FeatureMatrix l = padded, r = padded;
  l.values.assign(padded.values.begin(), padded.values.begin() + std::ptrdiff_t(half));
  r.values.assign(padded.values.begin() + std::ptrdiff_t(half), padded.values.end());
  return {std::move(l), std::move(r)};
}

// Same rule for labels, padding with an all-zero frame.
inline std::pair<LabelMatrix, LabelMatrix> split_labels(const LabelMatrix& y) {
  LabelMatrix padded = y;
  if (padded.frames % 2) {
    ++padded.frames;
    padded.values.resize(padded.frames * padded.speakers, 0);
  }
  const std::size_t h = padded.frames / 2;
  return {padded.slice(0, h), padded.slice(h, padded.frames)};
}

// Target embeddings from masked labels: bank[b, n] is the mean of the frame
// embeddings where masked[b] selects speaker n. Speakers with no selected
// frame get a zero row and active[b * N + n] = 0.
template <class T>
struct TargetBank {
  Tensor<T> bank;                   // [B, N, D]
  std::vector<std::uint8_t> active;  // [B * N]
};

template <class T>
TargetBank<T> extract_target_embeddings(const Tensor<T>& frames, const std::vector<LabelMatrix>& masked) {
  if (frames.rank() != 3 || frames.dim(0) != masked.size()) throw ShapeError("extract_target_embeddings: batch mismatch");
  const std::size_t B = frames.dim(0), Tn = frames.dim(1);
  const std::size_t N = masked.empty() ? 0 : masked[0].speakers;
  std::vector<T> mask(B * Tn * N);
  TargetBank<T> out;
  out.active.assign(B * N, 0);
  for (std::size_t b = 0; b < B; ++b) {
    if (masked[b].frames != Tn || masked[b].speakers != N)
      throw ShapeError("extract_target_embeddings: labels are " + std::to_string(masked[b].frames) + "x" +
                       std::to_string(masked[b].speakers) + ", frames have T=" + std::to_string(Tn));
    for (std::size_t t = 0; t < Tn; ++t)
      for (std::size_t n = 0; n < N; ++n) {
        mask[(b * Tn + t) * N + n] = T(masked[b].at(t, n));
        out.active[b * N + n] |= masked[b].at(t, n);
      }
  }
  out.bank = ops::masked_mean(frames, mask, N);
  return out;
}

// Labels on the silence-removed timeline. Compact feature row r is original
// row map.project(r), active for a speaker when a segment covers the row's
// window centre (the same rule silence removal uses). A 0.08 s frame is
// active when at least half of its rows are.
inline LabelMatrix labels_on_compact_timeline(const std::vector<RttmSegment>& segs,
                                              const std::vector<std::string>& speaker_order, const TimelineMap& map,
                                              std::size_t rows_per_frame = 8, double row_shift_s = 0.01,
                                              double row_length_s = 0.025) {
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < speaker_order.size(); ++i) col[speaker_order[i]] = i;
  const std::size_t rows = map.size(), frames = (rows + rows_per_frame - 1) / rows_per_frame;
  const std::size_t orig = map.empty() ? 0 : map.image().back() + 1;
  std::vector<std::vector<std::uint8_t>> cell(speaker_order.size(), std::vector<std::uint8_t>(orig, 0));
  for (const auto& s : segs) {
    const auto it = col.find(s.speaker);
    if (it == col.end()) continue;
    for (std::size_t o = 0; o < orig; ++o) {
      const double c = frame_center_s(o, row_shift_s, row_length_s);
      if (c >= s.onset_s && c < s.offset_s()) cell[it->second][o] = 1;
    }
  }
  LabelMatrix y(frames, speaker_order.size());
  for (std::size_t j = 0; j < frames; ++j) {
    const std::size_t r0 = j * rows_per_frame, r1 = std::min(rows, r0 + rows_per_frame);
    for (std::size_t n = 0; n < speaker_order.size(); ++n) {
      std::size_t c = 0;
      for (std::size_t r = r0; r < r1; ++r) c += cell[n][map.project(r)];
      y.at(j, n) = 2 * c >= r1 - r0;
    }
  }
  return y;
}

// One half of a training sample.
struct BlockHalf {
  FeatureMatrix features;
  LabelMatrix labels;
};

// With probability p the left half is replaced by a simulated one. The
// simulator is only invoked when a replacement happens.
template <class Sim, class Rng>
bool maybe_replace_left(BlockHalf& left, Sim&& simulate, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("train.replace_p: must lie in [0, 1]");
  std::bernoulli_distribution coin(p);
  if (!coin(rng)) return false;
  left = simulate();
  return true;
}

}  // namespace otsvad
