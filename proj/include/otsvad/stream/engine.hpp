#pragma once

// Block-wise online inference. Blocks end every m frames; the window grows
// from m to l and then slides. The first block binds slot 0; later blocks
// build targets from the state, run detection, apply the new-speaker rule
// and fold the result into the running-mean output buffer.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "otsvad/audio/fbank.hpp"
#include "otsvad/audio/vad.hpp"
#include "otsvad/model/model.hpp"
#include "otsvad/scoring/rttm.hpp"
#include "otsvad/stream/state.hpp"

namespace otsvad {

struct BlockWindow {
  std::size_t index = 0;
  std::size_t start = 0;   // first frame of the window
  std::size_t frames = 0;  // window length W
  std::size_t fresh = 0;   // trailing frames never covered before
};

template <class T>
class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::size_t num_speakers() const = 0;
  virtual std::size_t embed_dim() const = 0;
  virtual std::size_t num_channels() const { return 1; }
  // Per-channel frame embeddings, each [W, D]. `features` holds the window's
  // feature rows for every channel.
  virtual std::vector<std::vector<T>> embed(const BlockWindow& w, const std::vector<FeatureMatrix>& features) = 0;
  // Per-channel banks [N, D] and embeddings [W, D] -> probabilities [W, N].
  virtual std::vector<T> detect(const BlockWindow& w, const std::vector<std::vector<T>>& banks,
                                const std::vector<std::vector<T>>& embeddings) = 0;
};

// Runs the network block by block without recording gradients.
template <class T>
class NeuralDetector : public Detector<T> {
 public:
  explicit NeuralDetector(OtsVadModel<T>& model, std::size_t channels = 1) : model_(model), channels_(channels) {
    if (channels == 0) throw ConfigError("detector: at least one channel");
    if (channels > 1 && !model.config().multichannel)
      throw ConfigError("detector: multichannel input needs a multichannel checkpoint");
  }

  std::size_t num_speakers() const override { return model_.num_speakers(); }
  std::size_t embed_dim() const override { return model_.embed_dim(); }
  std::size_t num_channels() const override { return channels_; }

  std::vector<std::vector<T>> embed(const BlockWindow& w, const std::vector<FeatureMatrix>& features) override {
    NoGradGuard ng;
    std::vector<std::vector<T>> out;
    for (const auto& fm : features) {
      auto e = model_.embed(features_to_tensor<T>(fm), false);
      if (e.dim(1) != w.frames) throw ShapeError("detector: front-end returned the wrong frame count");
      out.emplace_back(e.values().begin(), e.values().end());
    }
    return out;
  }

  std::vector<T> detect(const BlockWindow& w, const std::vector<std::vector<T>>& banks,
                        const std::vector<std::vector<T>>& embeddings) override {
    NoGradGuard ng;
    const std::size_t N = num_speakers(), D = embed_dim();
    std::vector<Tensor<T>> b, f;
    for (std::size_t c = 0; c < banks.size(); ++c) {
      b.push_back(Tensor<T>::from({1, N, D}, banks[c]));
      f.push_back(Tensor<T>::from({1, w.frames, D}, embeddings[c]));
    }
    auto y = model_.detect_multichannel(b, f);
    return {y.values().begin(), y.values().end()};
  }

 private:
  OtsVadModel<T>& model_;
  std::size_t channels_;
};

// Newly emitted frames [start, start + frames) with their current values.
template <class T>
struct Increment {
  std::size_t block = 0;
  std::size_t start = 0;
  std::size_t frames = 0;
  std::vector<T> probs;  // [frames, N]
};

// Everything one block did, for observers and tests.
template <class T>
struct BlockRecord {
  BlockWindow window;
  std::vector<std::vector<T>> banks;  // per channel [N, D]; empty for the first block
  std::vector<T> probs;               // [W, N] after zeroing and the new-speaker rule
  std::size_t active_before = 0, active_after = 0;
};

template <class T>
class StreamEngine {
 public:
  static constexpr std::size_t kRowsPerFrame = FrontendConfig::kDownsample;

  StreamEngine(StreamConfig cfg, Detector<T>& det) : cfg_(std::move(cfg)), det_(det) {
    cfg_.validate();
    if (cfg_.num_speakers != det.num_speakers())
      throw ConfigError("stream.num_speakers: " + std::to_string(cfg_.num_speakers) + " but the detector has " +
                        std::to_string(det.num_speakers()));
    N_ = cfg_.num_speakers;
    D_ = det.embed_dim();
    C_ = det.num_channels();
    Lb_ = cfg_.block_frames();
    M_ = cfg_.shift_frames();
    buf_ = BufferState<T>(N_, D_, C_, cfg_.strategy == Strategy::kBuffer);
    if (cfg_.strategy == Strategy::kAccumulate) acc_ = AccumulatorState<T>(N_, D_, C_);
    features_.resize(C_);
  }

  const StreamConfig& config() const { return cfg_; }
  const BufferState<T>& buffer() const { return buf_; }
  const AccumulatorState<T>& accumulator() const { return acc_; }
  std::size_t active_speakers() const { return active_; }
  std::size_t blocks() const { return blocks_; }
  std::size_t cursor() const { return buf_.cursor; }
  bool finished() const { return finished_; }

  void set_observer(std::function<void(const BlockRecord<T>&)> f) { observer_ = std::move(f); }

  // Appends feature rows (one matrix per channel, equal row counts) and runs
  // every block whose window is now complete.
  std::vector<Increment<T>> push(const std::vector<FeatureMatrix>& rows) {
    if (finished_) throw StateError("stream: input after end of stream");
    if (rows.size() != C_) throw InputError("stream: expected " + std::to_string(C_) + " channels");
    for (std::size_t c = 0; c < C_; ++c) {
      if (rows[c].num_frames() != rows[0].num_frames()) throw InputError("stream: channels disagree on frame count");
      if (features_[c].values.empty()) {
        features_[c].bins = rows[c].bins;
        features_[c].frame_shift_s = rows[c].frame_shift_s;
        features_[c].frame_length_s = rows[c].frame_length_s;
      } else if (features_[c].bins != rows[c].bins) {
        throw InputError("stream: feature dimension changed mid-stream");
      }
      features_[c].append(rows[c].values);
    }
    rows_ += rows[0].num_frames();
    std::vector<Increment<T>> out;
    while (kRowsPerFrame * (blocks_ + 1) * M_ <= rows_) {
      const std::size_t e = (blocks_ + 1) * M_;
      out.push_back(run_block(e > Lb_ ? e - Lb_ : 0, e));
    }
    return out;
  }

  std::vector<Increment<T>> push(const FeatureMatrix& rows) { return push(std::vector<FeatureMatrix>{rows}); }

  // End of stream: a trailing partial block covers the remaining frames.
  std::vector<Increment<T>> flush() {
    if (finished_) throw StateError("stream: flush called twice");
    std::vector<Increment<T>> out;
    const std::size_t total = (rows_ + kRowsPerFrame - 1) / kRowsPerFrame;
    if (total > buf_.cursor) out.push_back(run_block(total > Lb_ ? total - Lb_ : 0, total));
    finished_ = true;
    return out;
  }

  // Averaged outputs binarised at 0.5 (>=), [frames, N].
  std::vector<char> finalize() const {
    if (!finished_) throw StateError("stream: finalize before end of stream");
    std::vector<char> lab(buf_.out.size());
    for (std::size_t i = 0; i < lab.size(); ++i) lab[i] = buf_.out[i] >= T(0.5);
    return lab;
  }

 private:
  std::vector<FeatureMatrix> window_features(std::size_t s, std::size_t e) const {
    std::vector<FeatureMatrix> out(C_);
    const std::size_t r0 = kRowsPerFrame * s, r1 = std::min(rows_, kRowsPerFrame * e);
    for (std::size_t c = 0; c < C_; ++c) {
      const auto& src = features_[c];
      out[c].bins = src.bins;
      out[c].frame_shift_s = src.frame_shift_s;
      out[c].frame_length_s = src.frame_length_s;
      out[c].values.assign(src.values.begin() + std::ptrdiff_t(r0 * src.bins), src.values.begin() + std::ptrdiff_t(r1 * src.bins));
    }
    return out;
  }

  Increment<T> run_block(std::size_t s, std::size_t e) {
    BlockWindow w{blocks_, s, e - s, e - buf_.cursor};
    if (s > buf_.cursor || e <= buf_.cursor) throw StateError("stream: out-of-order block");
    const std::size_t W = w.frames;
    auto emb = det_.embed(w, window_features(s, e));
    if (emb.size() != C_) throw ShapeError("stream: detector returned the wrong channel count");
    for (const auto& x : emb)
      if (x.size() != W * D_) throw ShapeError("stream: detector returned embeddings of the wrong shape");

    BlockRecord<T> rec;
    rec.window = w;
    rec.active_before = active_;
    std::vector<T> probs(W * N_, T(0));
    if (blocks_ == 0) {
      // The first block is assumed to hold one speaker.
      for (std::size_t t = 0; t < W; ++t) probs[t * N_] = T(1);
      active_ = 1;
    } else {
      std::vector<T> counts(N_, T(0));
      if (cfg_.strategy == Strategy::kBuffer) {
        rec.banks = targets_from_buffer(buf_, cfg_.thres_upper, &counts);
      } else {
        rec.banks = acc_.targets();
        for (std::size_t n = 0; n < N_; ++n) counts[n] = T(acc_.count[n]);
      }
      probs = det_.detect(w, rec.banks, emb);
      if (probs.size() != W * N_) throw ShapeError("stream: detector returned probabilities of the wrong shape");
      // Unbound slots and slots without evidence stay silent.
      for (std::size_t n = 0; n < N_; ++n)
        if (n >= active_ || counts[n] == T(0))
          for (std::size_t t = 0; t < W; ++t) probs[t * N_ + n] = T(0);
      for (const T p : probs)
        if (!(p >= T(0) && p <= T(1))) throw NumericError("stream: detector output outside [0, 1]");
      active_ = detect_new_speaker(probs, W, N_, w.fresh, active_, cfg_.thres_lower, cfg_.thres_upper);
    }
    rec.active_after = active_;

    if (cfg_.strategy == Strategy::kAccumulate) {
      // Only the fresh frames enter the sums, so overlapping windows never
      // count a frame twice.
      const std::size_t off = W - w.fresh;
      std::vector<char> sel(w.fresh * N_);
      for (std::size_t t = 0; t < w.fresh; ++t)
        for (std::size_t n = 0; n < N_; ++n) sel[t * N_ + n] = probs[(off + t) * N_ + n] >= T(cfg_.thres_upper);
      std::vector<std::vector<T>> fresh_emb(C_);
      for (std::size_t c = 0; c < C_; ++c)
        fresh_emb[c].assign(emb[c].begin() + std::ptrdiff_t(off * D_), emb[c].end());
      accumulate_update(acc_, fresh_emb, sel, w.fresh);
    }
    buf_.write(s, W, probs, &emb);
    if (cfg_.strategy == Strategy::kBuffer) prune_buffer(buf_, cfg_.buffer_prune_k);

    Increment<T> inc;
    inc.block = blocks_;
    inc.start = e - w.fresh;
    inc.frames = w.fresh;
    inc.probs.assign(buf_.out.begin() + std::ptrdiff_t(inc.start * N_), buf_.out.begin() + std::ptrdiff_t(e * N_));
    ++blocks_;
    rec.probs = std::move(probs);
    if (observer_) observer_(rec);
    return inc;
  }

  StreamConfig cfg_;
  Detector<T>& det_;
  std::size_t N_ = 0, D_ = 0, C_ = 1, Lb_ = 0, M_ = 0;
  BufferState<T> buf_;
  AccumulatorState<T> acc_;
  std::vector<FeatureMatrix> features_;
  std::size_t rows_ = 0, blocks_ = 0, active_ = 0;
  bool finished_ = false;
  std::function<void(const BlockRecord<T>&)> observer_;
};

// Binary labels [frames, N] on the compacted 0.08 s grid -> RTTM segments on
// the original timeline. Each label frame covers `rows_per_frame` feature
// rows; every row is projected through the map and runs of consecutive
// original rows become segments.
inline std::vector<RttmSegment> labels_to_segments(const std::vector<char>& labels, std::size_t N, const TimelineMap& map,
                                                   const std::string& recording_id, std::size_t rows_per_frame = 8,
                                                   double row_shift_s = 0.01) {
  std::vector<RttmSegment> out;
  if (map.empty() || N == 0) return out;
  const std::size_t frames = labels.size() / N;
  const std::size_t orig_rows = map.image().back() + 1;
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<char> act(orig_rows, 0);
    for (std::size_t j = 0; j < frames; ++j) {
      if (!labels[j * N + n]) continue;
      for (std::size_t r = j * rows_per_frame; r < std::min(map.size(), (j + 1) * rows_per_frame); ++r) act[map.project(r)] = 1;
    }
    for (std::size_t i = 0; i < orig_rows;) {
      if (!act[i]) {
        ++i;
        continue;
      }
      std::size_t k = i;
      while (k < orig_rows && act[k]) ++k;
      RttmSegment s;
      s.recording_id = recording_id;
      s.onset_s = double(i) * row_shift_s;
      s.duration_s = double(k - i) * row_shift_s;
      s.speaker = "spk" + std::to_string(n + 1);
      out.push_back(std::move(s));
      i = k;
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const RttmSegment& a, const RttmSegment& b) { return a.onset_s < b.onset_s; });
  return out;
}

}  // namespace otsvad
