#pragma once

// Audio in, RTTM out: fbank per channel, oracle-VAD silence removal,
// block-wise streaming detection, binarisation and projection back to the
// original timeline.

#include <cstdio>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "otsvad/audio/fbank.hpp"
#include "otsvad/audio/vad.hpp"
#include "otsvad/scoring/score.hpp"
#include "otsvad/stream/engine.hpp"

namespace otsvad {

struct CompactFeatures {
  std::vector<FeatureMatrix> channels;
  TimelineMap map;
};

// Fbank of every channel with silence removed (all frames kept when vad is
// null).
inline CompactFeatures compact_features(const AudioSignal& audio, const VadSegments* vad, const FeatureConfig& fcfg = {}) {
  audio.validate();
  const FbankComputer fb(fcfg);
  CompactFeatures out;
  for (std::size_t c = 0; c < audio.num_channels(); ++c) {
    auto fm = compute_fbank(audio.channels[c], audio.sample_rate, fb);
    if (vad) {
      auto [kept, map] = remove_silence(fm, *vad);
      out.channels.push_back(std::move(kept));
      if (c == 0) out.map = std::move(map);
    } else {
      if (c == 0) out.map = TimelineMap::identity(fm.num_frames());
      out.channels.push_back(std::move(fm));
    }
  }
  return out;
}

template <class T>
struct DiarizationResult {
  std::vector<RttmSegment> segments;
  std::size_t blocks = 0;
  std::size_t active_speakers = 0;
};

// Streams pre-computed compact features through the engine in chunks of one
// block shift, as a live source would deliver them.
template <class T>
DiarizationResult<T> diarize_features(Detector<T>& det, const CompactFeatures& feats, const StreamConfig& scfg,
                                      const std::string& recording_id,
                                      const std::function<void(const Increment<T>&)>& on_increment = {}) {
  DiarizationResult<T> res;
  if (feats.map.empty()) return res;  // no speech at all
  StreamEngine<T> eng(scfg, det);
  const std::size_t rows = feats.channels[0].num_frames(), bins = feats.channels[0].bins;
  const std::size_t chunk = scfg.shift_frames() * StreamEngine<T>::kRowsPerFrame;
  auto emit = [&](const std::vector<Increment<T>>& incs) {
    if (on_increment)
      for (const auto& i : incs) on_increment(i);
  };
  for (std::size_t r = 0; r < rows; r += chunk) {
    std::vector<FeatureMatrix> piece(feats.channels.size());
    const std::size_t e = std::min(rows, r + chunk);
    for (std::size_t c = 0; c < piece.size(); ++c) {
      piece[c].bins = bins;
      piece[c].values.assign(feats.channels[c].values.begin() + std::ptrdiff_t(r * bins),
                             feats.channels[c].values.begin() + std::ptrdiff_t(e * bins));
    }
    emit(eng.push(piece));
  }
  emit(eng.flush());
  res.blocks = eng.blocks();
  res.active_speakers = eng.active_speakers();
  res.segments = labels_to_segments(eng.finalize(), scfg.num_speakers, feats.map, recording_id,
                                    StreamEngine<T>::kRowsPerFrame, feats.channels[0].frame_shift_s);
  return res;
}

template <class T>
DiarizationResult<T> diarize(OtsVadModel<T>& model, const AudioSignal& audio, const VadSegments* vad,
                             const StreamConfig& scfg, const std::string& recording_id, const FeatureConfig& fcfg = {},
                             const std::function<void(const Increment<T>&)>& on_increment = {}) {
  NeuralDetector<T> det(model, audio.num_channels());
  if (fcfg.num_mel_bins != model.config().frontend.mel_bins)
    throw ConfigError("features.num_mel_bins does not match the model's mel_bins");
  return diarize_features(det, compact_features(audio, vad, fcfg), scfg, recording_id, on_increment);
}

// Sample-by-sample front door for live input: incremental fbank per
// channel, oracle-VAD filtering of each row as it completes, and the
// streaming engine behind it. Increments come back as soon as a block
// completes.
template <class T>
class LiveSession {
 public:
  LiveSession(Detector<T>& det, const StreamConfig& scfg, const FeatureConfig& fcfg, std::size_t channels,
              const VadSegments* vad, std::string recording_id)
      : fb_(fcfg), vad_(vad), rec_(std::move(recording_id)), N_(scfg.num_speakers), eng_(scfg, det) {
    if (channels == 0) throw InputError("live: needs at least one channel");
    for (std::size_t c = 0; c < channels; ++c) online_.emplace_back(fb_);
  }

  LiveSession(const LiveSession&) = delete;
  LiveSession& operator=(const LiveSession&) = delete;

  // One chunk per channel, equal lengths.
  std::vector<Increment<T>> feed(const std::vector<std::span<const float>>& chunk) {
    if (chunk.size() != online_.size()) throw InputError("live: chunk has the wrong channel count");
    for (const auto& c : chunk)
      if (c.size() != chunk[0].size()) throw InputError("live: channels differ in chunk length");
    for (std::size_t c = 0; c < online_.size(); ++c) online_[c].accept(chunk[c]);
    const auto& first = online_[0].frames();
    std::vector<FeatureMatrix> piece(online_.size());
    for (auto& p : piece) p.bins = first.bins;
    for (; consumed_ < first.num_frames(); ++consumed_) {
      if (vad_ && !vad_->contains(frame_center_s(consumed_, first.frame_shift_s, first.frame_length_s))) continue;
      map_.push_back(consumed_);
      for (std::size_t c = 0; c < online_.size(); ++c) piece[c].append(online_[c].frames().frame(consumed_));
    }
    if (piece[0].num_frames() == 0) return {};
    return eng_.push(piece);
  }

  std::vector<Increment<T>> feed(std::span<const float> mono) { return feed(std::vector<std::span<const float>>{mono}); }

  std::vector<Increment<T>> finish() {
    if (map_.empty()) return {};
    return eng_.flush();
  }

  // Final RTTM; call after finish().
  std::vector<RttmSegment> segments() {
    if (map_.empty()) return {};
    return labels_to_segments(eng_.finalize(), N_, map_, rec_, StreamEngine<T>::kRowsPerFrame,
                              online_[0].frames().frame_shift_s);
  }

  // Original-timeline start (s) of compact frame j.
  double frame_time_s(std::size_t j) const {
    return double(map_.project(j * StreamEngine<T>::kRowsPerFrame)) * online_[0].frames().frame_shift_s;
  }

  // Original-timeline end (s) of the audio needed for compact frame j.
  double frame_ready_s(std::size_t j) const {
    const std::size_t last = std::min(map_.size() - 1, (j + 1) * StreamEngine<T>::kRowsPerFrame - 1);
    const auto& f = online_[0].frames();
    return double(map_.project(last)) * f.frame_shift_s + f.frame_length_s;
  }

  const StreamEngine<T>& engine() const { return eng_; }
  std::size_t rows_seen() const { return consumed_; }

 private:
  FbankComputer fb_;
  std::vector<OnlineFbank> online_;
  const VadSegments* vad_;
  std::string rec_;
  std::size_t N_;
  StreamEngine<T> eng_;
  TimelineMap map_;
  std::size_t consumed_ = 0;
};

// "frame_time_s speaker_slot probability" lines for one increment; slots
// are numbered from 1 like the RTTM speaker names.
template <class T>
std::string format_events(const Increment<T>& inc, std::size_t N, const std::function<double(std::size_t)>& frame_time) {
  std::string out;
  char buf[64];
  for (std::size_t t = 0; t < inc.frames; ++t)
    for (std::size_t n = 0; n < N; ++n) {
      std::snprintf(buf, sizeof buf, "%.2f %zu %.4f\n", frame_time(inc.start + t), n + 1, double(inc.probs[t * N + n]));
      out += buf;
    }
  return out;
}

}  // namespace otsvad
