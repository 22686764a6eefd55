#pragma once

// Timing: per-block compute time, real-time factor, and real-time playback
// with per-increment emission latency.

#include <chrono>
#include <thread>

#include "otsvad/pipeline.hpp"

namespace otsvad {

// RTF = per-block compute time / block shift.
inline double real_time_factor(double block_seconds, double block_shift_s) {
  if (!(block_shift_s > 0)) throw ConfigError("rtf: block shift must be positive");
  return block_seconds / block_shift_s;
}

// Wraps a detector and records wall time spent per block (embedding plus
// detection; the first block has no detection call).
template <class T>
class TimedDetector : public Detector<T> {
 public:
  explicit TimedDetector(Detector<T>& inner) : inner_(inner) {}

  std::size_t num_speakers() const override { return inner_.num_speakers(); }
  std::size_t embed_dim() const override { return inner_.embed_dim(); }
  std::size_t num_channels() const override { return inner_.num_channels(); }

  std::vector<std::vector<T>> embed(const BlockWindow& w, const std::vector<FeatureMatrix>& features) override {
    const auto t0 = Clock::now();
    auto out = inner_.embed(w, features);
    add(w.index, t0);
    return out;
  }

  std::vector<T> detect(const BlockWindow& w, const std::vector<std::vector<T>>& banks,
                        const std::vector<std::vector<T>>& embeddings) override {
    const auto t0 = Clock::now();
    auto out = inner_.detect(w, banks, embeddings);
    add(w.index, t0);
    return out;
  }

  const std::vector<double>& block_seconds() const { return seconds_; }

 private:
  using Clock = std::chrono::steady_clock;
  void add(std::size_t block, Clock::time_point t0) {
    if (seconds_.size() <= block) seconds_.resize(block + 1, 0.0);
    seconds_[block] += std::chrono::duration<double>(Clock::now() - t0).count();
  }

  Detector<T>& inner_;
  std::vector<double> seconds_;
};

struct RtfReport {
  std::size_t blocks = 0;
  double mean_block_s = 0;
  double max_block_s = 0;
  double block_length_s = 0;
  double block_shift_s = 0;
  double rtf = 0;
};

inline RtfReport summarize_rtf(const std::vector<double>& block_seconds, const StreamConfig& s) {
  RtfReport r;
  r.blocks = block_seconds.size();
  r.block_length_s = s.block_length_s;
  r.block_shift_s = s.block_shift_s;
  if (block_seconds.empty()) return r;
  for (const double t : block_seconds) {
    r.mean_block_s += t;
    r.max_block_s = std::max(r.max_block_s, t);
  }
  r.mean_block_s /= double(block_seconds.size());
  r.rtf = real_time_factor(r.mean_block_s, s.block_shift_s);
  return r;
}

struct IncrementTiming {
  std::size_t block = 0;
  double stream_start_s = 0;  // original-timeline start of the first frame
  double stream_ready_s = 0;  // when the last sample it needs was delivered
  double span_s = 0;          // frames * frame length
  double emitted_s = 0;       // wall clock since playback start
  double compute_s = 0;       // block compute time
};

struct PlaybackReport {
  std::vector<IncrementTiming> increments;
  std::vector<RttmSegment> segments;
  std::vector<double> block_seconds;
  double wall_s = 0;
};

// Delivers the signal in chunk_s pieces. With realtime set, chunk k is
// released at wall time (k + 1) * chunk_s; otherwise as fast as possible.
template <class T>
PlaybackReport play_stream(Detector<T>& det, const AudioSignal& audio, const VadSegments* vad, const StreamConfig& scfg,
                           const FeatureConfig& fcfg, const std::string& recording_id, bool realtime, double chunk_s = 0.01,
                           const std::function<void(const Increment<T>&, const LiveSession<T>&)>& on_increment = {}) {
  audio.validate();
  if (audio.sample_rate != fcfg.sample_rate)
    throw InputError("audio is " + std::to_string(audio.sample_rate) + " Hz, features expect " +
                     std::to_string(fcfg.sample_rate) + " Hz");
  TimedDetector<T> timed(det);
  LiveSession<T> live(timed, scfg, fcfg, audio.num_channels(), vad, recording_id);
  PlaybackReport rep;
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  const auto since = [&] { return std::chrono::duration<double>(Clock::now() - t0).count(); };
  const std::size_t hop = std::max<std::size_t>(1, std::size_t(std::lround(chunk_s * audio.sample_rate)));
  auto record = [&](const std::vector<Increment<T>>& incs) {
    for (const auto& inc : incs) {
      IncrementTiming it;
      it.block = inc.block;
      it.emitted_s = since();
      it.stream_start_s = live.frame_time_s(inc.start);
      it.stream_ready_s = live.frame_ready_s(inc.start + inc.frames - 1);
      it.span_s = double(inc.frames) * scfg.frame_s;
      const auto& bs = timed.block_seconds();
      it.compute_s = inc.block < bs.size() ? bs[inc.block] : 0.0;
      rep.increments.push_back(it);
      if (on_increment) on_increment(inc, live);
    }
  };
  for (std::size_t a = 0; a < audio.num_samples(); a += hop) {
    const std::size_t b = std::min(audio.num_samples(), a + hop);
    if (realtime) std::this_thread::sleep_until(t0 + std::chrono::duration<double>(double(b) / audio.sample_rate));
    std::vector<std::span<const float>> chunk;
    for (const auto& c : audio.channels) chunk.emplace_back(c.data() + a, b - a);
    record(live.feed(chunk));
  }
  record(live.finish());
  rep.segments = live.segments();
  rep.block_seconds = timed.block_seconds();
  rep.wall_s = since();
  return rep;
}

}  // namespace otsvad
