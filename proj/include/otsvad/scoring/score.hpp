#pragma once

// Frame-quantised diarization scoring (10 ms frames) with optimal
// one-to-one speaker mapping.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "otsvad/scoring/rttm.hpp"

namespace otsvad {

struct ScoringConfig {
  double collar_s = 0.0;
  double frame_s = 0.01;
};

// Maximum-weight assignment on a rows x cols matrix (either side may be
// larger). Returns, per row, the assigned column or -1. O(n^3) Hungarian
// method on the square completion.
inline std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& w) {
  const std::size_t R = w.size(), C = R ? w[0].size() : 0, n = std::max(R, C);
  std::vector<int> result(R, -1);
  if (n == 0) return result;
  double wmax = 0;
  for (const auto& row : w)
    for (const double v : row) wmax = std::max(wmax, v);
  // Minimise cost = wmax - weight; padding cells cost wmax (weight 0).
  auto cost = [&](std::size_t i, std::size_t j) { return (i < R && j < C) ? wmax - w[i][j] : wmax; };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j] - 1 < R && j - 1 < C) result[p[j] - 1] = int(j - 1);
  return result;
}

// Per-recording speaker activity on the 10 ms grid.
struct FrameActivity {
  std::vector<std::string> speakers;
  std::vector<std::vector<char>> active;  // [speaker][frame]
  std::size_t frames = 0;
};

namespace detail {

inline std::size_t to_frame(double t, double frame_s) { return std::size_t(std::llround(std::max(0.0, t) / frame_s)); }

inline FrameActivity rasterise(const std::vector<RttmSegment>& segs, std::size_t frames, double frame_s) {
  FrameActivity a;
  a.frames = frames;
  std::map<std::string, std::size_t> idx;
  for (const auto& s : segs) {
    auto [it, fresh] = idx.emplace(s.speaker, a.speakers.size());
    if (fresh) {
      a.speakers.push_back(s.speaker);
      a.active.emplace_back(frames, 0);
    }
    const std::size_t b = to_frame(s.onset_s, frame_s), e = std::min(frames, to_frame(s.offset_s(), frame_s));
    for (std::size_t t = b; t < e; ++t) a.active[it->second][t] = 1;
  }
  return a;
}

// Frames not scored because they lie within collar of a reference boundary.
inline std::vector<char> scored_mask(const std::vector<RttmSegment>& ref, std::size_t frames, const ScoringConfig& cfg) {
  std::vector<char> m(frames, 1);
  if (cfg.collar_s <= 0) return m;
  for (const auto& s : ref)
    for (const double b : {s.onset_s, s.offset_s()}) {
      const std::size_t lo = to_frame(b - cfg.collar_s, cfg.frame_s);
      const std::size_t hi = std::min(frames, to_frame(b + cfg.collar_s, cfg.frame_s));
      for (std::size_t t = lo; t < hi; ++t) m[t] = 0;
    }
  return m;
}

inline std::map<std::string, std::vector<RttmSegment>> by_recording(const std::vector<RttmSegment>& segs) {
  std::map<std::string, std::vector<RttmSegment>> out;
  for (const auto& s : segs) out[s.recording_id].push_back(s);
  return out;
}

struct RecordingFrames {
  FrameActivity ref, hyp;
  std::vector<char> scored;
};

inline std::map<std::string, RecordingFrames> prepare(const std::vector<RttmSegment>& reference,
                                                      const std::vector<RttmSegment>& hypothesis,
                                                      const ScoringConfig& cfg) {
  if (cfg.collar_s < 0) throw InputError("scoring: collar must be >= 0");
  const auto refs = by_recording(reference), hyps = by_recording(hypothesis);
  for (const auto& [rec, _] : hyps)
    if (!refs.count(rec)) throw InputError("scoring: hypothesis recording '" + rec + "' has no reference");
  std::map<std::string, RecordingFrames> out;
  for (const auto& [rec, rsegs] : refs) {
    static const std::vector<RttmSegment> kNone;
    const auto hit = hyps.find(rec);
    const auto& hsegs = hit == hyps.end() ? kNone : hit->second;
    double end = 0;
    for (const auto& s : rsegs) end = std::max(end, s.offset_s());
    for (const auto& s : hsegs) end = std::max(end, s.offset_s());
    const std::size_t frames = detail::to_frame(end, cfg.frame_s) + 1;
    auto& rf = out[rec];
    rf.ref = rasterise(rsegs, frames, cfg.frame_s);
    rf.hyp = rasterise(hsegs, frames, cfg.frame_s);
    rf.scored = scored_mask(rsegs, frames, cfg);
  }
  return out;
}

}  // namespace detail

// Error components in frames. der() is (miss + fa + confusion) / total.
struct DerResult {
  std::size_t scored_speech = 0;  // sum over scored frames of reference speaker count
  std::size_t miss = 0;
  std::size_t false_alarm = 0;
  std::size_t confusion = 0;
  std::size_t scored_frames = 0;  // frames not excluded by the collar
  double frame_s = 0.01;

  std::size_t errors() const { return miss + false_alarm + confusion; }
  double der() const { return 100.0 * double(errors()) / double(scored_speech); }
  double miss_pct() const { return 100.0 * double(miss) / double(scored_speech); }
  double false_alarm_pct() const { return 100.0 * double(false_alarm) / double(scored_speech); }
  double confusion_pct() const { return 100.0 * double(confusion) / double(scored_speech); }
};

inline DerResult compute_der(const std::vector<RttmSegment>& reference, const std::vector<RttmSegment>& hypothesis,
                             const ScoringConfig& cfg = {}) {
  DerResult res;
  res.frame_s = cfg.frame_s;
  for (const auto& [rec, rf] : detail::prepare(reference, hypothesis, cfg)) {
    const std::size_t R = rf.ref.speakers.size(), H = rf.hyp.speakers.size(), F = rf.ref.frames;
    std::vector<std::vector<double>> overlap(R, std::vector<double>(H, 0));
    for (std::size_t t = 0; t < F; ++t) {
      if (!rf.scored[t]) continue;
      for (std::size_t r = 0; r < R; ++r)
        if (rf.ref.active[r][t])
          for (std::size_t h = 0; h < H; ++h) overlap[r][h] += rf.hyp.active[h][t];
    }
    const auto map = max_weight_assignment(overlap);
    for (std::size_t t = 0; t < F; ++t) {
      if (!rf.scored[t]) continue;
      ++res.scored_frames;
      std::size_t nr = 0, nh = 0, correct = 0;
      for (std::size_t r = 0; r < R; ++r) {
        nr += rf.ref.active[r][t];
        if (rf.ref.active[r][t] && map[r] >= 0 && rf.hyp.active[std::size_t(map[r])][t]) ++correct;
      }
      for (std::size_t h = 0; h < H; ++h) nh += rf.hyp.active[h][t];
      res.scored_speech += nr;
      res.miss += nr > nh ? nr - nh : 0;
      res.false_alarm += nh > nr ? nh - nr : 0;
      res.confusion += std::min(nr, nh) - correct;
    }
  }
  if (res.scored_speech == 0) throw InputError("scoring: reference has no scored speech, DER is undefined");
  return res;
}

struct JerResult {
  double jer = 0;  // percent
  std::map<std::string, double> per_speaker;  // "<rec>/<speaker>" -> percent
};

// Jaccard error rate: each reference speaker is paired with at most one
// hypothesis speaker by an assignment maximising the total Jaccard index;
// its error is 1 - |R ∩ H| / |R ∪ H| (1 when unpaired). The result is the
// mean over reference speakers, in percent.
inline JerResult compute_jer(const std::vector<RttmSegment>& reference, const std::vector<RttmSegment>& hypothesis,
                             const ScoringConfig& cfg = {}) {
  JerResult res;
  double total = 0;
  std::size_t count = 0;
  for (const auto& [rec, rf] : detail::prepare(reference, hypothesis, cfg)) {
    const std::size_t R = rf.ref.speakers.size(), H = rf.hyp.speakers.size(), F = rf.ref.frames;
    std::vector<std::vector<double>> jacc(R, std::vector<double>(H, 0));
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t h = 0; h < H; ++h) {
        std::size_t inter = 0, uni = 0;
        for (std::size_t t = 0; t < F; ++t) {
          if (!rf.scored[t]) continue;
          inter += rf.ref.active[r][t] && rf.hyp.active[h][t];
          uni += rf.ref.active[r][t] || rf.hyp.active[h][t];
        }
        jacc[r][h] = uni ? double(inter) / double(uni) : 0.0;
      }
    const auto map = max_weight_assignment(jacc);
    for (std::size_t r = 0; r < R; ++r) {
      const double err = 100.0 * (map[r] >= 0 ? 1.0 - jacc[r][std::size_t(map[r])] : 1.0);
      res.per_speaker[rec + "/" + rf.ref.speakers[r]] = err;
      total += err;
      ++count;
    }
  }
  if (count == 0) throw InputError("scoring: reference has no speakers, JER is undefined");
  res.jer = total / double(count);
  return res;
}

}  // namespace otsvad
