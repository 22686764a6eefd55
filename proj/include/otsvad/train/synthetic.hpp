#pragma once

// Synthetic speakers and conversations. A "speaker" is a fixed spectral
// template (a few resonant bands) applied to white noise with a slow
// syllable-rate envelope, so identities differ only in spectral shape.

#include <cmath>
#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "otsvad/audio/signal.hpp"
#include "otsvad/audio/vad.hpp"
#include "otsvad/scoring/rttm.hpp"
#include "otsvad/train/labels.hpp"

namespace otsvad {

struct Band {
  double centre_hz;
  double q;
  double gain;
};

struct SpeakerTemplate {
  int id = 0;
  std::vector<Band> bands;
  double syllable_hz = 4.0;
  double rms = 0.1;
};

// Up to eight distinct templates with well separated band layouts.
inline std::vector<SpeakerTemplate> default_speakers(std::size_t count) {
  static const std::vector<std::vector<Band>> layouts = {
      {{350, 4, 1.0}, {1900, 6, 0.6}},   {{700, 4, 1.0}, {2700, 6, 0.5}},  {{1100, 4, 1.0}, {3500, 6, 0.5}},
      {{250, 4, 0.8}, {5200, 5, 0.7}},   {{500, 3, 0.7}, {1400, 5, 1.0}},  {{900, 5, 0.9}, {4300, 5, 0.6}},
      {{1600, 4, 1.0}, {6200, 5, 0.5}},  {{450, 5, 1.0}, {3000, 4, 0.8}}};
  if (count > layouts.size()) throw ConfigError("synthetic: at most " + std::to_string(layouts.size()) + " speakers");
  std::vector<SpeakerTemplate> out;
  for (std::size_t i = 0; i < count; ++i) {
    SpeakerTemplate s;
    s.id = int(i);
    s.bands = layouts[i];
    s.syllable_hz = 3.0 + 0.4 * double(i);
    out.push_back(s);
  }
  return out;
}

// Noise through the template's band-pass resonators (two cascaded RBJ
// biquads per band), scaled by a syllable envelope and normalised to the
// template RMS.
inline std::vector<float> render_speaker(const SpeakerTemplate& sp, std::size_t samples, std::uint64_t seed,
                                         int sample_rate = 16000) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  std::vector<double> white(samples), acc(samples, 0.0);
  for (auto& v : white) v = g(rng);
  for (const auto& b : sp.bands) {
    const double w0 = 2 * M_PI * b.centre_hz / sample_rate, alpha = std::sin(w0) / (2 * b.q);
    const double a0 = 1 + alpha, b0 = alpha / a0, b2 = -alpha / a0, a1 = -2 * std::cos(w0) / a0, a2 = (1 - alpha) / a0;
    std::vector<double> x = white;
    for (int pass = 0; pass < 2; ++pass) {
      double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
      for (auto& v : x) {
        const double y = b0 * v + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = v;
        y2 = y1;
        y1 = y;
        v = y;
      }
    }
    for (std::size_t i = 0; i < samples; ++i) acc[i] += b.gain * x[i];
  }
  std::uniform_real_distribution<double> phase(0, 2 * M_PI);
  const double ph = phase(rng);
  double ss = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    acc[i] *= 0.6 + 0.4 * std::sin(2 * M_PI * sp.syllable_hz * double(i) / sample_rate + ph);
    ss += acc[i] * acc[i];
  }
  const double scale = samples && ss > 0 ? sp.rms / std::sqrt(ss / double(samples)) : 0.0;
  std::vector<float> out(samples);
  for (std::size_t i = 0; i < samples; ++i) out[i] = float(acc[i] * scale);
  return out;
}

// Single-speaker clips per identity.
class SpeakerPool {
 public:
  SpeakerPool() = default;
  SpeakerPool(const std::vector<SpeakerTemplate>& speakers, std::size_t clips_per_speaker, double clip_s, std::uint64_t seed,
              int sample_rate = 16000)
      : sample_rate_(sample_rate) {
    if (clips_per_speaker == 0 || clip_s <= 0) throw ConfigError("speaker pool: needs clips of positive length");
    for (const auto& sp : speakers) {
      clips_.emplace_back();
      for (std::size_t k = 0; k < clips_per_speaker; ++k)
        clips_.back().push_back(render_speaker(sp, std::size_t(clip_s * sample_rate), seed * 1000003 + std::uint64_t(sp.id) * 1009 + k,
                                               sample_rate));
    }
  }

  // Pool over already rendered clips, clips[id][k].
  static SpeakerPool from_clips(std::vector<std::vector<std::vector<float>>> clips, int sample_rate) {
    for (const auto& c : clips)
      if (c.empty()) throw DataError("speaker pool: every speaker needs at least one clip");
    SpeakerPool p;
    p.clips_ = std::move(clips);
    p.sample_rate_ = sample_rate;
    return p;
  }

  const std::vector<std::vector<std::vector<float>>>& clips() const { return clips_; }
  std::size_t num_speakers() const { return clips_.size(); }
  int sample_rate() const { return sample_rate_; }
  bool empty() const { return clips_.empty(); }

  // `samples` contiguous samples of speaker `id`: a random window of one
  // clip, or clips drawn with replacement and joined when none is long
  // enough.
  template <class Rng>
  std::vector<float> draw(int id, std::size_t samples, Rng& rng) const {
    if (id < 0 || std::size_t(id) >= clips_.size()) throw RangeError("speaker pool: unknown speaker " + std::to_string(id));
    const auto& cl = clips_[std::size_t(id)];
    std::uniform_int_distribution<std::size_t> pick(0, cl.size() - 1);
    const auto& c = cl[pick(rng)];
    if (c.size() >= samples) {
      std::uniform_int_distribution<std::size_t> off(0, c.size() - samples);
      const std::size_t o = off(rng);
      return {c.begin() + std::ptrdiff_t(o), c.begin() + std::ptrdiff_t(o + samples)};
    }
    std::vector<float> out(c);
    while (out.size() < samples) {
      const auto& more = cl[pick(rng)];
      out.insert(out.end(), more.begin(), more.end());
    }
    out.resize(samples);
    return out;
  }

 private:
  std::vector<std::vector<std::vector<float>>> clips_;
  int sample_rate_ = 16000;
};

// Augmentation hook applied to every simulated mixture; no-op by default.
using Augmentation = std::function<void(std::vector<float>&, std::mt19937_64&)>;

struct SimulationRecipe {
  std::vector<LabelMatrix> sources;  // annotation label matrices (speech-only timeline)
  const SpeakerPool* pool = nullptr;
  Augmentation augment;
};

struct Mixture {
  std::vector<float> audio;
  std::vector<std::vector<float>> sources;  // per label column, summed into audio
  LabelMatrix labels;
};

constexpr std::size_t kSamplesPerFrame = 1280;  // 0.08 s at 16 kHz
constexpr std::size_t kFbankTail = 240;         // window overhang of the last 10 ms row

// Audio for a label matrix: every run of active frames of column n is
// filled with contiguous audio of speaker identities[n]; columns sum. The
// signal carries a 240-sample tail so the fbank yields exactly 8 rows per
// frame.
template <class Rng>
Mixture render_mixture(const LabelMatrix& labels, const std::vector<int>& identities, const SpeakerPool& pool, Rng& rng) {
  if (identities.size() != labels.speakers) throw ShapeError("render_mixture: one identity per label column");
  const std::size_t S = labels.frames * kSamplesPerFrame + kFbankTail;
  Mixture m;
  m.labels = labels;
  m.audio.assign(S, 0.0f);
  for (std::size_t n = 0; n < labels.speakers; ++n) {
    std::vector<float> src(S, 0.0f);
    for (std::size_t t = 0; t < labels.frames;) {
      if (!labels.at(t, n)) {
        ++t;
        continue;
      }
      std::size_t e = t;
      while (e < labels.frames && labels.at(e, n)) ++e;
      const std::size_t a = t * kSamplesPerFrame, b = e == labels.frames ? S : e * kSamplesPerFrame;
      const auto run = pool.draw(identities[n], b - a, rng);
      std::copy(run.begin(), run.end(), src.begin() + std::ptrdiff_t(a));
      t = e;
    }
    for (std::size_t i = 0; i < S; ++i) m.audio[i] += src[i];
    m.sources.push_back(std::move(src));
  }
  return m;
}

// A random slice of `frames` frames from a random annotation source.
template <class Rng>
LabelMatrix choose_annotation(const SimulationRecipe& r, std::size_t frames, Rng& rng) {
  if (r.sources.empty()) throw DataError("simulation: no annotation sources");
  std::vector<std::size_t> ok;
  for (std::size_t i = 0; i < r.sources.size(); ++i)
    if (r.sources[i].frames >= frames) ok.push_back(i);
  if (ok.empty()) throw DataError("simulation: every annotation source is shorter than " + std::to_string(frames) + " frames");
  const auto& src = r.sources[ok[std::uniform_int_distribution<std::size_t>(0, ok.size() - 1)(rng)]];
  const std::size_t t0 = std::uniform_int_distribution<std::size_t>(0, src.frames - frames)(rng);
  return src.slice(t0, t0 + frames);
}

// Annotation slice filled with distinct random pool speakers.
template <class Rng>
Mixture simulate_mixture(const SimulationRecipe& r, std::size_t frames, Rng& rng) {
  if (!r.pool || r.pool->empty()) throw DataError("simulation: empty speaker pool");
  auto labels = choose_annotation(r, frames, rng);
  if (labels.speakers > r.pool->num_speakers())
    throw DataError("simulation: annotation has more speakers than the pool");
  std::vector<int> ids(r.pool->num_speakers());
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(labels.speakers);
  auto m = render_mixture(labels, ids, *r.pool, rng);
  if (r.augment) r.augment(m.audio, rng);
  return m;
}

struct ConversationConfig {
  double duration_s = 90.0;
  std::size_t speakers = 3;
  double turn_min_s = 1.0, turn_max_s = 4.0;
  double pause_p = 0.4, pause_min_s = 0.2, pause_max_s = 1.0;
  double overlap_p = 0.15, overlap_min_s = 0.3, overlap_max_s = 1.0;
  double noise_rms = 1e-3;
};

// Reference turns: a speaker talks for a random turn, then either pauses,
// hands over directly, or is overlapped by the next speaker. Times are on
// the 10 ms grid. Speakers are named "S<identity>".
template <class Rng>
std::vector<RttmSegment> generate_turns(const ConversationConfig& c, const std::vector<int>& identities,
                                        const std::string& rec, Rng& rng) {
  if (identities.empty()) throw ConfigError("conversation: needs at least one speaker");
  std::uniform_real_distribution<double> u(0, 1);
  auto q = [](double x) { return std::round(x * 100.0) / 100.0; };
  std::vector<RttmSegment> out;
  std::size_t cur = std::uniform_int_distribution<std::size_t>(0, identities.size() - 1)(rng);
  double t = q(0.3 + 0.5 * u(rng));
  while (t < c.duration_s - 0.5) {
    const double len = q(c.turn_min_s + (c.turn_max_s - c.turn_min_s) * u(rng));
    const double end = std::min(q(t + len), c.duration_s);
    RttmSegment s;
    s.recording_id = rec;
    s.onset_s = t;
    s.duration_s = q(end - t);
    s.speaker = "S" + std::to_string(identities[cur]);
    if (s.duration_s > 0) out.push_back(s);
    std::size_t next = cur;
    if (identities.size() > 1) {
      next = std::uniform_int_distribution<std::size_t>(0, identities.size() - 2)(rng);
      if (next >= cur) ++next;
    }
    const double r = u(rng);
    if (r < c.overlap_p && identities.size() > 1)
      t = q(std::max(t + 0.1, end - (c.overlap_min_s + (c.overlap_max_s - c.overlap_min_s) * u(rng))));
    else if (r < c.overlap_p + c.pause_p)
      t = q(end + c.pause_min_s + (c.pause_max_s - c.pause_min_s) * u(rng));
    else
      t = end;
    cur = next;
  }
  // Merge touching turns of one speaker so each speaker's segments are disjoint.
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.speaker != b.speaker ? a.speaker < b.speaker : a.onset_s < b.onset_s;
  });
  std::vector<RttmSegment> merged;
  for (const auto& s : out) {
    if (!merged.empty() && merged.back().speaker == s.speaker && s.onset_s <= merged.back().offset_s() + 1e-9)
      merged.back().duration_s = q(std::max(merged.back().offset_s(), s.offset_s()) - merged.back().onset_s);
    else
      merged.push_back(s);
  }
  std::stable_sort(merged.begin(), merged.end(), [](const auto& a, const auto& b) { return a.onset_s < b.onset_s; });
  return merged;
}

struct Conversation {
  std::string id;
  AudioSignal audio;
  std::vector<RttmSegment> reference;
  VadSegments vad;
  std::vector<std::string> speakers;  // names in column order
  std::vector<int> identities;        // pool identity per column
};

// Renders reference turns: each segment is contiguous audio of its speaker,
// overlaps add, and a low noise floor fills the rest.
template <class Rng>
Conversation render_conversation(const ConversationConfig& c, const std::vector<int>& identities, const SpeakerPool& pool,
                                 const std::string& id, Rng& rng) {
  Conversation conv;
  conv.id = id;
  conv.reference = generate_turns(c, identities, id, rng);
  const int sr = pool.sample_rate();
  std::vector<float> audio(std::size_t(c.duration_s * sr) + kFbankTail, 0.0f);
  std::normal_distribution<double> g(0, c.noise_rms);
  for (auto& v : audio) v = float(g(rng));
  for (const auto& s : conv.reference) {
    const std::size_t a = std::size_t(std::llround(s.onset_s * sr));
    const std::size_t b = std::min(audio.size(), std::size_t(std::llround(s.offset_s() * sr)));
    const auto run = pool.draw(std::stoi(s.speaker.substr(1)), b - a, rng);
    for (std::size_t i = a; i < b; ++i) audio[i] += run[i - a];
  }
  conv.audio = AudioSignal::mono(std::move(audio), sr);
  std::vector<VadSegments::Interval> iv;
  for (const auto& s : conv.reference) iv.push_back({s.onset_s, s.offset_s()});
  conv.vad = VadSegments::merged(std::move(iv));
  for (int idn : identities) {
    conv.speakers.push_back("S" + std::to_string(idn));
    conv.identities.push_back(idn);
  }
  return conv;
}

}  // namespace otsvad
