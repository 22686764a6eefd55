#pragma once

// A detector without a network. Each frame's embedding is the prototype of
// the scripted speaker(s) plus small deterministic noise; detection scores
// each bank row by cosine similarity. Frames are addressed by absolute
// stream position, so scripts can place speakers in time.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "otsvad/stream/engine.hpp"

namespace otsvad::testing {

template <class T>
class ScriptedDetector : public Detector<T> {
 public:
  // who(frame) lists the speaker ids active at a frame (ids index prototypes).
  ScriptedDetector(std::size_t N, std::size_t D, std::size_t identities, std::function<std::vector<int>(std::size_t)> who,
                   std::uint64_t seed = 1)
      : N_(N), D_(D), who_(std::move(who)), seed_(seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0, 1);
    protos_.assign(identities, std::vector<double>(D));
    for (auto& p : protos_) {
      double nrm = 0;
      for (auto& v : p) nrm += (v = g(rng)) * v;
      for (auto& v : p) v /= std::sqrt(nrm);
    }
  }

  std::size_t num_speakers() const override { return N_; }
  std::size_t embed_dim() const override { return D_; }

  std::vector<T> frame_embedding(std::size_t frame) const {
    std::mt19937_64 rng(seed_ * 7919 + frame);
    std::normal_distribution<double> g(0, noise);
    std::vector<T> e(D_);
    const auto ids = who_(frame);
    for (std::size_t d = 0; d < D_; ++d) {
      double v = g(rng);
      for (int id : ids) v += protos_[std::size_t(id)][d];
      e[d] = T(v);
    }
    return e;
  }

  std::vector<std::vector<T>> embed(const BlockWindow& w, const std::vector<FeatureMatrix>&) override {
    ++embed_calls;
    std::vector<T> out;
    for (std::size_t t = 0; t < w.frames; ++t) {
      const auto e = frame_embedding(w.start + t);
      out.insert(out.end(), e.begin(), e.end());
    }
    return {out};
  }

  std::vector<T> detect(const BlockWindow& w, const std::vector<std::vector<T>>& banks,
                        const std::vector<std::vector<T>>& emb) override {
    ++detect_calls;
    std::vector<T> p(w.frames * N_, T(0));
    for (std::size_t t = 0; t < w.frames; ++t)
      for (std::size_t n = 0; n < N_; ++n) {
        double dot = 0, a = 0, b = 0;
        for (std::size_t d = 0; d < D_; ++d) {
          const double x = double(banks[0][n * D_ + d]), y = double(emb[0][t * D_ + d]);
          dot += x * y;
          a += x * x;
          b += y * y;
        }
        const double cos = (a > 0 && b > 0) ? dot / std::sqrt(a * b) : 0.0;
        p[t * N_ + n] = T(1.0 / (1.0 + std::exp(-sharpness * (cos - 0.5))));
      }
    return p;
  }

  double noise = 0.05;
  double sharpness = 20.0;
  std::size_t embed_calls = 0, detect_calls = 0;

 private:
  std::size_t N_, D_;
  std::function<std::vector<int>(std::size_t)> who_;
  std::uint64_t seed_;
  std::vector<std::vector<double>> protos_;
};

// Zero-valued feature rows (1 bin) standing in for `frames` 0.08 s frames.
inline FeatureMatrix dummy_rows(std::size_t frames) {
  FeatureMatrix fm;
  fm.bins = 1;
  fm.values.assign(frames * StreamEngine<float>::kRowsPerFrame, 0.0f);
  return fm;
}

}  // namespace otsvad::testing
