#pragma once

// Small models and synthetic samples for training tests and the acceptance
// run.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "otsvad/train/trainer.hpp"
#include "support/gradcheck.hpp"

namespace otsvad::testing {

inline ModelConfig tiny_config(std::size_t speakers = 2) {
  ModelConfig c;
  c.frontend.mel_bins = 8;
  c.frontend.embed_dim = 4;
  c.frontend.widths = {2, 2, 3, 3};
  c.frontend.blocks_per_stage = 1;
  c.backend.num_speakers = speakers;
  c.backend.model_dim = 8;
  c.backend.layers = 1;
  c.backend.heads = 2;
  c.backend.ffn_dim = 8;
  c.backend.score_dim = 3;
  c.backend.lstm_hidden = 3;
  c.backend.dropout = 0.0;
  return c;
}

inline FeatureMatrix random_features(std::size_t rows, std::size_t bins, std::mt19937_64& rng) {
  std::normal_distribution<float> d(0, 1);
  FeatureMatrix fm;
  fm.bins = bins;
  fm.values.resize(rows * bins);
  for (auto& v : fm.values) v = d(rng);
  return fm;
}

inline LabelMatrix random_labels(std::size_t t, std::size_t n, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution on(p);
  LabelMatrix y(t, n);
  for (auto& v : y.values) v = on(rng);
  return y;
}

// A sample whose speakers carry a constant offset in the features, so the
// task is learnable from a handful of samples.
inline TrainingSample toy_sample(std::size_t frames, std::size_t N, std::size_t bins, std::mt19937_64& rng) {
  TrainingSample s;
  for (BlockHalf* h : {&s.left, &s.right}) {
    h->labels = random_labels(frames, N, 0.4, rng);
    h->features = random_features(frames * 8, bins, rng);
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t n = 0; n < N; ++n)
        if (h->labels.at(t, n))
          for (std::size_t r = 0; r < 8; ++r) h->features.values[(t * 8 + r) * bins + n] += 3.0f;
  }
  s.identities.assign(N, 0);
  return s;
}

struct ToyData {
  SpeakerPool pool{default_speakers(4), 2, 3.0, 5};
  std::vector<CompactRecording> real;
  SimulationRecipe recipe;

  explicit ToyData(std::size_t frames = 64, std::size_t bins = 80) {
    recipe.pool = &pool;
    std::mt19937_64 rng(9);
    for (int k = 0; k < 2; ++k) {
      CompactRecording r;
      r.id = "r" + std::to_string(k);
      r.labels = random_labels(frames, 2, 0.5, rng);
      r.features = random_features(frames * 8, bins, rng);
      r.identities = {k, k + 2};
      real.push_back(r);
      recipe.sources.push_back(r.labels);
    }
  }
};

// Finite-difference check of the full train-step loss (front-end, target
// extraction and detection) against every trainable parameter. T = 8
// frames per half, N = 2, D = 4.
inline GradCheckResult micro_pipeline_gradcheck(std::uint64_t seed, std::size_t per_param = 8) {
  OtsVadModel<double> m(tiny_config(2), 4);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0, 0.5);
  for (const auto& n : m.store().names())
    if (m.store().entry(n).kind == EntryKind::kParameter)
      for (auto& v : m.store().at(n).values()) v = d(rng);
  for (const auto& n : m.store().names())
    if (n.find("running_var") != std::string::npos)
      for (auto& v : m.store().at(n).values()) v = 0.5 + std::abs(v);
  std::vector<TrainingSample> batch{toy_sample(8, 2, 8, rng)};
  // Both slots active in the left half.
  batch[0].left.labels.at(0, 0) = 1;
  batch[0].left.labels.at(0, 1) = 0;
  batch[0].left.labels.at(1, 1) = 1;
  batch[0].left.labels.at(1, 0) = 0;
  std::vector<TensorD> inputs;
  for (const auto& n : m.store().names())
    if (m.store().entry(n).kind == EntryKind::kParameter) inputs.push_back(m.store().at(n));
  return gradcheck([&](const std::vector<TensorD>&) { return pipeline_loss(m, batch, true, false, nullptr).loss; },
                   inputs, rng, 1e-6, per_param);
}

}  // namespace otsvad::testing
