#pragma once

// The one configuration document every command reads. Sections:
//   seed       master seed
//   model      network dimensions (see ModelConfig)
//   features   fbank settings plus allow_resample
//   stream     block length/shift, thresholds, strategy, pruning
//   train      schedule (see TrainConfig)
//   data       synthetic corpus recipe plus corpus_dir
//   scoring    collar_s, frame_s
//   tune       threshold grids
// Unknown keys anywhere are errors. effective_config() writes back every
// field with defaults applied, and reading it again gives the same run.

#include <fstream>
#include <sstream>

#include "otsvad/io/corpus.hpp"
#include "otsvad/model/model.hpp"
#include "otsvad/scoring/score.hpp"
#include "otsvad/stream/state.hpp"
#include "otsvad/train/trainer.hpp"

namespace otsvad {

struct TuneConfig {
  std::vector<double> thres_upper{0.6, 0.7, 0.8, 0.9};
  std::vector<double> thres_lower{0.1, 0.2, 0.3, 0.4};
  double block_length_s = 16.0;
  double block_shift_s = 0.8;
};

struct RunConfig {
  std::uint64_t seed = 7;
  ModelConfig model;
  FeatureConfig features;
  bool allow_resample = false;
  StreamConfig stream;
  TrainConfig train;
  CorpusConfig data;
  std::string corpus_dir;
  ScoringConfig scoring;
  TuneConfig tune;

  void validate() const {
    model.validate();
    stream.validate();
    train.validate();
    data.validate();
    if (features.num_mel_bins != model.frontend.mel_bins)
      throw ConfigError("features.num_mel_bins (" + std::to_string(features.num_mel_bins) +
                        ") must equal model.frontend.mel_bins (" + std::to_string(model.frontend.mel_bins) + ")");
    if (stream.num_speakers != model.backend.num_speakers)
      throw ConfigError("stream.num_speakers must equal model.backend.num_speakers");
    if (scoring.collar_s < 0) throw ConfigError("scoring.collar_s: must be >= 0");
    if (!(scoring.frame_s > 0)) throw ConfigError("scoring.frame_s: must be positive");
  }
};

// The desk configuration: a narrower residual front-end and a 64-wide
// back-end, N = 4, D = 64, three 500-step stages.
inline RunConfig desk_config() {
  RunConfig c;
  c.model.frontend.widths = {8, 16, 32, 64};
  c.model.frontend.blocks_per_stage = 1;
  c.model.backend.model_dim = 64;
  c.model.backend.ffn_dim = 256;
  c.train.pretrain_steps = 200;
  return c;
}

inline nlohmann::json effective_config(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["model"] = c.model;
  const auto& f = c.features;
  j["features"] = {{"sample_rate", f.sample_rate},     {"frame_length_s", f.frame_length_s},
                   {"frame_shift_s", f.frame_shift_s}, {"num_mel_bins", f.num_mel_bins},
                   {"low_freq", f.low_freq},           {"high_freq", f.high_freq},
                   {"log_floor", f.log_floor},         {"allow_resample", c.allow_resample}};
  const auto& s = c.stream;
  j["stream"] = {{"block_length_s", s.block_length_s}, {"block_shift_s", s.block_shift_s},
                 {"thres_upper", s.thres_upper},       {"thres_lower", s.thres_lower},
                 {"strategy", strategy_name(s.strategy)}, {"buffer_prune_k", s.buffer_prune_k}};
  j["train"] = c.train;
  j["data"] = c.data;
  j["data"]["corpus_dir"] = c.corpus_dir;
  j["scoring"] = {{"collar_s", c.scoring.collar_s}, {"frame_s", c.scoring.frame_s}};
  j["tune"] = {{"thres_upper", c.tune.thres_upper},
               {"thres_lower", c.tune.thres_lower},
               {"block_length_s", c.tune.block_length_s},
               {"block_shift_s", c.tune.block_shift_s}};
  return j;
}

// Missing sections and keys keep the desk defaults.
inline RunConfig read_run_config(const nlohmann::json& j) {
  RunConfig c = desk_config();
  JsonSection root(j, "config");
  root.get("seed", c.seed);
  c.model = read_model_config(root.section("model"), c.model);
  {
    auto f = root.section("features");
    f.get("sample_rate", c.features.sample_rate);
    f.get("frame_length_s", c.features.frame_length_s);
    f.get("frame_shift_s", c.features.frame_shift_s);
    f.get("num_mel_bins", c.features.num_mel_bins);
    f.get("low_freq", c.features.low_freq);
    f.get("high_freq", c.features.high_freq);
    f.get("log_floor", c.features.log_floor);
    f.get("allow_resample", c.allow_resample);
    f.finish();
  }
  {
    auto s = root.section("stream");
    s.get("block_length_s", c.stream.block_length_s);
    s.get("block_shift_s", c.stream.block_shift_s);
    s.get("thres_upper", c.stream.thres_upper);
    s.get("thres_lower", c.stream.thres_lower);
    std::string strategy = strategy_name(c.stream.strategy);
    s.get("strategy", strategy);
    c.stream.strategy = parse_strategy(strategy);
    s.get("buffer_prune_k", c.stream.buffer_prune_k);
    s.finish();
  }
  c.train = read_train_config(root.section("train"), c.train);
  {
    auto d = root.section("data");
    d.get("corpus_dir", c.corpus_dir);
    c.data = read_corpus_config(d);
    d.finish();
  }
  {
    auto s = root.section("scoring");
    s.get("collar_s", c.scoring.collar_s);
    s.get("frame_s", c.scoring.frame_s);
    s.finish();
  }
  {
    auto t = root.section("tune");
    t.get("thres_upper", c.tune.thres_upper);
    t.get("thres_lower", c.tune.thres_lower);
    t.get("block_length_s", c.tune.block_length_s);
    t.get("block_shift_s", c.tune.block_shift_s);
    t.finish();
  }
  root.finish();
  c.stream.num_speakers = c.model.backend.num_speakers;
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  try {
    return read_run_config(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace otsvad
