#pragma once

// The complete OTS-VAD network: front-end, detection head and optional
// cross-channel attention, sharing one parameter store.

#include <nlohmann/json.hpp>
#include <random>
#include <string>
#include <vector>

#include "otsvad/core/checkpoint.hpp"
#include "otsvad/model/frontend.hpp"
#include "otsvad/model/multichannel.hpp"
#include "otsvad/util/json_section.hpp"

namespace otsvad {

struct ModelConfig {
  FrontendConfig frontend;
  BackendConfig backend;
  bool multichannel = false;
  MultichannelConfig mc;

  void validate() const {
    frontend.validate();
    backend.validate();
    if (frontend.embed_dim != backend.embed_dim)
      throw ConfigError("model: frontend.embed_dim and backend.embed_dim differ");
    if (multichannel) mc.validate(2 * backend.embed_dim);
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  const auto& f = c.frontend;
  const auto& b = c.backend;
  j = {{"frontend",
        {{"variant", f.variant == FrontendVariant::kResidual ? "residual" : "conformer"},
         {"mel_bins", f.mel_bins},
         {"embed_dim", f.embed_dim},
         {"widths", f.widths},
         {"strides", f.strides},
         {"blocks_per_stage", f.blocks_per_stage},
         {"model_dim", f.model_dim},
         {"layers", f.layers},
         {"heads", f.heads},
         {"ffn_dim", f.ffn_dim},
         {"conv_kernel", f.conv_kernel}}},
       {"backend",
        {{"num_speakers", b.num_speakers},
         {"model_dim", b.model_dim},
         {"layers", b.layers},
         {"heads", b.heads},
         {"ffn_dim", b.ffn_dim},
         {"dropout", b.dropout},
         {"score_dim", b.score_dim},
         {"lstm_hidden", b.lstm_hidden},
         {"joint", b.joint == JointMode::kSymmetric ? "symmetric" : "concat"}}},
       {"multichannel",
        {{"enabled", c.multichannel}, {"layers", c.mc.layers}, {"heads", c.mc.heads}, {"ffn_dim", c.mc.ffn_dim}}}};
}

// Keys missing from the section keep their value in `c`.
inline ModelConfig read_model_config(JsonSection s, ModelConfig c = {}) {
  auto f = s.section("frontend");
  std::string variant = c.frontend.variant == FrontendVariant::kResidual ? "residual" : "conformer";
  f.get("variant", variant);
  if (variant == "residual")
    c.frontend.variant = FrontendVariant::kResidual;
  else if (variant == "conformer")
    c.frontend.variant = FrontendVariant::kConformer;
  else
    throw ConfigError(f.path() + ".variant: expected residual or conformer, got " + variant);
  f.get("mel_bins", c.frontend.mel_bins);
  f.get("embed_dim", c.frontend.embed_dim);
  f.get("widths", c.frontend.widths);
  f.get("strides", c.frontend.strides);
  f.get("blocks_per_stage", c.frontend.blocks_per_stage);
  f.get("model_dim", c.frontend.model_dim);
  f.get("layers", c.frontend.layers);
  f.get("heads", c.frontend.heads);
  f.get("ffn_dim", c.frontend.ffn_dim);
  f.get("conv_kernel", c.frontend.conv_kernel);
  f.finish();
  auto b = s.section("backend");
  b.get("num_speakers", c.backend.num_speakers);
  b.get("model_dim", c.backend.model_dim);
  b.get("layers", c.backend.layers);
  b.get("heads", c.backend.heads);
  b.get("ffn_dim", c.backend.ffn_dim);
  b.get("dropout", c.backend.dropout);
  b.get("score_dim", c.backend.score_dim);
  b.get("lstm_hidden", c.backend.lstm_hidden);
  std::string joint = c.backend.joint == JointMode::kSymmetric ? "symmetric" : "concat";
  b.get("joint", joint);
  if (joint == "symmetric")
    c.backend.joint = JointMode::kSymmetric;
  else if (joint == "concat")
    c.backend.joint = JointMode::kConcat;
  else
    throw ConfigError(b.path() + ".joint: expected symmetric or concat, got " + joint);
  b.finish();
  auto m = s.section("multichannel");
  m.get("enabled", c.multichannel);
  m.get("layers", c.mc.layers);
  m.get("heads", c.mc.heads);
  m.get("ffn_dim", c.mc.ffn_dim);
  m.finish();
  s.finish();
  c.backend.embed_dim = c.frontend.embed_dim;
  c.validate();
  return c;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) { return read_model_config(JsonSection(j, "model")); }

template <class T>
class OtsVadModel {
 public:
  explicit OtsVadModel(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.backend.embed_dim = cfg_.frontend.embed_dim;
    cfg_.validate();
    std::mt19937_64 rng(seed);
    init_frontend(store_, cfg_.frontend, rng);
    init_backend(store_, cfg_.backend, rng);
    if (cfg_.multichannel) init_multichannel(store_, cfg_.mc, cfg_.frontend.embed_dim, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& store() { return store_; }
  const ParameterStore<T>& store() const { return store_; }
  std::size_t num_speakers() const { return cfg_.backend.num_speakers; }
  std::size_t embed_dim() const { return cfg_.frontend.embed_dim; }

  // features [B, L, H] -> [B, ceil(L/8), D].
  Tensor<T> embed(const Tensor<T>& features, bool training = false) {
    return frontend_forward(store_, cfg_.frontend, features, training);
  }

  // bank [B, N, D], frames [B, T, D] -> [B, T, N].
  Tensor<T> detect(const Tensor<T>& bank, const Tensor<T>& frames, std::mt19937_64* dropout_rng = nullptr) {
    return detect_forward(store_, cfg_.backend, bank, frames, dropout_rng);
  }

  // Per-channel banks and frames -> [B, T, N]. Falls back to the
  // single-channel head when the model has no cross-channel layers and C = 1.
  Tensor<T> detect_multichannel(const std::vector<Tensor<T>>& banks, const std::vector<Tensor<T>>& frames,
                                std::mt19937_64* dropout_rng = nullptr) {
    if (!cfg_.multichannel) {
      if (banks.size() != 1) throw ConfigError("model: multichannel input needs a multichannel checkpoint");
      return detect(banks[0], frames[0], dropout_rng);
    }
    return mc_detect_forward(store_, cfg_.mc, cfg_.backend, banks, frames, dropout_rng);
  }

  nlohmann::json metadata(nlohmann::json extra = nlohmann::json::object()) const {
    extra["model"] = cfg_;
    return extra;
  }

  void save(const std::string& path, nlohmann::json extra = nlohmann::json::object()) const {
    save_checkpoint(path, store_, metadata(std::move(extra)));
  }

  // Builds a model from the configuration stored in a checkpoint and loads
  // its parameters.
  static OtsVadModel load(const std::string& path) {
    const auto manifest = read_checkpoint_manifest(path);
    if (!manifest.contains("metadata") || !manifest["metadata"].contains("model"))
      throw DataError("checkpoint has no model configuration: " + path);
    OtsVadModel m(model_config_from_json(manifest["metadata"]["model"]));
    load_checkpoint(path, m.store_);
    return m;
  }

 private:
  ModelConfig cfg_;
  ParameterStore<T> store_;
};

}  // namespace otsvad
