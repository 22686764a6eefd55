#pragma once

// Frame-level speaker-embedding extractors. Both variants map log-Mel
// features [B, L, H] to embeddings [B, ceil(L/8), D], one per 0.08 s.

#include <string>
#include <vector>

#include "otsvad/audio/fbank.hpp"
#include "otsvad/model/layers.hpp"

namespace otsvad {

enum class FrontendVariant { kResidual, kConformer };

struct FrontendConfig {
  FrontendVariant variant = FrontendVariant::kResidual;
  std::size_t mel_bins = 80;
  std::size_t embed_dim = 64;

  // Residual variant: stem conv, then one stage per width.
  std::vector<std::size_t> widths{16, 32, 64, 128};
  std::vector<std::size_t> strides{1, 2, 2, 2};
  std::size_t blocks_per_stage = 2;

  // Conformer/MFA variant.
  std::size_t model_dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t conv_kernel = 15;

  static constexpr std::size_t kDownsample = 8;

  void validate() const {
    if (mel_bins == 0 || embed_dim == 0) throw ConfigError("frontend: mel_bins and embed_dim must be positive");
    if (variant == FrontendVariant::kResidual) {
      if (widths.empty() || widths.size() != strides.size())
        throw ConfigError("frontend: widths and strides must be non-empty and of equal length");
      std::size_t total = 1;
      for (const auto s : strides) {
        if (s != 1 && s != 2) throw ConfigError("frontend: stage strides must be 1 or 2");
        total *= s;
      }
      if (total != kDownsample) throw ConfigError("frontend: stage strides must multiply to 8");
      if (blocks_per_stage == 0) throw ConfigError("frontend: blocks_per_stage must be positive");
    } else {
      if (layers == 0 || heads == 0 || model_dim % heads != 0)
        throw ConfigError("frontend: conformer needs layers > 0 and heads dividing model_dim");
      if (conv_kernel % 2 == 0) throw ConfigError("frontend: conformer conv_kernel must be odd");
    }
  }

  std::size_t output_frames(std::size_t L) const { return (L + kDownsample - 1) / kDownsample; }
};

// Frame-level global statistics pooling of a feature map [B, C, H', T]:
// per frame, the mean over H' of each channel followed by the population
// standard deviation. Output [B, T, 2C].
template <class T>
Tensor<T> frame_gsp(const Tensor<T>& map) {
  return ops::stats_pool(map);
}

// Frame-major feature matrix as a [1, L, H] tensor.
template <class T>
Tensor<T> features_to_tensor(const FeatureMatrix& fm) {
  return Tensor<T>::from({1, fm.num_frames(), fm.bins}, std::vector<T>(fm.values.begin(), fm.values.end()));
}

// Right-pads axis 1 of x [B, L, H] with zeros to a multiple of m.
template <class T>
Tensor<T> pad_time(const Tensor<T>& x, std::size_t m) {
  const std::size_t L = x.dim(1), rem = L % m;
  if (rem == 0) return x;
  return ops::concat<T>({x, Tensor<T>::zeros({x.dim(0), m - rem, x.dim(2)})}, 1);
}

namespace detail {

inline std::string stage_block(std::size_t s, std::size_t b) {
  return "frontend/stage" + std::to_string(s) + "/block" + std::to_string(b);
}

}  // namespace detail

template <class T, class Rng>
void init_frontend(ParameterStore<T>& st, const FrontendConfig& cfg, Rng& rng) {
  cfg.validate();
  using namespace layers;
  if (cfg.variant == FrontendVariant::kResidual) {
    add_conv2d(st, "frontend/stem/conv", 1, cfg.widths[0], 3, rng);
    add_batch_norm(st, "frontend/stem/bn", cfg.widths[0]);
    std::size_t in = cfg.widths[0];
    for (std::size_t s = 0; s < cfg.widths.size(); ++s) {
      const std::size_t out = cfg.widths[s];
      for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) {
        const std::string p = detail::stage_block(s, b);
        const std::size_t stride = b == 0 ? cfg.strides[s] : 1;
        add_conv2d(st, p + "/conv1", in, out, 3, rng);
        add_batch_norm(st, p + "/bn1", out);
        add_conv2d(st, p + "/conv2", out, out, 3, rng);
        add_batch_norm(st, p + "/bn2", out);
        if (stride != 1 || in != out) {
          add_conv2d(st, p + "/shortcut", in, out, 1, rng);
          add_batch_norm(st, p + "/shortcut_bn", out);
        }
        in = out;
      }
    }
    add_linear(st, "frontend/proj", 2 * in, cfg.embed_dim, rng);
  } else {
    const std::size_t d = cfg.model_dim;
    add_conv1d(st, "frontend/subsample", cfg.mel_bins, d, 3, rng);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string p = "frontend/conformer" + std::to_string(l);
      add_layer_norm(st, p + "/ffn1_ln", d);
      add_feed_forward(st, p + "/ffn1", d, cfg.ffn_dim, rng);
      add_layer_norm(st, p + "/mhsa_ln", d);
      add_attention(st, p + "/mhsa", d, rng);
      add_layer_norm(st, p + "/conv_ln", d);
      add_linear(st, p + "/conv_pw1", d, 2 * d, rng);
      st.add(p + "/conv_dw/w", uniform_init<T>({d, cfg.conv_kernel}, cfg.conv_kernel, rng));
      st.add(p + "/conv_dw/b", uniform_init<T>({d}, cfg.conv_kernel, rng));
      add_batch_norm(st, p + "/conv_bn", d);
      add_linear(st, p + "/conv_pw2", d, d, rng);
      add_layer_norm(st, p + "/ffn2_ln", d);
      add_feed_forward(st, p + "/ffn2", d, cfg.ffn_dim, rng);
      add_layer_norm(st, p + "/out_ln", d);
    }
    add_layer_norm(st, "frontend/mfa_ln", d * cfg.layers);
    add_conv1d(st, "frontend/down1", d * cfg.layers, cfg.embed_dim, 3, rng);
    add_conv1d(st, "frontend/down2", cfg.embed_dim, cfg.embed_dim, 3, rng);
  }
}

namespace detail {

template <class T>
Tensor<T> conv_bn(ParameterStore<T>& st, const std::string& conv, const std::string& bn, const Tensor<T>& x,
                  std::size_t stride, bool training) {
  const auto& w = st.at(conv + "/w");
  const std::size_t k = w.dim(2), pad = k / 2;
  auto y = ops::conv2d(x, w, Tensor<T>{}, ops::Conv2dGeometry{k, k, stride, stride, pad, pad});
  return layers::batch_norm(st, bn, y, training);
}

// x [B, C, H, W].
template <class T>
Tensor<T> residual_forward(ParameterStore<T>& st, const FrontendConfig& cfg, Tensor<T> x, bool training) {
  x = ops::relu(conv_bn(st, "frontend/stem/conv", "frontend/stem/bn", x, 1, training));
  for (std::size_t s = 0; s < cfg.widths.size(); ++s)
    for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) {
      const std::string p = stage_block(s, b);
      const std::size_t stride = b == 0 ? cfg.strides[s] : 1;
      auto y = ops::relu(conv_bn(st, p + "/conv1", p + "/bn1", x, stride, training));
      y = conv_bn(st, p + "/conv2", p + "/bn2", y, 1, training);
      auto sc = st.contains(p + "/shortcut/w") ? conv_bn(st, p + "/shortcut", p + "/shortcut_bn", x, stride, training)
                                                : x;
      x = ops::relu(ops::add(y, sc));
    }
  return layers::linear(st, "frontend/proj", frame_gsp(x));
}

// Macaron conformer block over x [B, S, d].
template <class T>
Tensor<T> conformer_block(ParameterStore<T>& st, const std::string& p, const FrontendConfig& cfg, Tensor<T> x,
                          bool training) {
  using namespace layers;
  const std::size_t B = x.dim(0), S = x.dim(1), d = x.dim(2);
  x = ops::add(x, ops::scale(ops::feed_forward(layer_norm(st, p + "/ffn1_ln", x), feed_forward(st, p + "/ffn1")),
                             T(0.5)));
  x = ops::add(x, ops::multi_head_attention(layer_norm(st, p + "/mhsa_ln", x), attention(st, p + "/mhsa"), cfg.heads));
  auto c = linear(st, p + "/conv_pw1", layer_norm(st, p + "/conv_ln", x));
  c = ops::mul(ops::slice(c, 2, 0, d), ops::sigmoid(ops::slice(c, 2, d, d)));  // GLU
  c = ops::permute(c, {0, 2, 1});
  c = ops::depthwise_conv1d(c, st.at(p + "/conv_dw/w"), st.at(p + "/conv_dw/b"), cfg.conv_kernel / 2);
  c = ops::reshape(batch_norm(st, p + "/conv_bn", ops::reshape(c, {B, d, 1, S}), training), {B, d, S});
  c = ops::permute(swish(c), {0, 2, 1});
  x = ops::add(x, linear(st, p + "/conv_pw2", c));
  x = ops::add(x, ops::scale(ops::feed_forward(layer_norm(st, p + "/ffn2_ln", x), feed_forward(st, p + "/ffn2")),
                             T(0.5)));
  return layer_norm(st, p + "/out_ln", x);
}

// x [B, L, H] with L a multiple of 8.
template <class T>
Tensor<T> conformer_forward(ParameterStore<T>& st, const FrontendConfig& cfg, const Tensor<T>& x, bool training) {
  auto h = ops::conv1d(ops::permute(x, {0, 2, 1}), st.at("frontend/subsample/w"), st.at("frontend/subsample/b"), 2, 1);
  h = ops::permute(h, {0, 2, 1});  // [B, L/2, d]
  std::vector<Tensor<T>> outs;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    h = conformer_block(st, "frontend/conformer" + std::to_string(l), cfg, h, training);
    outs.push_back(h);
  }
  auto m = ops::permute(layers::layer_norm(st, "frontend/mfa_ln", ops::concat(outs, 2)), {0, 2, 1});
  m = ops::relu(ops::conv1d(m, st.at("frontend/down1/w"), st.at("frontend/down1/b"), 2, 1));
  m = ops::conv1d(m, st.at("frontend/down2/w"), st.at("frontend/down2/b"), 2, 1);
  return ops::permute(m, {0, 2, 1});
}

}  // namespace detail

// features [B, L, H] -> embeddings [B, ceil(L/8), D]. training selects
// batch statistics in the normalisation layers.
template <class T>
Tensor<T> frontend_forward(ParameterStore<T>& st, const FrontendConfig& cfg, const Tensor<T>& features,
                           bool training) {
  if (features.rank() != 3 || features.dim(2) != cfg.mel_bins)
    throw ShapeError("frontend: expected features [B, L, " + std::to_string(cfg.mel_bins) + "], got " +
                     shape_str(features.shape()));
  if (features.dim(1) == 0) throw InputError("frontend: empty input (L = 0)");
  auto x = pad_time(features, FrontendConfig::kDownsample);
  if (cfg.variant == FrontendVariant::kResidual) {
    const std::size_t B = x.dim(0), L = x.dim(1), H = x.dim(2);
    return detail::residual_forward(st, cfg, ops::reshape(ops::permute(x, {0, 2, 1}), {B, 1, H, L}), training);
  }
  return detail::conformer_forward(st, cfg, x, training);
}

}  // namespace otsvad
