#pragma once

// Gradient-check cases for every neural-core operator, shared by the unit
// tests and the acceptance run. Each builder draws fresh inputs from rng.

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "otsvad/core/attention.hpp"
#include "otsvad/core/conv.hpp"
#include "otsvad/core/lstm.hpp"
#include "otsvad/core/norm.hpp"
#include "support/gradcheck.hpp"

namespace otsvad::testing {

using Inputs = std::vector<TensorD>;
using Case = std::pair<std::function<TensorD(const Inputs&)>, Inputs>;
using CaseBuilder = std::function<Case(std::mt19937_64&)>;

inline std::vector<std::pair<std::string, CaseBuilder>> op_cases() {
  std::vector<std::pair<std::string, CaseBuilder>> cases;
  auto add = [&](std::string name, CaseBuilder b) { cases.emplace_back(std::move(name), std::move(b)); };
  add("add", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::add(in[0], in[1]); },
                {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}};
  });
  add("mul", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::mul(in[0], in[1]); },
                {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}};
  });
  add("relu", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::relu(in[0]); }, {random_tensor({5, 6}, rng)}};
  });
  add("sigmoid", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::sigmoid(in[0]); }, {random_tensor({5, 6}, rng, 2.0)}};
  });
  add("softmax", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::softmax(in[0]); }, {random_tensor({4, 7}, rng, 2.0)}};
  });
  add("linear", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::linear(in[0], in[1], in[2]); },
                {random_tensor({2, 3, 5}, rng), random_tensor({4, 5}, rng), random_tensor({4}, rng)}};
  });
  add("conv2d", [](auto& rng) {
    ops::Conv2dGeometry g{3, 3, 2, 1, 1, 1};
    return Case{[g](const Inputs& in) { return ops::conv2d(in[0], in[1], in[2], g); },
                {random_tensor({2, 3, 6, 5}, rng), random_tensor({4, 3, 3, 3}, rng), random_tensor({4}, rng)}};
  });
  // 2 x 20 x 40 outputs span several im2col blocks, with rows split mid-way.
  add("conv2d-blocked", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::conv2d(in[0], in[1], in[2], {}); },
                {random_tensor({1, 2, 20, 40}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)}};
  });
  add("conv1d", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::conv1d(in[0], in[1], in[2], 2, 1); },
                {random_tensor({2, 3, 9}, rng), random_tensor({4, 3, 3}, rng), random_tensor({4}, rng)}};
  });
  add("depthwise_conv1d", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::depthwise_conv1d(in[0], in[1], in[2], 2); },
                {random_tensor({2, 3, 7}, rng), random_tensor({3, 5}, rng), random_tensor({3}, rng)}};
  });
  add("layer_norm", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::layer_norm(in[0], in[1], in[2]); },
                {random_tensor({3, 6}, rng, 2.0), random_tensor({6}, rng), random_tensor({6}, rng)}};
  });
  for (bool training : {true, false}) {
    add(training ? "batch_norm2d_train" : "batch_norm2d_eval", [training](auto& rng) {
      auto stats = std::make_shared<ops::BatchNormStats<double>>();
      stats->running_mean = random_tensor({3}, rng, 1.0, false);
      stats->running_var = TensorD::full({3}, 1.7);
      return Case{[stats, training](const Inputs& in) {
                    return ops::batch_norm2d(in[0], in[1], in[2], *stats, training);
                  },
                  {random_tensor({2, 3, 4, 3}, rng, 2.0), random_tensor({3}, rng), random_tensor({3}, rng)}};
    });
  }
  add("multi_head_attention", [](auto& rng) {
    const std::size_t E = 8;
    Inputs in{random_tensor({2, 5, E}, rng)};
    for (int i = 0; i < 4; ++i) {
      in.push_back(random_tensor({E, E}, rng, 0.5));
      in.push_back(random_tensor({E}, rng, 0.5));
    }
    return Case{[](const Inputs& in) {
                  ops::AttentionParams<double> p{in[1], in[2], in[3], in[4], in[5], in[6], in[7], in[8]};
                  return ops::multi_head_attention(in[0], p, 2);
                },
                in};
  });
  add("feed_forward", [](auto& rng) {
    return Case{[](const Inputs& in) {
                  return ops::feed_forward(in[0], ops::FeedForwardParams<double>{in[1], in[2], in[3], in[4]});
                },
                {random_tensor({2, 3, 4}, rng), random_tensor({6, 4}, rng), random_tensor({6}, rng),
                 random_tensor({4, 6}, rng), random_tensor({4}, rng)}};
  });
  add("bilstm", [](auto& rng) {
    const std::size_t F = 3, H = 4;
    Inputs in{random_tensor({2, 5, F}, rng)};
    for (int d = 0; d < 2; ++d) {
      in.push_back(random_tensor({4 * H, F}, rng, 0.5));
      in.push_back(random_tensor({4 * H, H}, rng, 0.5));
      in.push_back(random_tensor({4 * H}, rng, 0.5));
    }
    return Case{[](const Inputs& in) {
                  return ops::bilstm(in[0], ops::LstmDirectionParams<double>{in[1], in[2], in[3]},
                                     ops::LstmDirectionParams<double>{in[4], in[5], in[6]});
                },
                in};
  });
  add("concat", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::concat<double>({in[0], in[1]}, 1); },
                {random_tensor({2, 3, 2}, rng), random_tensor({2, 1, 2}, rng)}};
  });
  add("permute", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::permute(in[0], {2, 0, 1}); }, {random_tensor({2, 3, 4}, rng)}};
  });
  add("slice", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::slice(in[0], 1, 1, 2); }, {random_tensor({2, 4, 3}, rng)}};
  });
  add("mean_axis", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::mean_axis(in[0], 1); }, {random_tensor({2, 4, 3}, rng)}};
  });
  add("stats_pool", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::stats_pool(in[0]); }, {random_tensor({2, 3, 5, 4}, rng)}};
  });
  add("speaker_frame_concat", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::speaker_frame_concat(in[0], in[1]); },
                {random_tensor({2, 3, 4}, rng), random_tensor({2, 5, 4}, rng)}};
  });
  add("concat_speaker_mean", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::concat_speaker_mean(in[0]); },
                {random_tensor({2, 3, 4, 2}, rng)}};
  });
  add("masked_mean", [](auto& rng) {
    std::bernoulli_distribution coin(0.5);
    std::vector<double> mask(2 * 6 * 3);
    for (auto& m : mask) m = coin(rng) ? 1.0 : 0.0;
    return Case{[mask](const Inputs& in) { return ops::masked_mean(in[0], mask, 3); },
                {random_tensor({2, 6, 4}, rng)}};
  });
  add("bce_loss", [](auto& rng) {
    std::uniform_real_distribution<double> u(0.05, 0.95);
    std::bernoulli_distribution coin(0.5);
    std::vector<double> p(12), y(12);
    for (auto& v : p) v = u(rng);
    for (auto& v : y) v = coin(rng);
    return Case{[y](const Inputs& in) { return ops::bce_loss(in[0], y); }, {TensorD::from({3, 4}, p, true)}};
  });
  add("cross_entropy", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::cross_entropy(in[0], {0, 2, 1}); },
                {random_tensor({3, 4}, rng)}};
  });
  add("scale", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::scale(in[0], 0.37); }, {random_tensor({3, 4}, rng)}};
  });
  add("sum", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::sum(in[0]); }, {random_tensor({3, 4}, rng)}};
  });
  add("reshape", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::reshape(in[0], {4, 3}); }, {random_tensor({2, 6}, rng)}};
  });
  add("dropout", [](auto& rng) {
    // The same seed every evaluation replays the same mask.
    const auto seed = rng();
    return Case{[seed](const Inputs& in) {
                  std::mt19937_64 r(seed);
                  return ops::dropout(in[0], 0.3, true, r);
                },
                {random_tensor({4, 5}, rng)}};
  });
  add("scaled_dot_attention", [](auto& rng) {
    return Case{[](const Inputs& in) { return ops::scaled_dot_attention(in[0], in[1], in[2], 2); },
                {random_tensor({2, 4, 6}, rng), random_tensor({2, 4, 6}, rng), random_tensor({2, 4, 6}, rng)}};
  });
  return cases;
}

}  // namespace otsvad::testing
