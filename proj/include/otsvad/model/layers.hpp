#pragma once

// Parameter registration and lookup helpers shared by the model modules.
// Layers are addressed by a name prefix inside one ParameterStore.

#include <string>

#include "otsvad/core/attention.hpp"
#include "otsvad/core/conv.hpp"
#include "otsvad/core/lstm.hpp"
#include "otsvad/core/norm.hpp"
#include "otsvad/core/params.hpp"

namespace otsvad::layers {

template <class T, class Rng>
void add_linear(ParameterStore<T>& s, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                bool bias = true) {
  s.add(name + "/w", uniform_init<T>({out, in}, in, rng));
  if (bias) s.add(name + "/b", uniform_init<T>({out}, in, rng));
}

template <class T>
void add_zero_linear(ParameterStore<T>& s, const std::string& name, std::size_t in, std::size_t out) {
  s.add(name + "/w", Tensor<T>::zeros({out, in}));
  s.add(name + "/b", Tensor<T>::zeros({out}));
}

template <class T>
Tensor<T> linear(ParameterStore<T>& s, const std::string& name, const Tensor<T>& x) {
  const std::string b = name + "/b";
  return ops::linear(x, s.at(name + "/w"), s.contains(b) ? s.at(b) : Tensor<T>{});
}

template <class T, class Rng>
void add_conv2d(ParameterStore<T>& s, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                Rng& rng) {
  s.add(name + "/w", uniform_init<T>({cout, cin, k, k}, cin * k * k, rng));
}

template <class T, class Rng>
void add_conv1d(ParameterStore<T>& s, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                Rng& rng) {
  s.add(name + "/w", uniform_init<T>({cout, cin, k}, cin * k, rng));
  s.add(name + "/b", uniform_init<T>({cout}, cin * k, rng));
}

template <class T>
void add_batch_norm(ParameterStore<T>& s, const std::string& name, std::size_t c) {
  s.add(name + "/gamma", Tensor<T>::full({c}, T(1)));
  s.add(name + "/beta", Tensor<T>::zeros({c}));
  s.add(name + "/running_mean", Tensor<T>::zeros({c}), EntryKind::kBuffer);
  s.add(name + "/running_var", Tensor<T>::full({c}, T(1)), EntryKind::kBuffer);
}

// x [B, C, H, W].
template <class T>
Tensor<T> batch_norm(ParameterStore<T>& s, const std::string& name, const Tensor<T>& x, bool training) {
  ops::BatchNormStats<T> st{s.at(name + "/running_mean"), s.at(name + "/running_var")};
  return ops::batch_norm2d(x, s.at(name + "/gamma"), s.at(name + "/beta"), st, training);
}

template <class T>
void add_layer_norm(ParameterStore<T>& s, const std::string& name, std::size_t d) {
  s.add(name + "/gamma", Tensor<T>::full({d}, T(1)));
  s.add(name + "/beta", Tensor<T>::zeros({d}));
}

template <class T>
Tensor<T> layer_norm(ParameterStore<T>& s, const std::string& name, const Tensor<T>& x) {
  return ops::layer_norm(x, s.at(name + "/gamma"), s.at(name + "/beta"));
}

// zero_out leaves the output projection at zero, so a residual branch
// x + MHA(x) starts as the identity.
template <class T, class Rng>
void add_attention(ParameterStore<T>& s, const std::string& name, std::size_t d, Rng& rng, bool zero_out = false) {
  add_linear(s, name + "/q", d, d, rng);
  add_linear(s, name + "/k", d, d, rng);
  add_linear(s, name + "/v", d, d, rng);
  if (zero_out)
    add_zero_linear(s, name + "/o", d, d);
  else
    add_linear(s, name + "/o", d, d, rng);
}

template <class T>
ops::AttentionParams<T> attention(ParameterStore<T>& s, const std::string& name) {
  return {s.at(name + "/q/w"), s.at(name + "/q/b"), s.at(name + "/k/w"), s.at(name + "/k/b"),
          s.at(name + "/v/w"), s.at(name + "/v/b"), s.at(name + "/o/w"), s.at(name + "/o/b")};
}

template <class T, class Rng>
void add_feed_forward(ParameterStore<T>& s, const std::string& name, std::size_t d, std::size_t hidden, Rng& rng,
                      bool zero_out = false) {
  add_linear(s, name + "/w1", d, hidden, rng);
  if (zero_out)
    add_zero_linear(s, name + "/w2", hidden, d);
  else
    add_linear(s, name + "/w2", hidden, d, rng);
}

template <class T>
ops::FeedForwardParams<T> feed_forward(ParameterStore<T>& s, const std::string& name) {
  return {s.at(name + "/w1/w"), s.at(name + "/w1/b"), s.at(name + "/w2/w"), s.at(name + "/w2/b")};
}

template <class T, class Rng>
void add_bilstm(ParameterStore<T>& s, const std::string& name, std::size_t in, std::size_t hidden, Rng& rng) {
  for (const char* dir : {"/fwd", "/bwd"}) {
    s.add(name + dir + "/w_ih", uniform_init<T>({4 * hidden, in}, hidden, rng));
    s.add(name + dir + "/w_hh", uniform_init<T>({4 * hidden, hidden}, hidden, rng));
    s.add(name + dir + "/b", uniform_init<T>({4 * hidden}, hidden, rng));
  }
}

template <class T>
Tensor<T> bilstm(ParameterStore<T>& s, const std::string& name, const Tensor<T>& x) {
  auto dir = [&](const char* d) {
    return ops::LstmDirectionParams<T>{s.at(name + d + "/w_ih"), s.at(name + d + "/w_hh"), s.at(name + d + "/b")};
  };
  return ops::bilstm(x, dir("/fwd"), dir("/bwd"));
}

template <class T>
Tensor<T> swish(const Tensor<T>& x) {
  return ops::mul(x, ops::sigmoid(x));
}

}  // namespace otsvad::layers
