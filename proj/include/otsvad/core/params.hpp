#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "otsvad/core/tensor.hpp"

namespace otsvad {

enum class EntryKind { kParameter, kBuffer };

template <class T>
struct ParameterEntry {
  Tensor<T> tensor;
  EntryKind kind = EntryKind::kParameter;
  bool frozen = false;
  // Adam state.
  std::vector<T> m, v;
  std::size_t step = 0;

  bool trainable() const { return kind == EntryKind::kParameter && !frozen; }
};

// Named tensors of a model. Parameters are graph leaves that collect
// gradients; buffers (batch-norm running statistics) are saved with the
// model but never differentiated.
template <class T>
class ParameterStore {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> t, EntryKind kind = EntryKind::kParameter) {
    if (entries_.count(name)) throw InputError("duplicate parameter name: " + name);
    t.set_requires_grad(kind == EntryKind::kParameter);
    ParameterEntry<T> e;
    e.tensor = t;
    e.kind = kind;
    entries_.emplace(name, std::move(e));
    order_.push_back(name);
    return t;
  }

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  Tensor<T>& at(const std::string& name) { return entry(name).tensor; }
  const Tensor<T>& at(const std::string& name) const { return entry(name).tensor; }

  ParameterEntry<T>& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InputError("unknown parameter: " + name);
    return it->second;
  }
  const ParameterEntry<T>& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InputError("unknown parameter: " + name);
    return it->second;
  }

  // Registration order; stable across runs.
  const std::vector<std::string>& names() const { return order_; }

  // Freezes or unfreezes every parameter whose name starts with prefix.
  void set_frozen(const std::string& prefix, bool frozen) {
    for (auto& [name, e] : entries_)
      if (name.rfind(prefix, 0) == 0 && e.kind == EntryKind::kParameter) {
        e.frozen = frozen;
        e.tensor.set_requires_grad(!frozen);
      }
  }

  void zero_grad() {
    for (auto& [_, e] : entries_) e.tensor.zero_grad();
  }

  std::size_t parameter_count(const std::string& prefix = "") const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_)
      if (e.kind == EntryKind::kParameter && name.rfind(prefix, 0) == 0) n += e.tensor.numel();
    return n;
  }

 private:
  std::map<std::string, ParameterEntry<T>> entries_;
  std::vector<std::string> order_;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation, the usual
// default for linear and convolution weights.
template <class T, class Rng>
Tensor<T> uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = T(dist(rng));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

// Adam with bias correction.
struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
void adam_step(ParameterStore<T>& store, double lr, const AdamConfig& cfg = {}) {
  for (const auto& name : store.names()) {
    auto& e = store.entry(name);
    if (!e.trainable()) continue;
    if (!e.tensor.has_grad()) throw StateError("adam_step: no gradient for trainable parameter " + name);
  }
  for (const auto& name : store.names()) {
    auto& e = store.entry(name);
    if (!e.trainable()) continue;
    const std::size_t n = e.tensor.numel();
    if (e.m.empty()) {
      e.m.assign(n, T(0));
      e.v.assign(n, T(0));
    }
    ++e.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, double(e.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, double(e.step));
    auto g = e.tensor.grad();
    T* w = e.tensor.data();
    for (std::size_t i = 0; i < n; ++i) {
      e.m[i] = T(cfg.beta1) * e.m[i] + T(1 - cfg.beta1) * g[i];
      e.v[i] = T(cfg.beta2) * e.v[i] + T(1 - cfg.beta2) * g[i] * g[i];
      const double mh = double(e.m[i]) / c1, vh = double(e.v[i]) / c2;
      w[i] -= T(lr * mh / (std::sqrt(vh) + cfg.eps));
    }
  }
}

// Linear warm-up from zero to max_lr, then cosine annealing to zero at
// total_steps; zero afterwards.
struct LrSchedule {
  double max_lr = 1e-4;
  std::size_t warmup_steps = 2000;
  std::size_t total_steps = 100000;

  void validate() const {
    if (!(max_lr > 0)) throw ConfigError("lr schedule: max_lr must be positive");
    if (warmup_steps > total_steps) throw ConfigError("lr schedule: warmup_steps exceeds total_steps");
  }

  double lr_at(std::size_t step) const {
    if (step >= total_steps) return 0.0;
    if (step < warmup_steps) return max_lr * double(step) / double(warmup_steps);
    const double span = double(total_steps - warmup_steps);
    const double progress = span > 0 ? double(step - warmup_steps) / span : 1.0;
    return 0.5 * max_lr * (1.0 + std::cos(M_PI * progress));
  }
};

}  // namespace otsvad
