#pragma once

// Central finite-difference gradient oracle. Independent of the analytic
// backward closures: it only evaluates forward passes.

#include <functional>
#include <random>
#include <vector>

#include "otsvad/core/ops.hpp"

namespace otsvad::testing {

using TensorD = Tensor<double>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

inline TensorD random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool requires_grad = true) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = d(rng);
  return TensorD::from(std::move(shape), std::move(v), requires_grad);
}

// Scalarises f(inputs) with fixed random weights, then compares d/dinput of
// the weighted sum against central differences for every input element
// (or a random subset of at most max_per_input elements per input).
inline GradCheckResult gradcheck(const std::function<TensorD(const std::vector<TensorD>&)>& f,
                                 std::vector<TensorD> inputs, std::mt19937_64& rng, double h = 1e-6,
                                 std::size_t max_per_input = 64) {
  TensorD out = f(inputs);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> w(out.numel());
  for (auto& x : w) x = d(rng);
  auto weighted = [&](const TensorD& o) {
    double s = 0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * o.values()[i];
    return s;
  };
  for (auto& in : inputs) in.zero_grad();
  out.backward(w);

  GradCheckResult res;
  for (auto& in : inputs) {
    if (!in.requires_grad()) continue;
    const std::vector<double> analytic(in.grad().begin(), in.grad().end());
    std::vector<std::size_t> idx(in.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > max_per_input) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_per_input);
    }
    for (const std::size_t i : idx) {
      const double orig = in.values()[i];
      double fp, fm;
      {
        NoGradGuard ng;
        in.values()[i] = orig + h;
        fp = weighted(f(inputs));
        in.values()[i] = orig - h;
        fm = weighted(f(inputs));
        in.values()[i] = orig;
      }
      const double numeric = (fp - fm) / (2 * h);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      res.max_rel_error = std::max(res.max_rel_error, std::abs(a - numeric) / std::max(1.0, std::abs(numeric)));
      ++res.checked;
    }
  }
  return res;
}

}  // namespace otsvad::testing
