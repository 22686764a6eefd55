#pragma once

// Elementwise, shape and reduction operators of the autodiff core. Each op
// computes its forward value eagerly and, when any input participates in
// differentiation, records a closure that scatters the output gradient back
// into its inputs.

#include <Eigen/Core>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "otsvad/core/tensor.hpp"

namespace otsvad::ops {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<MatRM<T>>;
template <class T>
using CMapM = Eigen::Map<const MatRM<T>>;

namespace detail {

template <class T>
using NodeP = std::shared_ptr<otsvad::detail::Node<T>>;

inline void require(bool ok, const std::string& op, const std::string& what) {
  if (!ok) throw ShapeError(op + ": " + what);
}

inline std::size_t leading(const Shape& s) {
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

}  // namespace detail

using otsvad::detail::make_result;

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "add", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  auto out = make_result<T>("add", a.shape(), std::move(v), {a.node_ptr(), b.node_ptr()});
  if (out.requires_grad()) {
    auto *o = out.node(), *pa = a.node(), *pb = b.node();
    o->backward_fn = [o, pa, pb] {
      const std::size_t n = o->value.size();
      if (pa->requires_grad) {
        T* g = pa->grad_data();
        for (std::size_t i = 0; i < n; ++i) g[i] += o->grad[i];
      }
      if (pb->requires_grad) {
        T* g = pb->grad_data();
        for (std::size_t i = 0; i < n; ++i) g[i] += o->grad[i];
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "mul", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  auto out = make_result<T>("mul", a.shape(), std::move(v), {a.node_ptr(), b.node_ptr()});
  if (out.requires_grad()) {
    auto *o = out.node(), *pa = a.node(), *pb = b.node();
    o->backward_fn = [o, pa, pb] {
      const std::size_t n = o->value.size();
      if (pa->requires_grad) {
        T* g = pa->grad_data();
        for (std::size_t i = 0; i < n; ++i) g[i] += o->grad[i] * pb->value[i];
      }
      if (pb->requires_grad) {
        T* g = pb->grad_data();
        for (std::size_t i = 0; i < n; ++i) g[i] += o->grad[i] * pa->value[i];
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  std::vector<T> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] * s;
  auto out = make_result<T>("scale", x.shape(), std::move(v), {x.node_ptr()});
  if (out.requires_grad()) {
    auto *o = out.node(), *px = x.node();
    o->backward_fn = [o, px, s] {
      T* g = px->grad_data();
      for (std::size_t i = 0; i < o->value.size(); ++i) g[i] += o->grad[i] * s;
    };
  }
  return out;
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (const T v : x.values()) acc += v;
  auto out = make_result<T>("sum", Shape{1}, {acc}, {x.node_ptr()});
  if (out.requires_grad()) {
    auto *o = out.node(), *px = x.node();
    o->backward_fn = [o, px] {
      T* g = px->grad_data();
      for (std::size_t i = 0; i < px->value.size(); ++i) g[i] += o->grad[0];
    };
  }
  return out;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  auto out = make_result<T>("relu", x.shape(), std::move(v), {x.node_ptr()});
  if (out.requires_grad()) {
    auto *o = out.node(), *px = x.node();
    o->backward_fn = [o, px] {
      T* g = px->grad_data();
      for (std::size_t i = 0; i < o->value.size(); ++i)
        if (px->value[i] > T(0)) g[i] += o->grad[i];
    };
  }
  return out;
}

inline constexpr double kProbEpsilon = 1e-7;

// Output is clamped to [eps, 1-eps] so probabilities stay strictly inside
// (0,1) in single precision; the derivative uses the clamped value.
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  const T lo = T(kProbEpsilon), hi = T(1) - T(kProbEpsilon);
  std::vector<T> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const T z = x.data()[i];
    const T s = z >= 0 ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
    v[i] = std::clamp(s, lo, hi);
  }
  auto out = make_result<T>("sigmoid", x.shape(), std::move(v), {x.node_ptr()});
  if (out.requires_grad()) {
    auto *o = out.node(), *px = x.node();
    o->backward_fn = [o, px] {
      T* g = px->grad_data();
      for (std::size_t i = 0; i < o->value.size(); ++i) {
        const T s = o->value[i];
        g[i] += o->grad[i] * s * (T(1) - s);
      }
    };
  }
  return out;
}

// Softmax over the last axis.
template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
  detail::require(x.rank() >= 1 && x.shape().back() > 0, "softmax", "empty last axis");
  const std::size_t cols = x.shape().back(), rows = x.numel() / cols;
  std::vector<T> v(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data() + r * cols;
    T* o = v.data() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    T z = 0;
    for (std::size_t c = 0; c < cols; ++c) z += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  auto out = make_result<T>("softmax", x.shape(), std::move(v), {x.node_ptr()});
  if (out.requires_grad()) {
    auto *o = out.node(), *px = x.node();
    o->backward_fn = [o, px, rows, cols] {
      T* g = px->grad_data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = o->value.data() + r * cols;
        const T* gy = o->grad.data() + r * cols;
        T dot = 0;
        for (std::size_t c = 0; c < cols; ++c) dot += y[c] * gy[c];
        for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (gy[c] - dot);
      }
    };
  }
  return out;
}

// y = x W^T + b over the last axis of x. W is [out, in]; b may be undefined.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {}) {
  detail::require(w.rank() == 2 && x.rank() >= 1 && x.shape().back() == w.dim(1), "linear",
                  "x " + shape_str(x.shape()) + " vs W " + shape_str(w.shape()));
  const std::size_t rows = detail::leading(x.shape()), in = w.dim(1), outd = w.dim(0);
  if (b.defined()) detail::require(b.numel() == outd, "linear", "bias size");
  Shape os = x.shape();
  os.back() = outd;
  std::vector<T> v(rows * outd);
  MapM<T> y(v.data(), rows, outd);
  y.noalias() = CMapM<T>(x.data(), rows, in) * CMapM<T>(w.data(), outd, in).transpose();
  if (b.defined()) y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data(), outd);
  std::vector<detail::NodeP<T>> parents{x.node_ptr(), w.node_ptr()};
  if (b.defined()) parents.push_back(b.node_ptr());
  auto out = make_result<T>("linear", std::move(os), std::move(v), std::move(parents));
  if (out.requires_grad()) {
    auto *o = out.node(), *px = x.node(), *pw = w.node();
    auto* pb = b.defined() ? b.node() : nullptr;
    o->backward_fn = [o, px, pw, pb, rows, in, outd] {
      CMapM<T> gy(o->grad.data(), rows, outd);
      if (px->requires_grad)
        MapM<T>(px->grad_data(), rows, in).noalias() += gy * CMapM<T>(pw->value.data(), outd, in);
      if (pw->requires_grad)
        MapM<T>(pw->grad_data(), outd, in).noalias() += gy.transpose() * CMapM<T>(px->value.data(), rows, in);
      if (pb && pb->requires_grad) {
        T* gb = pb->grad_data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < outd; ++j) gb[j] += o->grad[r * outd + j];
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require(shape_numel(shape) == x.numel(), "reshape",
                  shape_str(x.shape()) + " -> " + shape_str(shape));
  auto out = make_result<T>("reshape", std::move(shape),
                            std::vector<T>(x.values().begin(), x.values().end()), {x.node_ptr()});
  if (out.requires_grad()) {
    auto *o = out.node(), *px = x.node();
    o->backward_fn = [o, px] {
      T* g = px->grad_data();
      for (std::size_t i = 0; i < o->value.size(); ++i) g[i] += o->grad[i];
    };
  }
  return out;
}

namespace detail {

inline std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// For each output linear index, the input linear index it reads from.
inline std::vector<std::size_t> permute_index(const Shape& in, const std::vector<std::size_t>& perm) {
  const auto ist = strides_of(in);
  Shape os(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) os[i] = in[perm[i]];
  const std::size_t n = shape_numel(in);
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> ctr(os.size(), 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < os.size(); ++d) src += ctr[d] * ist[perm[d]];
    idx[o] = src;
    for (std::size_t d = os.size(); d-- > 0;) {
      if (++ctr[d] < os[d]) break;
      ctr[d] = 0;
    }
  }
  return idx;
}

}  // namespace detail

// out.shape[i] = x.shape[perm[i]]
template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  detail::require(perm.size() == x.rank(), "permute", "rank mismatch");
  Shape os(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    detail::require(perm[i] < x.rank(), "permute", "axis out of range");
    os[i] = x.dim(perm[i]);
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(detail::permute_index(x.shape(), perm));
  std::vector<T> v(x.numel());
  for (std::size_t o = 0; o < v.size(); ++o) v[o] = x.data()[(*idx)[o]];
  auto out = make_result<T>("permute", std::move(os), std::move(v), {x.node_ptr()});
  if (out.requires_grad()) {
    auto *o = out.node(), *px = x.node();
    o->backward_fn = [o, px, idx] {
      T* g = px->grad_data();
      for (std::size_t i = 0; i < idx->size(); ++i) g[(*idx)[i]] += o->grad[i];
    };
  }
  return out;
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  detail::require(!xs.empty(), "concat", "no inputs");
  const Shape& s0 = xs[0].shape();
  detail::require(axis < s0.size(), "concat", "axis out of range");
  Shape os = s0;
  os[axis] = 0;
  for (const auto& x : xs) {
    detail::require(x.rank() == s0.size(), "concat", "rank mismatch");
    for (std::size_t d = 0; d < s0.size(); ++d)
      if (d != axis) detail::require(x.dim(d) == s0[d], "concat", "shape mismatch on axis " + std::to_string(d));
    os[axis] += x.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];
  std::vector<T> v(shape_numel(os));
  std::vector<std::size_t> offs;
  std::size_t off = 0;
  for (const auto& x : xs) {
    offs.push_back(off);
    const std::size_t blk = x.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.data() + o * blk, blk, v.data() + o * os[axis] * inner + off * inner);
    off += x.dim(axis);
  }
  std::vector<detail::NodeP<T>> parents;
  for (const auto& x : xs) parents.push_back(x.node_ptr());
  auto out = make_result<T>("concat", os, std::move(v), parents);
  if (out.requires_grad()) {
    auto* o = out.node();
    std::vector<otsvad::detail::Node<T>*> ps;
    for (const auto& x : xs) ps.push_back(x.node());
    const std::size_t total = os[axis];
    o->backward_fn = [o, ps, offs, outer, inner, total] {
      for (std::size_t k = 0; k < ps.size(); ++k) {
        auto* p = ps[k];
        if (!p->requires_grad) continue;
        T* g = p->grad_data();
        const std::size_t len = p->shape.empty() ? 0 : p->value.size() / outer;
        for (std::size_t ob = 0; ob < outer; ++ob) {
          const T* src = o->grad.data() + ob * total * inner + offs[k] * inner;
          for (std::size_t i = 0; i < len; ++i) g[ob * len + i] += src[i];
        }
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t len) {
  detail::require(axis < x.rank() && start + len <= x.dim(axis), "slice", "range out of bounds");
  Shape os = x.shape();
  os[axis] = len;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const std::size_t full = x.dim(axis);
  std::vector<T> v(shape_numel(os));
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data() + (o * full + start) * inner, len * inner, v.data() + o * len * inner);
  auto out = make_result<T>("slice", std::move(os), std::move(v), {x.node_ptr()});
  if (out.requires_grad()) {
    auto *o = out.node(), *px = x.node();
    o->backward_fn = [o, px, outer, inner, full, start, len] {
      T* g = px->grad_data();
      for (std::size_t ob = 0; ob < outer; ++ob)
        for (std::size_t i = 0; i < len * inner; ++i)
          g[(ob * full + start) * inner + i] += o->grad[ob * len * inner + i];
    };
  }
  return out;
}

// Arithmetic mean over one axis; the axis is removed from the shape.
template <class T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
  detail::require(axis < x.rank() && x.dim(axis) > 0, "mean_axis", "bad axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const std::size_t n = x.dim(axis);
  Shape os;
  for (std::size_t d = 0; d < x.rank(); ++d)
    if (d != axis) os.push_back(x.dim(d));
  if (os.empty()) os.push_back(1);
  std::vector<T> v(outer * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) v[o * inner + i] += x.data()[(o * n + k) * inner + i];
  for (auto& e : v) e /= T(n);
  auto out = make_result<T>("mean_axis", std::move(os), std::move(v), {x.node_ptr()});
  if (out.requires_grad()) {
    auto *o = out.node(), *px = x.node();
    o->backward_fn = [o, px, outer, inner, n] {
      T* g = px->grad_data();
      for (std::size_t ob = 0; ob < outer; ++ob)
        for (std::size_t k = 0; k < n; ++k)
          for (std::size_t i = 0; i < inner; ++i) g[(ob * n + k) * inner + i] += o->grad[ob * inner + i] / T(n);
    };
  }
  return out;
}

// Frame-level global statistics pooling. x is [B, C, H, W]; the output is
// [B, W, 2C] holding, per frame, the mean over H for each channel followed
// by the population standard deviation over H.
template <class T>
Tensor<T> stats_pool(const Tensor<T>& x) {
  detail::require(x.rank() == 4 && x.dim(2) >= 1, "stats_pool", "expects [B,C,H,W] with H >= 1");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::vector<T> v(B * W * 2 * C);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const T* base = x.data() + (b * C + c) * H * W;
      for (std::size_t w = 0; w < W; ++w) {
        T mean = 0;
        for (std::size_t h = 0; h < H; ++h) mean += base[h * W + w];
        mean /= T(H);
        T var = 0;
        for (std::size_t h = 0; h < H; ++h) {
          const T d = base[h * W + w] - mean;
          var += d * d;
        }
        var /= T(H);
        v[(b * W + w) * 2 * C + c] = mean;
        v[(b * W + w) * 2 * C + C + c] = std::sqrt(var);
      }
    }
  auto out = make_result<T>("stats_pool", Shape{B, W, 2 * C}, std::move(v), {x.node_ptr()});
  if (out.requires_grad()) {
    auto *o = out.node(), *px = x.node();
    o->backward_fn = [o, px, B, C, H, W] {
      T* g = px->grad_data();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
          const T* base = px->value.data() + (b * C + c) * H * W;
          T* gb = g + (b * C + c) * H * W;
          for (std::size_t w = 0; w < W; ++w) {
            const std::size_t oi = (b * W + w) * 2 * C;
            const T mean = o->value[oi + c], sd = o->value[oi + C + c];
            const T gm = o->grad[oi + c] / T(H);
            // d sd / d x_h = (x_h - mean) / (H sd); zero subgradient at sd = 0.
            const T gs = sd > T(0) ? o->grad[oi + C + c] / (T(H) * sd) : T(0);
            for (std::size_t h = 0; h < H; ++h) gb[h * W + w] += gm + gs * (base[h * W + w] - mean);
          }
        }
    };
  }
  return out;
}

// Masked mean of frame rows. frames is [B, T, D]; mask is a constant
// {0,1} array laid out [B, T, N]. Output [B, N, D]; rows with an empty
// selection are zero.
template <class T>
Tensor<T> masked_mean(const Tensor<T>& frames, const std::vector<T>& mask, std::size_t num_speakers) {
  detail::require(frames.rank() == 3, "masked_mean", "frames must be [B,T,D]");
  const std::size_t B = frames.dim(0), Tn = frames.dim(1), D = frames.dim(2), N = num_speakers;
  detail::require(mask.size() == B * Tn * N, "masked_mean", "mask size");
  auto denom = std::make_shared<std::vector<T>>(B * N, T(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < Tn; ++t)
      for (std::size_t n = 0; n < N; ++n) (*denom)[b * N + n] += mask[(b * Tn + t) * N + n];
  std::vector<T> v(B * N * D, T(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < N; ++n) {
      const T den = (*denom)[b * N + n];
      if (den == T(0)) continue;
      T* row = v.data() + (b * N + n) * D;
      for (std::size_t t = 0; t < Tn; ++t) {
        const T m = mask[(b * Tn + t) * N + n];
        if (m == T(0)) continue;
        const T* f = frames.data() + (b * Tn + t) * D;
        for (std::size_t d = 0; d < D; ++d) row[d] += m * f[d];
      }
      for (std::size_t d = 0; d < D; ++d) row[d] /= den;
    }
  auto out = make_result<T>("masked_mean", Shape{B, N, D}, std::move(v), {frames.node_ptr()});
  if (out.requires_grad()) {
    auto *o = out.node(), *pf = frames.node();
    o->backward_fn = [o, pf, mask, denom, B, Tn, D, N] {
      T* g = pf->grad_data();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t n = 0; n < N; ++n) {
          const T den = (*denom)[b * N + n];
          if (den == T(0)) continue;
          const T* go = o->grad.data() + (b * N + n) * D;
          for (std::size_t t = 0; t < Tn; ++t) {
            const T m = mask[(b * Tn + t) * N + n];
            if (m == T(0)) continue;
            T* gf = g + (b * Tn + t) * D;
            for (std::size_t d = 0; d < D; ++d) gf[d] += go[d] * m / den;
          }
        }
    };
  }
  return out;
}

// Pairs every speaker row with every frame row: bank [B, N, D] and frames
// [B, T, D] give [B, N, T, 2D] with [bank_n ; frame_t] in the last axis.
template <class T>
Tensor<T> speaker_frame_concat(const Tensor<T>& bank, const Tensor<T>& frames) {
  detail::require(bank.rank() == 3 && frames.rank() == 3, "speaker_frame_concat", "expects [B,N,D] and [B,T,D]");
  detail::require(bank.dim(0) == frames.dim(0), "speaker_frame_concat", "batch mismatch");
  detail::require(bank.dim(2) == frames.dim(2), "speaker_frame_concat",
                  "embedding dim mismatch: bank D=" + std::to_string(bank.dim(2)) +
                      ", frames D=" + std::to_string(frames.dim(2)));
  const std::size_t B = bank.dim(0), N = bank.dim(1), Tn = frames.dim(1), D = bank.dim(2);
  std::vector<T> v(B * N * Tn * 2 * D);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t < Tn; ++t) {
        T* dst = v.data() + ((b * N + n) * Tn + t) * 2 * D;
        std::copy_n(bank.data() + (b * N + n) * D, D, dst);
        std::copy_n(frames.data() + (b * Tn + t) * D, D, dst + D);
      }
  auto out = make_result<T>("speaker_frame_concat", Shape{B, N, Tn, 2 * D}, std::move(v),
                            {bank.node_ptr(), frames.node_ptr()});
  if (out.requires_grad()) {
    auto *o = out.node(), *pb = bank.node(), *pf = frames.node();
    o->backward_fn = [o, pb, pf, B, N, Tn, D] {
      T* gb = pb->requires_grad ? pb->grad_data() : nullptr;
      T* gf = pf->requires_grad ? pf->grad_data() : nullptr;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t t = 0; t < Tn; ++t) {
            const T* src = o->grad.data() + ((b * N + n) * Tn + t) * 2 * D;
            if (gb)
              for (std::size_t d = 0; d < D; ++d) gb[(b * N + n) * D + d] += src[d];
            if (gf)
              for (std::size_t d = 0; d < D; ++d) gf[(b * Tn + t) * D + d] += src[D + d];
          }
    };
  }
  return out;
}

// x [B, N, T, F] -> [B, N, T, 2F]: each speaker's features followed by the
// mean over all speakers at that frame (symmetric cross-speaker mixing).
template <class T>
Tensor<T> concat_speaker_mean(const Tensor<T>& x) {
  detail::require(x.rank() == 4, "concat_speaker_mean", "expects [B,N,T,F]");
  const std::size_t B = x.dim(0), N = x.dim(1), Tn = x.dim(2), F = x.dim(3);
  std::vector<T> mean(B * Tn * F, T(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t < Tn; ++t)
        for (std::size_t f = 0; f < F; ++f) mean[(b * Tn + t) * F + f] += x.data()[((b * N + n) * Tn + t) * F + f];
  for (auto& m : mean) m /= T(N);
  std::vector<T> v(B * N * Tn * 2 * F);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t < Tn; ++t) {
        T* dst = v.data() + ((b * N + n) * Tn + t) * 2 * F;
        std::copy_n(x.data() + ((b * N + n) * Tn + t) * F, F, dst);
        std::copy_n(mean.data() + (b * Tn + t) * F, F, dst + F);
      }
  auto out = make_result<T>("concat_speaker_mean", Shape{B, N, Tn, 2 * F}, std::move(v), {x.node_ptr()});
  if (out.requires_grad()) {
    auto *o = out.node(), *px = x.node();
    o->backward_fn = [o, px, B, N, Tn, F] {
      T* g = px->grad_data();
      std::vector<T> gm(B * Tn * F, T(0));
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t t = 0; t < Tn; ++t) {
            const T* src = o->grad.data() + ((b * N + n) * Tn + t) * 2 * F;
            for (std::size_t f = 0; f < F; ++f) {
              g[((b * N + n) * Tn + t) * F + f] += src[f];
              gm[(b * Tn + t) * F + f] += src[F + f];
            }
          }
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t t = 0; t < Tn; ++t)
            for (std::size_t f = 0; f < F; ++f) g[((b * N + n) * Tn + t) * F + f] += gm[(b * Tn + t) * F + f] / T(N);
    };
  }
  return out;
}

// Inverted dropout; identity when p == 0 or not training.
template <class T, class Rng>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw InputError("dropout probability must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  const T s = T(1.0 / (1.0 - p));
  auto m = std::make_shared<std::vector<T>>(x.numel());
  std::vector<T> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    (*m)[i] = keep(rng) ? s : T(0);
    v[i] = x.data()[i] * (*m)[i];
  }
  auto out = make_result<T>("dropout", x.shape(), std::move(v), {x.node_ptr()});
  if (out.requires_grad()) {
    auto *o = out.node(), *px = x.node();
    o->backward_fn = [o, px, m] {
      T* g = px->grad_data();
      for (std::size_t i = 0; i < m->size(); ++i) g[i] += o->grad[i] * (*m)[i];
    };
  }
  return out;
}

// Mean binary cross entropy over entries whose weight is non-zero. pred is
// clamped to [eps, 1-eps]; weight may be empty (all entries count).
template <class T>
Tensor<T> bce_loss(const Tensor<T>& pred, const std::vector<T>& label, const std::vector<T>& weight = {}) {
  detail::require(pred.numel() == label.size(), "bce_loss",
                  "pred has " + std::to_string(pred.numel()) + " entries, label " + std::to_string(label.size()));
  detail::require(weight.empty() || weight.size() == label.size(), "bce_loss", "weight size");
  const T eps = T(kProbEpsilon);
  T total = 0, count = 0;
  for (std::size_t i = 0; i < label.size(); ++i) {
    const T w = weight.empty() ? T(1) : weight[i];
    if (w == T(0)) continue;
    const T p = std::clamp(pred.data()[i], eps, T(1) - eps);
    total -= w * (label[i] * std::log(p) + (T(1) - label[i]) * std::log(T(1) - p));
    count += w;
  }
  const T loss = count > 0 ? total / count : T(0);
  auto out = make_result<T>("bce_loss", Shape{1}, {loss}, {pred.node_ptr()});
  if (out.requires_grad() && count > 0) {
    auto *o = out.node(), *pp = pred.node();
    o->backward_fn = [o, pp, label, weight, count, eps] {
      T* g = pp->grad_data();
      for (std::size_t i = 0; i < label.size(); ++i) {
        const T w = weight.empty() ? T(1) : weight[i];
        if (w == T(0)) continue;
        const T p = pp->value[i];
        if (p < eps || p > T(1) - eps) continue;
        g[i] += o->grad[0] * w * (p - label[i]) / (p * (T(1) - p)) / count;
      }
    };
  }
  return out;
}

// Softmax cross entropy of logits [B, K] against integer targets; mean over B.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& target) {
  detail::require(logits.rank() == 2 && logits.dim(0) == target.size(), "cross_entropy", "shape");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  auto prob = std::make_shared<std::vector<T>>(B * K);
  T loss = 0;
  for (std::size_t b = 0; b < B; ++b) {
    detail::require(target[b] < K, "cross_entropy", "target out of range");
    const T* z = logits.data() + b * K;
    const T mx = *std::max_element(z, z + K);
    T s = 0;
    for (std::size_t k = 0; k < K; ++k) s += ((*prob)[b * K + k] = std::exp(z[k] - mx));
    for (std::size_t k = 0; k < K; ++k) (*prob)[b * K + k] /= s;
    loss -= z[target[b]] - mx - std::log(s);
  }
  auto out = make_result<T>("cross_entropy", Shape{1}, {loss / T(B)}, {logits.node_ptr()});
  if (out.requires_grad()) {
    auto *o = out.node(), *pl = logits.node();
    o->backward_fn = [o, pl, prob, target, B, K] {
      T* g = pl->grad_data();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < K; ++k)
          g[b * K + k] += o->grad[0] * ((*prob)[b * K + k] - (k == target[b] ? T(1) : T(0))) / T(B);
    };
  }
  return out;
}

}  // namespace otsvad::ops
