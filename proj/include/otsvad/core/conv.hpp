#pragma once

#include <algorithm>
#include <array>

#include "otsvad/core/ops.hpp"

namespace otsvad::ops {

struct Conv2dGeometry {
  std::size_t kh = 3, kw = 3;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 1, pad_w = 1;

  std::size_t out_h(std::size_t h) const { return (h + 2 * pad_h - kh) / stride_h + 1; }
  std::size_t out_w(std::size_t w) const { return (w + 2 * pad_w - kw) / stride_w + 1; }
};

namespace detail {

// Column block of the im2col matrix covering output positions [p0, p1).
// col is [Cin*kh*kw, p1-p0], row-major.
template <class T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, const Conv2dGeometry& g, std::size_t p0,
            std::size_t p1, T* col) {
  const std::size_t Wo = g.out_w(W), n = p1 - p0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * n;
        std::size_t oh = p0 / Wo, ow = p0 % Wo;
        for (std::size_t i = 0; i < n;) {
          const std::size_t run = std::min(Wo - ow, n - i);
          const long ih = long(oh * g.stride_h + ki) - long(g.pad_h);
          T* dst = row + i;
          if (ih < 0 || ih >= long(H)) {
            std::fill_n(dst, run, T(0));
          } else {
            const T* src = x + (c * H + std::size_t(ih)) * W;
            if (g.stride_w == 1) {
              // iw = ow + r + kj - pad: zero outside [0, W), contiguous inside.
              const long off = long(ow + kj) - long(g.pad_w);
              const long lo = std::clamp<long>(-off, 0, long(run)), hi = std::clamp<long>(long(W) - off, lo, long(run));
              std::fill_n(dst, lo, T(0));
              std::copy(src + off + lo, src + off + hi, dst + lo);
              std::fill(dst + hi, dst + run, T(0));
            } else {
              for (std::size_t r = 0; r < run; ++r) {
                const long iw = long((ow + r) * g.stride_w + kj) - long(g.pad_w);
                dst[r] = (iw < 0 || iw >= long(W)) ? T(0) : src[iw];
              }
            }
          }
          i += run;
          ow = 0;
          ++oh;
        }
      }
}

template <class T>
void col2im(const T* col, std::size_t C, std::size_t H, std::size_t W, const Conv2dGeometry& g, std::size_t p0,
            std::size_t p1, T* x) {
  const std::size_t Wo = g.out_w(W), n = p1 - p0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * n;
        std::size_t oh = p0 / Wo, ow = p0 % Wo;
        for (std::size_t i = 0; i < n;) {
          const std::size_t run = std::min(Wo - ow, n - i);
          const long ih = long(oh * g.stride_h + ki) - long(g.pad_h);
          if (ih >= 0 && ih < long(H)) {
            T* dst = x + (c * H + std::size_t(ih)) * W;
            for (std::size_t r = 0; r < run; ++r) {
              const long iw = long((ow + r) * g.stride_w + kj) - long(g.pad_w);
              if (iw >= 0 && iw < long(W)) dst[iw] += row[i + r];
            }
          }
          i += run;
          ow = 0;
          ++oh;
        }
      }
}

// Output positions per im2col block; keeps the column buffer cache-sized.
inline std::size_t conv_chunk(std::size_t K, std::size_t P) {
  return std::min(P, std::max<std::size_t>(256, (std::size_t(1) << 13) / std::max<std::size_t>(K, 1)));
}

}  // namespace detail

// x [B, Cin, H, W], w [Cout, Cin, kh, kw], b [Cout] (optional).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Conv2dGeometry g) {
  detail::require(x.rank() == 4 && w.rank() == 4, "conv2d", "expects 4-d input and weight");
  detail::require(x.dim(1) == w.dim(1), "conv2d",
                  "input channels " + std::to_string(x.dim(1)) + " vs weight " + std::to_string(w.dim(1)));
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3), Cout = w.dim(0);
  detail::require(H + 2 * g.pad_h >= g.kh && W + 2 * g.pad_w >= g.kw, "conv2d", "input smaller than kernel");
  if (b.defined()) detail::require(b.numel() == Cout, "conv2d", "bias size");
  const std::size_t Ho = g.out_h(H), Wo = g.out_w(W), K = Cin * g.kh * g.kw, P = Ho * Wo;
  using Strided = Eigen::Map<MatRM<T>, 0, Eigen::OuterStride<>>;
  std::vector<T> v(B * Cout * P);
  const std::size_t chunk = detail::conv_chunk(K, P);
  std::vector<T> col(K * chunk);
  CMapM<T> wm(w.data(), Cout, K);
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t p0 = 0; p0 < P; p0 += chunk) {
      const std::size_t n = std::min(chunk, P - p0);
      detail::im2col(x.data() + bi * Cin * H * W, Cin, H, W, g, p0, p0 + n, col.data());
      Strided y(v.data() + bi * Cout * P + p0, Cout, n, Eigen::OuterStride<>(P));
      y.noalias() = wm * CMapM<T>(col.data(), K, n);
      if (b.defined()) y.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(b.data(), Cout);
    }
  std::vector<detail::NodeP<T>> parents{x.node_ptr(), w.node_ptr()};
  if (b.defined()) parents.push_back(b.node_ptr());
  auto out = make_result<T>("conv2d", Shape{B, Cout, Ho, Wo}, std::move(v), std::move(parents));
  if (out.requires_grad()) {
    auto *o = out.node(), *px = x.node(), *pw = w.node();
    auto* pb = b.defined() ? b.node() : nullptr;
    o->backward_fn = [o, px, pw, pb, g, B, Cin, H, W, Cout, K, P] {
      using CStrided = Eigen::Map<const MatRM<T>, 0, Eigen::OuterStride<>>;
      const std::size_t chunk = detail::conv_chunk(K, P);
      std::vector<T> col(K * chunk), dcol(px->requires_grad ? K * chunk : 0);
      CMapM<T> wm(pw->value.data(), Cout, K);
      for (std::size_t bi = 0; bi < B; ++bi) {
        if (pb && pb->requires_grad) {
          T* gb = pb->grad_data();
          for (std::size_t c = 0; c < Cout; ++c) {
            const T* row = o->grad.data() + (bi * Cout + c) * P;
            T acc = 0;
            for (std::size_t i = 0; i < P; ++i) acc += row[i];
            gb[c] += acc;
          }
        }
        for (std::size_t p0 = 0; p0 < P; p0 += chunk) {
          const std::size_t n = std::min(chunk, P - p0);
          CStrided gy(o->grad.data() + bi * Cout * P + p0, Cout, n, Eigen::OuterStride<>(P));
          if (pw->requires_grad) {
            detail::im2col(px->value.data() + bi * Cin * H * W, Cin, H, W, g, p0, p0 + n, col.data());
            MapM<T>(pw->grad_data(), Cout, K).noalias() += gy * CMapM<T>(col.data(), K, n).transpose();
          }
          if (px->requires_grad) {
            MapM<T>(dcol.data(), K, n).noalias() = wm.transpose() * gy;
            detail::col2im(dcol.data(), Cin, H, W, g, p0, p0 + n, px->grad_data() + bi * Cin * H * W);
          }
        }
      }
    };
  }
  return out;
}

// x [B, Cin, L], w [Cout, Cin, k], b [Cout] (optional).
template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride,
                 std::size_t pad) {
  detail::require(x.rank() == 3 && w.rank() == 3, "conv1d", "expects 3-d input and weight");
  auto x4 = reshape(x, Shape{x.dim(0), x.dim(1), 1, x.dim(2)});
  auto w4 = reshape(w, Shape{w.dim(0), w.dim(1), 1, w.dim(2)});
  Conv2dGeometry g{1, w.dim(2), 1, stride, 0, pad};
  auto y = conv2d(x4, w4, b, g);
  return reshape(y, Shape{y.dim(0), y.dim(1), y.dim(3)});
}

// Depthwise 1-d convolution, stride 1: x [B, C, L], w [C, k], b [C]
// (optional), zero padding pad on both sides. Output [B, C, L + 2 pad - k + 1].
template <class T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t pad) {
  detail::require(x.rank() == 3 && w.rank() == 2 && w.dim(0) == x.dim(1), "depthwise_conv1d",
                  "expects x [B,C,L] and w [C,k]");
  const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2), k = w.dim(1);
  detail::require(L + 2 * pad >= k, "depthwise_conv1d", "input shorter than kernel");
  if (b.defined()) detail::require(b.numel() == C, "depthwise_conv1d", "bias size");
  const std::size_t Lo = L + 2 * pad - k + 1;
  std::vector<T> v(B * C * Lo);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const T* in = x.data() + (n * C + c) * L;
      const T* wc = w.data() + c * k;
      T* o = v.data() + (n * C + c) * Lo;
      const T bias = b.defined() ? b.data()[c] : T(0);
      for (std::size_t t = 0; t < Lo; ++t) {
        T acc = bias;
        for (std::size_t j = 0; j < k; ++j) {
          const long i = long(t + j) - long(pad);
          if (i >= 0 && i < long(L)) acc += wc[j] * in[i];
        }
        o[t] = acc;
      }
    }
  std::vector<detail::NodeP<T>> parents{x.node_ptr(), w.node_ptr()};
  if (b.defined()) parents.push_back(b.node_ptr());
  auto out = make_result<T>("depthwise_conv1d", Shape{B, C, Lo}, std::move(v), std::move(parents));
  if (out.requires_grad()) {
    auto *o = out.node(), *px = x.node(), *pw = w.node();
    auto* pb = b.defined() ? b.node() : nullptr;
    o->backward_fn = [o, px, pw, pb, B, C, L, k, pad, Lo] {
      T* gx = px->requires_grad ? px->grad_data() : nullptr;
      T* gw = pw->requires_grad ? pw->grad_data() : nullptr;
      T* gb = pb && pb->requires_grad ? pb->grad_data() : nullptr;
      for (std::size_t n = 0; n < B; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const T* in = px->value.data() + (n * C + c) * L;
          const T* wc = pw->value.data() + c * k;
          const T* go = o->grad.data() + (n * C + c) * Lo;
          for (std::size_t t = 0; t < Lo; ++t) {
            if (gb) gb[c] += go[t];
            for (std::size_t j = 0; j < k; ++j) {
              const long i = long(t + j) - long(pad);
              if (i < 0 || i >= long(L)) continue;
              if (gx) gx[(n * C + c) * L + std::size_t(i)] += wc[j] * go[t];
              if (gw) gw[c * k + j] += in[i] * go[t];
            }
          }
        }
    };
  }
  return out;
}

}  // namespace otsvad::ops
