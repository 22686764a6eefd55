#pragma once

#include "otsvad/core/ops.hpp"

namespace otsvad::ops {

inline constexpr double kNormEpsilon = 1e-5;

// Normalizes over the last axis, then applies per-feature gamma and beta.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
  detail::require(x.rank() >= 1, "layer_norm", "rank 0 input");
  const std::size_t F = x.shape().back(), rows = x.numel() / F;
  detail::require(gamma.numel() == F && beta.numel() == F, "layer_norm", "affine size");
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> v(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data() + r * F;
    T mean = 0;
    for (std::size_t f = 0; f < F; ++f) mean += in[f];
    mean /= T(F);
    T var = 0;
    for (std::size_t f = 0; f < F; ++f) var += (in[f] - mean) * (in[f] - mean);
    var /= T(F);
    const T rs = T(1) / std::sqrt(var + T(kNormEpsilon));
    (*rstd)[r] = rs;
    for (std::size_t f = 0; f < F; ++f) {
      const T h = (in[f] - mean) * rs;
      (*xhat)[r * F + f] = h;
      v[r * F + f] = h * gamma.data()[f] + beta.data()[f];
    }
  }
  auto out = make_result<T>("layer_norm", x.shape(), std::move(v),
                            {x.node_ptr(), gamma.node_ptr(), beta.node_ptr()});
  if (out.requires_grad()) {
    auto *o = out.node(), *px = x.node(), *pg = gamma.node(), *pb = beta.node();
    o->backward_fn = [o, px, pg, pb, xhat, rstd, rows, F] {
      T* gg = pg->requires_grad ? pg->grad_data() : nullptr;
      T* gb = pb->requires_grad ? pb->grad_data() : nullptr;
      T* gx = px->requires_grad ? px->grad_data() : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gy = o->grad.data() + r * F;
        const T* h = xhat->data() + r * F;
        T s1 = 0, s2 = 0;
        for (std::size_t f = 0; f < F; ++f) {
          if (gg) gg[f] += gy[f] * h[f];
          if (gb) gb[f] += gy[f];
          const T gh = gy[f] * pg->value[f];
          s1 += gh;
          s2 += gh * h[f];
        }
        if (gx) {
          const T rs = (*rstd)[r];
          for (std::size_t f = 0; f < F; ++f) {
            const T gh = gy[f] * pg->value[f];
            gx[r * F + f] += rs * (gh - s1 / T(F) - h[f] * s2 / T(F));
          }
        }
      }
    };
  }
  return out;
}

// Running statistics of a batch-norm layer; plain buffers, never differentiated.
template <class T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
};

// x [B, C, H, W]. Training mode normalizes with batch statistics (biased
// variance) and updates the running estimates (unbiased variance);
// evaluation mode uses the running estimates as constants.
template <class T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormStats<T>& stats,
                       bool training) {
  detail::require(x.rank() == 4, "batch_norm2d", "expects [B,C,H,W]");
  const std::size_t B = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3), M = B * S;
  detail::require(gamma.numel() == C && beta.numel() == C, "batch_norm2d", "affine size");
  auto mean = std::make_shared<std::vector<T>>(C, T(0));
  auto rstd = std::make_shared<std::vector<T>>(C, T(0));
  if (training) {
    detail::require(M > 1, "batch_norm2d", "training mode needs more than one value per channel");
    for (std::size_t c = 0; c < C; ++c) {
      T m = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t s = 0; s < S; ++s) m += x.data()[(b * C + c) * S + s];
      m /= T(M);
      T var = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t s = 0; s < S; ++s) {
          const T d = x.data()[(b * C + c) * S + s] - m;
          var += d * d;
        }
      var /= T(M);
      (*mean)[c] = m;
      (*rstd)[c] = T(1) / std::sqrt(var + T(kNormEpsilon));
      const T mom = T(stats.momentum);
      stats.running_mean.data()[c] = (T(1) - mom) * stats.running_mean.data()[c] + mom * m;
      stats.running_var.data()[c] =
          (T(1) - mom) * stats.running_var.data()[c] + mom * var * T(M) / T(M - 1);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      (*mean)[c] = stats.running_mean.data()[c];
      (*rstd)[c] = T(1) / std::sqrt(stats.running_var.data()[c] + T(kNormEpsilon));
    }
  }
  std::vector<T> v(x.numel());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const T g = gamma.data()[c] * (*rstd)[c], sh = beta.data()[c] - (*mean)[c] * g;
      const T* in = x.data() + (b * C + c) * S;
      T* o = v.data() + (b * C + c) * S;
      for (std::size_t s = 0; s < S; ++s) o[s] = in[s] * g + sh;
    }
  auto out = make_result<T>("batch_norm2d", x.shape(), std::move(v),
                            {x.node_ptr(), gamma.node_ptr(), beta.node_ptr()});
  if (out.requires_grad()) {
    auto *o = out.node(), *px = x.node(), *pg = gamma.node(), *pb = beta.node();
    o->backward_fn = [o, px, pg, pb, mean, rstd, training, B, C, S, M] {
      T* gg = pg->requires_grad ? pg->grad_data() : nullptr;
      T* gb = pb->requires_grad ? pb->grad_data() : nullptr;
      T* gx = px->requires_grad ? px->grad_data() : nullptr;
      for (std::size_t c = 0; c < C; ++c) {
        const T m = (*mean)[c], rs = (*rstd)[c], gam = pg->value[c];
        T sg = 0, sgh = 0;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t s = 0; s < S; ++s) {
            const std::size_t i = (b * C + c) * S + s;
            const T h = (px->value[i] - m) * rs;
            sg += o->grad[i];
            sgh += o->grad[i] * h;
          }
        if (gg) gg[c] += sgh;
        if (gb) gb[c] += sg;
        if (!gx) continue;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t s = 0; s < S; ++s) {
            const std::size_t i = (b * C + c) * S + s;
            if (training) {
              const T h = (px->value[i] - m) * rs;
              gx[i] += gam * rs * (o->grad[i] - sg / T(M) - h * sgh / T(M));
            } else {
              gx[i] += gam * rs * o->grad[i];
            }
          }
      }
    };
  }
  return out;
}

}  // namespace otsvad::ops
