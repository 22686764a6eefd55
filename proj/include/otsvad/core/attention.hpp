#pragma once

#include <algorithm>

#include "otsvad/core/ops.hpp"

namespace otsvad::ops {

// Scaled dot-product attention, fused over heads. q, k, v are [B, S, E];
// head i owns feature columns [i*M, (i+1)*M) with M = E / heads, and the
// logits are scaled by 1/sqrt(M). When probs is non-null it receives the
// attention weights laid out [B, heads, S, S].
template <class T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                               std::vector<T>* probs = nullptr) {
  detail::require(q.rank() == 3 && q.shape() == k.shape() && q.shape() == v.shape(), "attention",
                  "q/k/v must share a [B,S,E] shape");
  const std::size_t B = q.dim(0), S = q.dim(1), E = q.dim(2);
  detail::require(heads > 0 && E % heads == 0, "attention",
                  "head count " + std::to_string(heads) + " must divide model dim " + std::to_string(E));
  const std::size_t M = E / heads;
  const T scale = T(1) / std::sqrt(T(M));
  using Strided = Eigen::Map<const MatRM<T>, 0, Eigen::OuterStride<>>;
  using StridedMut = Eigen::Map<MatRM<T>, 0, Eigen::OuterStride<>>;
  auto P = std::make_shared<std::vector<T>>(B * heads * S * S);
  std::vector<T> out(B * S * E);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = b * S * E + h * M;
      Strided Q(q.data() + off, S, M, Eigen::OuterStride<>(E));
      Strided K(k.data() + off, S, M, Eigen::OuterStride<>(E));
      Strided V(v.data() + off, S, M, Eigen::OuterStride<>(E));
      MapM<T> p(P->data() + (b * heads + h) * S * S, S, S);
      p.noalias() = (Q * K.transpose()) * scale;
      // Scalar softmax: Eigen's vectorised reductions peel by address
      // alignment, which would make results depend on the allocator.
      for (std::size_t r = 0; r < S; ++r) {
        T* row = &p(Eigen::Index(r), 0);
        const T mx = *std::max_element(row, row + S);
        T sum = 0;
        for (std::size_t j = 0; j < S; ++j) sum += row[j] = std::exp(row[j] - mx);
        for (std::size_t j = 0; j < S; ++j) row[j] /= sum;
      }
      StridedMut O(out.data() + off, S, M, Eigen::OuterStride<>(E));
      O.noalias() = p * V;
    }
  if (probs) *probs = *P;
  auto res = make_result<T>("attention", q.shape(), std::move(out), {q.node_ptr(), k.node_ptr(), v.node_ptr()});
  if (res.requires_grad()) {
    auto *o = res.node(), *pq = q.node(), *pk = k.node(), *pv = v.node();
    o->backward_fn = [o, pq, pk, pv, P, B, S, E, M, heads, scale] {
      T* gq = pq->requires_grad ? pq->grad_data() : nullptr;
      T* gk = pk->requires_grad ? pk->grad_data() : nullptr;
      T* gv = pv->requires_grad ? pv->grad_data() : nullptr;
      MatRM<T> dP(S, S), dS(S, S);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = b * S * E + h * M;
          Strided Q(pq->value.data() + off, S, M, Eigen::OuterStride<>(E));
          Strided K(pk->value.data() + off, S, M, Eigen::OuterStride<>(E));
          Strided V(pv->value.data() + off, S, M, Eigen::OuterStride<>(E));
          Strided dO(o->grad.data() + off, S, M, Eigen::OuterStride<>(E));
          CMapM<T> p(P->data() + (b * heads + h) * S * S, S, S);
          if (gv) StridedMut(gv + off, S, M, Eigen::OuterStride<>(E)).noalias() += p.transpose() * dO;
          dP.noalias() = dO * V.transpose();
          for (std::size_t r = 0; r < S; ++r) {
            T dot = 0;
            for (std::size_t j = 0; j < S; ++j) dot += p(Eigen::Index(r), Eigen::Index(j)) * dP(Eigen::Index(r), Eigen::Index(j));
            for (std::size_t j = 0; j < S; ++j)
              dS(Eigen::Index(r), Eigen::Index(j)) = p(Eigen::Index(r), Eigen::Index(j)) * (dP(Eigen::Index(r), Eigen::Index(j)) - dot);
          }
          dS *= scale;
          if (gq) StridedMut(gq + off, S, M, Eigen::OuterStride<>(E)).noalias() += dS * K;
          if (gk) StridedMut(gk + off, S, M, Eigen::OuterStride<>(E)).noalias() += dS.transpose() * Q;
        }
    };
  }
  return res;
}

template <class T>
struct AttentionParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

// Multi-head self-attention over axis 1 of x [B, S, E].
template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const AttentionParams<T>& p, std::size_t heads,
                               std::vector<T>* probs = nullptr) {
  auto q = linear(x, p.wq, p.bq);
  auto k = linear(x, p.wk, p.bk);
  auto v = linear(x, p.wv, p.bv);
  return linear(scaled_dot_attention(q, k, v, heads, probs), p.wo, p.bo);
}

template <class T>
struct FeedForwardParams {
  Tensor<T> w1, b1, w2, b2;
};

template <class T>
Tensor<T> feed_forward(const Tensor<T>& x, const FeedForwardParams<T>& p) {
  return linear(relu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

}  // namespace otsvad::ops
