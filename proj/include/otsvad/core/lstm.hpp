#pragma once

#include <array>

#include "otsvad/core/ops.hpp"

namespace otsvad::ops {

template <class T>
struct LstmDirectionParams {
  Tensor<T> w_ih;  // [4H, F]
  Tensor<T> w_hh;  // [4H, H]
  Tensor<T> b;     // [4H]
};

// Bidirectional LSTM over axis 1 of x [B, S, F]; output [B, S, 2H] with the
// forward direction in [0, H) and the backward direction in [H, 2H).
//
// Gate rows of the weights are ordered (input, forget, cell, output):
//   i = sigmoid(.), f = sigmoid(.), g = tanh(.), o = sigmoid(.)
//   c_t = f * c_{t-1} + i * g,   h_t = o * tanh(c_t)
// with zero initial state in both directions.
template <class T>
Tensor<T> bilstm(const Tensor<T>& x, const LstmDirectionParams<T>& fwd, const LstmDirectionParams<T>& bwd) {
  detail::require(x.rank() == 3, "bilstm", "expects [B,S,F]");
  const std::size_t B = x.dim(0), S = x.dim(1), F = x.dim(2), H = fwd.w_hh.dim(1);
  for (const auto* d : {&fwd, &bwd}) {
    detail::require(d->w_ih.rank() == 2 && d->w_ih.dim(0) == 4 * H && d->w_ih.dim(1) == F, "bilstm",
                    "w_ih shape " + shape_str(d->w_ih.shape()));
    detail::require(d->w_hh.dim(0) == 4 * H && d->w_hh.dim(1) == H, "bilstm", "w_hh shape");
    detail::require(d->b.numel() == 4 * H, "bilstm", "bias shape");
  }
  // Per direction: activated gates [B,S,4H] and cell states [B,S,H].
  struct Saved {
    std::vector<T> gates, cell;
  };
  auto saved = std::make_shared<std::array<Saved, 2>>();
  std::vector<T> out(B * S * 2 * H);
  const LstmDirectionParams<T>* dirs[2] = {&fwd, &bwd};
  for (int d = 0; d < 2; ++d) {
    const auto& p = *dirs[d];
    auto& sv = (*saved)[d];
    sv.gates.assign(B * S * 4 * H, T(0));
    sv.cell.assign(B * S * H, T(0));
    MapM<T> xp(sv.gates.data(), B * S, 4 * H);
    xp.noalias() = CMapM<T>(x.data(), B * S, F) * CMapM<T>(p.w_ih.data(), 4 * H, F).transpose();
    xp.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(p.b.data(), 4 * H);
    CMapM<T> whh(p.w_hh.data(), 4 * H, H);
    MatRM<T> hprev = MatRM<T>::Zero(B, H), cprev = MatRM<T>::Zero(B, H), rec(B, 4 * H);
    for (std::size_t step = 0; step < S; ++step) {
      const std::size_t s = d == 0 ? step : S - 1 - step;
      rec.noalias() = hprev * whh.transpose();
      for (std::size_t b = 0; b < B; ++b) {
        T* gt = sv.gates.data() + (b * S + s) * 4 * H;
        T* ct = sv.cell.data() + (b * S + s) * H;
        T* ht = out.data() + (b * S + s) * 2 * H + d * H;
        for (std::size_t j = 0; j < 4 * H; ++j) gt[j] += rec(b, j);
        for (std::size_t j = 0; j < H; ++j) {
          const T i = T(1) / (T(1) + std::exp(-gt[j]));
          const T f = T(1) / (T(1) + std::exp(-gt[H + j]));
          const T g = std::tanh(gt[2 * H + j]);
          const T o = T(1) / (T(1) + std::exp(-gt[3 * H + j]));
          gt[j] = i;
          gt[H + j] = f;
          gt[2 * H + j] = g;
          gt[3 * H + j] = o;
          ct[j] = f * cprev(b, j) + i * g;
          ht[j] = o * std::tanh(ct[j]);
          cprev(b, j) = ct[j];
          hprev(b, j) = ht[j];
        }
      }
    }
  }
  auto res = make_result<T>("bilstm", Shape{B, S, 2 * H}, std::move(out),
                            {x.node_ptr(), fwd.w_ih.node_ptr(), fwd.w_hh.node_ptr(), fwd.b.node_ptr(),
                             bwd.w_ih.node_ptr(), bwd.w_hh.node_ptr(), bwd.b.node_ptr()});
  if (res.requires_grad()) {
    auto *o = res.node(), *px = x.node();
    std::array<std::array<otsvad::detail::Node<T>*, 3>, 2> pn{
        {{fwd.w_ih.node(), fwd.w_hh.node(), fwd.b.node()}, {bwd.w_ih.node(), bwd.w_hh.node(), bwd.b.node()}}};
    o->backward_fn = [o, px, pn, saved, B, S, F, H] {
      for (int d = 0; d < 2; ++d) {
        auto [pih, phh, pb] = pn[d];
        const auto& sv = (*saved)[d];
        CMapM<T> whh(phh->value.data(), 4 * H, H);
        MatRM<T> dpre(B * S, 4 * H);
        MatRM<T> dh_next = MatRM<T>::Zero(B, H), dc_next = MatRM<T>::Zero(B, H);
        MatRM<T> dg_step(B, 4 * H), hprev(B, H);
        for (std::size_t step = S; step-- > 0;) {
          const std::size_t s = d == 0 ? step : S - 1 - step;
          const bool first = step == 0;
          const std::size_t sp = d == 0 ? s - 1 : s + 1;  // previous time index, valid unless first
          for (std::size_t b = 0; b < B; ++b) {
            const T* gt = sv.gates.data() + (b * S + s) * 4 * H;
            const T* ct = sv.cell.data() + (b * S + s) * H;
            const T* cp = first ? nullptr : sv.cell.data() + (b * S + sp) * H;
            const T* go = o->grad.data() + (b * S + s) * 2 * H + d * H;
            for (std::size_t j = 0; j < H; ++j) {
              const T i = gt[j], f = gt[H + j], g = gt[2 * H + j], og = gt[3 * H + j];
              const T tc = std::tanh(ct[j]);
              const T dh = go[j] + dh_next(b, j);
              const T dc = dh * og * (T(1) - tc * tc) + dc_next(b, j);
              const T cprev = cp ? cp[j] : T(0);
              dg_step(b, j) = dc * g * i * (T(1) - i);
              dg_step(b, H + j) = dc * cprev * f * (T(1) - f);
              dg_step(b, 2 * H + j) = dc * i * (T(1) - g * g);
              dg_step(b, 3 * H + j) = dh * tc * og * (T(1) - og);
              dc_next(b, j) = dc * f;
              hprev(b, j) = first ? T(0) : o->value[(b * S + sp) * 2 * H + d * H + j];
            }
            dpre.row(b * S + s) = dg_step.row(b);
          }
          dh_next.noalias() = dg_step * whh;
          if (phh->requires_grad) MapM<T>(phh->grad_data(), 4 * H, H).noalias() += dg_step.transpose() * hprev;
        }
        if (px->requires_grad)
          MapM<T>(px->grad_data(), B * S, F).noalias() += dpre * CMapM<T>(pih->value.data(), 4 * H, F);
        if (pih->requires_grad)
          MapM<T>(pih->grad_data(), 4 * H, F).noalias() += dpre.transpose() * CMapM<T>(px->value.data(), B * S, F);
        if (pb->requires_grad) {
          T* gb = pb->grad_data();
          for (Eigen::Index r = 0; r < dpre.rows(); ++r)
            for (std::size_t j = 0; j < 4 * H; ++j) gb[j] += dpre(r, Eigen::Index(j));
        }
      }
    };
  }
  return res;
}

}  // namespace otsvad::ops
