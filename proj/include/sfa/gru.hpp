// SPDX-License-Identifier: Apache-2.0
//
// Fused single-direction GRU over a whole sequence, as one graph node with a
// hand-written backpropagation-through-time rule.
//
//   z = sigmoid([x; h] Wz + bz)
//   r = sigmoid([x; h] Wr + br)
//   c = tanh([x; r*h] Wc + bc)
//   h' = (1 - z) * c + z * h
//
// Each weight is (in + hidden) x hidden: rows [0, in) act on the input and
// rows [in, in + hidden) on the (reset-gated) previous state. The initial
// state is zero; masked positions carry the previous state through unchanged.

#pragma once

#include <cmath>
#include <vector>

#include "sfa/ops.hpp"
#include "sfa/tensor.hpp"

namespace sfa {

template <typename T>
struct GruCellWeights {
  Tensor<T> w_update;     // (in + hidden) x hidden
  Tensor<T> w_reset;      // (in + hidden) x hidden
  Tensor<T> w_candidate;  // (in + hidden) x hidden
  Tensor<T> b_update;     // 1 x hidden
  Tensor<T> b_reset;      // 1 x hidden
  Tensor<T> b_candidate;  // 1 x hidden

  std::size_t hidden() const { return w_update.dim(1); }
  std::size_t input() const { return w_update.dim(0) - hidden(); }
};

namespace detail {

template <typename T>
void validate_gru(const Tensor<T>& x, const GruCellWeights<T>& w) {
  const std::size_t h = w.hidden();
  const std::size_t rows = w.w_update.dim(0);
  for (const auto* m : {&w.w_update, &w.w_reset, &w.w_candidate}) {
    if (m->rank() != 2 || m->dim(0) != rows || m->dim(1) != h) {
      throw ShapeError("gru: gate weights must share one (in + hidden) x hidden shape");
    }
  }
  for (const auto* b : {&w.b_update, &w.b_reset, &w.b_candidate}) {
    if (b->numel() != h) throw ShapeError("gru: bias length must equal hidden size");
  }
  if (rows <= h) throw ShapeError("gru: weight rows must exceed hidden size");
  if (x.rank() != 2 || x.dim(1) != rows - h) {
    throw ShapeError("gru: input " + x.shape().str() + " does not match weights " +
                     w.w_update.shape().str());
  }
}

// out[j] += sum_p v[p] * W[(row0 + p) * h + j]
template <typename T>
void accumulate_rows(T* out, const T* v, std::size_t count, const T* w, std::size_t row0,
                     std::size_t h) {
  for (std::size_t p = 0; p < count; ++p) {
    const T a = v[p];
    const T* wr = w + (row0 + p) * h;
    for (std::size_t j = 0; j < h; ++j) out[j] += a * wr[j];
  }
}

}  // namespace detail

/// Runs one GRU direction over x (L x in); returns L x hidden where row t is
/// the state after consuming position t. With `reverse` the sequence is read
/// from the last position to the first.
template <typename T>
Tensor<T> gru_sequence(const Tensor<T>& x, const GruCellWeights<T>& w, const Mask& mask = {},
                       bool reverse = false) {
  detail::validate_gru(x, w);
  const std::size_t len = x.dim(0);
  if (!mask.empty() && mask.size() != len) throw ShapeError("gru: mask length mismatch");
  const std::size_t in = w.input();
  const std::size_t h = w.hidden();

  // Saved activations per step, indexed by position.
  struct Saved {
    std::vector<T> z, r, c, h_prev;
  };
  auto saved = std::make_shared<Saved>();
  saved->z.assign(len * h, T(0));
  saved->r.assign(len * h, T(0));
  saved->c.assign(len * h, T(0));
  saved->h_prev.assign(len * h, T(0));

  const T* xv = x.data().data();
  const T* wz = w.w_update.data().data();
  const T* wr = w.w_reset.data().data();
  const T* wc = w.w_candidate.data().data();
  const T* bz = w.b_update.data().data();
  const T* br = w.b_reset.data().data();
  const T* bc = w.b_candidate.data().data();

  std::vector<T> out(len * h, T(0));
  std::vector<T> state(h, T(0)), pre_z(h), pre_r(h), pre_c(h), gated(h);
  for (std::size_t step = 0; step < len; ++step) {
    const std::size_t t = reverse ? len - 1 - step : step;
    T* hp = saved->h_prev.data() + t * h;
    std::copy(state.begin(), state.end(), hp);
    if (!mask.valid(t)) {
      std::copy(state.begin(), state.end(), out.begin() + static_cast<std::ptrdiff_t>(t * h));
      continue;
    }
    const T* xt = xv + t * in;
    std::copy_n(bz, h, pre_z.begin());
    std::copy_n(br, h, pre_r.begin());
    std::copy_n(bc, h, pre_c.begin());
    detail::accumulate_rows(pre_z.data(), xt, in, wz, 0, h);
    detail::accumulate_rows(pre_r.data(), xt, in, wr, 0, h);
    detail::accumulate_rows(pre_c.data(), xt, in, wc, 0, h);
    detail::accumulate_rows(pre_z.data(), hp, h, wz, in, h);
    detail::accumulate_rows(pre_r.data(), hp, h, wr, in, h);
    T* z = saved->z.data() + t * h;
    T* r = saved->r.data() + t * h;
    T* c = saved->c.data() + t * h;
    for (std::size_t j = 0; j < h; ++j) {
      z[j] = T(1) / (T(1) + std::exp(-pre_z[j]));
      r[j] = T(1) / (T(1) + std::exp(-pre_r[j]));
      gated[j] = r[j] * hp[j];
    }
    detail::accumulate_rows(pre_c.data(), gated.data(), h, wc, in, h);
    for (std::size_t j = 0; j < h; ++j) {
      c[j] = std::tanh(pre_c[j]);
      state[j] = (T(1) - z[j]) * c[j] + z[j] * hp[j];
    }
    std::copy(state.begin(), state.end(), out.begin() + static_cast<std::ptrdiff_t>(t * h));
  }

  return detail::make_result<T>(
      Shape{len, h}, std::move(out),
      {x.node(), w.w_update.node(), w.w_reset.node(), w.w_candidate.node(), w.b_update.node(),
       w.b_reset.node(), w.b_candidate.node()},
      [saved, mask, reverse, len, in, h](detail::Node<T>& node) {
        auto& px = *node.parents[0];
        auto& pwz = *node.parents[1];
        auto& pwr = *node.parents[2];
        auto& pwc = *node.parents[3];
        auto& pbz = *node.parents[4];
        auto& pbr = *node.parents[5];
        auto& pbc = *node.parents[6];
        T* gx = px.requires_grad ? px.grad_buffer().data() : nullptr;
        T* gwz = pwz.requires_grad ? pwz.grad_buffer().data() : nullptr;
        T* gwr = pwr.requires_grad ? pwr.grad_buffer().data() : nullptr;
        T* gwc = pwc.requires_grad ? pwc.grad_buffer().data() : nullptr;
        T* gbz = pbz.requires_grad ? pbz.grad_buffer().data() : nullptr;
        T* gbr = pbr.requires_grad ? pbr.grad_buffer().data() : nullptr;
        T* gbc = pbc.requires_grad ? pbc.grad_buffer().data() : nullptr;
        const T* xv = px.data.data();
        const T* wz = pwz.data.data();
        const T* wr = pwr.data.data();
        const T* wc = pwc.data.data();

        std::vector<T> carry(h, T(0)), dh(h), dzp(h), drp(h), dcp(h), dgated(h), gated(h);
        for (std::size_t step = 0; step < len; ++step) {
          // Walk positions in the reverse of the forward reading order.
          const std::size_t t = reverse ? step : len - 1 - step;
          for (std::size_t j = 0; j < h; ++j) dh[j] = node.grad[t * h + j] + carry[j];
          if (!mask.valid(t)) {
            carry = dh;
            continue;
          }
          const T* z = saved->z.data() + t * h;
          const T* r = saved->r.data() + t * h;
          const T* c = saved->c.data() + t * h;
          const T* hp = saved->h_prev.data() + t * h;
          const T* xt = xv + t * in;
          for (std::size_t j = 0; j < h; ++j) {
            dcp[j] = dh[j] * (T(1) - z[j]) * (T(1) - c[j] * c[j]);
            dzp[j] = dh[j] * (hp[j] - c[j]) * z[j] * (T(1) - z[j]);
            carry[j] = dh[j] * z[j];
            gated[j] = r[j] * hp[j];
          }
          // Candidate path: input [x; r*h].
          std::fill(dgated.begin(), dgated.end(), T(0));
          for (std::size_t p = 0; p < h; ++p) {
            const T* wrow = wc + (in + p) * h;
            T acc = T(0);
            for (std::size_t j = 0; j < h; ++j) acc += dcp[j] * wrow[j];
            dgated[p] = acc;
          }
          for (std::size_t j = 0; j < h; ++j) {
            drp[j] = dgated[j] * hp[j] * r[j] * (T(1) - r[j]);
            carry[j] += dgated[j] * r[j];
          }
          // Gate paths: input [x; h].
          for (std::size_t p = 0; p < h; ++p) {
            const T* zrow = wz + (in + p) * h;
            const T* rrow = wr + (in + p) * h;
            T acc = T(0);
            for (std::size_t j = 0; j < h; ++j) acc += dzp[j] * zrow[j] + drp[j] * rrow[j];
            carry[p] += acc;
          }
          if (gx) {
            for (std::size_t p = 0; p < in; ++p) {
              const T* zrow = wz + p * h;
              const T* rrow = wr + p * h;
              const T* crow = wc + p * h;
              T acc = T(0);
              for (std::size_t j = 0; j < h; ++j)
                acc += dzp[j] * zrow[j] + drp[j] * rrow[j] + dcp[j] * crow[j];
              gx[t * in + p] += acc;
            }
          }
          auto outer = [&](T* gw, const T* dpre, const T* tail) {
            if (!gw) return;
            for (std::size_t p = 0; p < in; ++p) {
              const T a = xt[p];
              T* grow = gw + p * h;
              for (std::size_t j = 0; j < h; ++j) grow[j] += a * dpre[j];
            }
            for (std::size_t p = 0; p < h; ++p) {
              const T a = tail[p];
              T* grow = gw + (in + p) * h;
              for (std::size_t j = 0; j < h; ++j) grow[j] += a * dpre[j];
            }
          };
          outer(gwz, dzp.data(), hp);
          outer(gwr, drp.data(), hp);
          outer(gwc, dcp.data(), gated.data());
          for (std::size_t j = 0; j < h; ++j) {
            if (gbz) gbz[j] += dzp[j];
            if (gbr) gbr[j] += drp[j];
            if (gbc) gbc[j] += dcp[j];
          }
        }
      });
}

/// The same recurrence expressed with primitive graph ops, one node per
/// arithmetic step. Slow; kept as an independent check of gru_sequence.
template <typename T>
Tensor<T> gru_sequence_composed(const Tensor<T>& x, const GruCellWeights<T>& w,
                                const Mask& mask = {}, bool reverse = false) {
  detail::validate_gru(x, w);
  const std::size_t len = x.dim(0);
  const std::size_t h = w.hidden();
  Tensor<T> state = Tensor<T>::zeros(Shape{1, h});
  const Tensor<T> one = Tensor<T>::ones(Shape{1, h});
  std::vector<Tensor<T>> rows(len);
  for (std::size_t step = 0; step < len; ++step) {
    const std::size_t t = reverse ? len - 1 - step : step;
    if (mask.valid(t)) {
      const Tensor<T> xt = narrow(x, 0, t, 1);
      const Tensor<T> xh = concat<T>({xt, state}, 1);
      const Tensor<T> z = sigmoid(add(matmul(xh, w.w_update), w.b_update));
      const Tensor<T> r = sigmoid(add(matmul(xh, w.w_reset), w.b_reset));
      const Tensor<T> xrh = concat<T>({xt, mul(r, state)}, 1);
      const Tensor<T> c = tanh(add(matmul(xrh, w.w_candidate), w.b_candidate));
      state = add(mul(sub(one, z), c), mul(z, state));
    }
    rows[t] = state;
  }
  return concat(rows, 0);
}

}  // namespace sfa
