// SPDX-License-Identifier: Apache-2.0
//
// Small parameterized building blocks shared by the feature blocks and the
// matcher: affine layers, bidirectional GRU layers and the initializers.

#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <type_traits>

#include "sfa/gru.hpp"
#include "sfa/ops.hpp"
#include "sfa/tensor.hpp"

namespace sfa {

/// Callback used to enumerate named parameters: f(path, tensor).
template <typename T>
using ParamVisitor = std::function<void(const std::string&, Tensor<T>&)>;

/// Uniform in +-sqrt(6 / (fan_in + fan_out)), marked trainable.
template <typename T>
Tensor<T> glorot(const Shape& shape, std::size_t fan_in, std::size_t fan_out,
                 std::mt19937_64& rng) {
  const T limit = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
  Tensor<T> t = Tensor<T>::uniform(shape, -limit, limit, rng);
  t.set_requires_grad();
  return t;
}

template <typename T>
Tensor<T> zero_bias(std::size_t n) {
  Tensor<T> t = Tensor<T>::zeros(Shape{1, n});
  t.set_requires_grad();
  return t;
}

/// Row-vector affine map x W + b; on an L x in input this is a kernel-size-1
/// convolution (positions never mix).
template <typename T>
struct Linear {
  Tensor<T> weight;  // in x out
  Tensor<T> bias;    // 1 x out

  static Linear init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    return {glorot<T>(Shape{in, out}, in, out, rng), zero_bias<T>(out)};
  }
  static std::size_t count(std::size_t in, std::size_t out) { return in * out + out; }

  std::size_t in() const { return weight.dim(0); }
  std::size_t out() const { return weight.dim(1); }

  Tensor<T> operator()(const Tensor<T>& x) const { return add(matmul(x, weight), bias); }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

template <typename T>
GruCellWeights<T> init_gru_cell(std::size_t in, std::size_t hidden, std::mt19937_64& rng) {
  const Shape w{in + hidden, hidden};
  GruCellWeights<T> c;
  c.w_update = glorot<T>(w, in + hidden, hidden, rng);
  c.w_reset = glorot<T>(w, in + hidden, hidden, rng);
  c.w_candidate = glorot<T>(w, in + hidden, hidden, rng);
  c.b_update = zero_bias<T>(hidden);
  c.b_reset = zero_bias<T>(hidden);
  c.b_candidate = zero_bias<T>(hidden);
  return c;
}

template <typename T>
void visit_gru_cell(GruCellWeights<T>& c, const std::string& prefix, const ParamVisitor<T>& f) {
  f(prefix + ".w_update", c.w_update);
  f(prefix + ".w_reset", c.w_reset);
  f(prefix + ".w_candidate", c.w_candidate);
  f(prefix + ".b_update", c.b_update);
  f(prefix + ".b_reset", c.b_reset);
  f(prefix + ".b_candidate", c.b_candidate);
}

/// One bidirectional GRU layer: L x in -> L x 2*hidden, [forward; backward].
template <typename T>
struct BiGruLayer {
  GruCellWeights<T> forward;
  GruCellWeights<T> backward;

  static BiGruLayer init(std::size_t in, std::size_t hidden, std::mt19937_64& rng) {
    BiGruLayer layer;
    layer.forward = init_gru_cell<T>(in, hidden, rng);
    layer.backward = init_gru_cell<T>(in, hidden, rng);
    return layer;
  }
  static std::size_t count(std::size_t in, std::size_t hidden) {
    return 2 * 3 * ((in + hidden) * hidden + hidden);
  }

  std::size_t in() const { return forward.input(); }
  std::size_t hidden() const { return forward.hidden(); }

  Tensor<T> operator()(const Tensor<T>& x, const Mask& mask) const {
    return concat<T>({gru_sequence(x, forward, mask, false), gru_sequence(x, backward, mask, true)},
                     1);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    visit_gru_cell(forward, prefix + ".fwd", f);
    visit_gru_cell(backward, prefix + ".bwd", f);
  }
};

/// Deep copy of any parameter set exposing visit(prefix, f). Plain struct
/// copies share tensor storage; this one does not.
template <typename Params>
Params clone_params(const Params& p) {
  Params c = p;
  c.visit("", [](const std::string&, auto& t) {
    const bool trainable = t.requires_grad();
    t = std::remove_reference_t<decltype(t)>(t.shape(), t.data());
    t.set_requires_grad(trainable);
  });
  return c;
}

}  // namespace sfa
