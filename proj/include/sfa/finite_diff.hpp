// SPDX-License-Identifier: Apache-2.0
//
// Central finite differences, the oracle for every autodiff gradient.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sfa/tensor.hpp"

namespace sfa {

/// d f / d x by (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per coordinate.
/// `f` receives a fresh leaf each call and must be deterministic.
template <typename T>
Tensor<T> finite_diff_gradient(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x,
                               T eps) {
  if (!(eps > T(0))) throw ContractError("finite_diff_gradient: eps must be positive");
  std::vector<T> probe = x.data();
  std::vector<T> out(probe.size());
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const T saved = probe[i];
    probe[i] = saved + eps;
    const T up = f(Tensor<T>(x.shape(), probe));
    probe[i] = saved - eps;
    const T down = f(Tensor<T>(x.shape(), probe));
    probe[i] = saved;
    out[i] = (up - down) / (T(2) * eps);
  }
  return Tensor<T>(x.shape(), std::move(out));
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). The floor keeps coordinates
/// whose true derivative is ~0 from dividing round-off by round-off.
template <typename T>
T max_relative_error(std::span<const T> a, std::span<const T> b, T floor = T(1e-4)) {
  if (a.size() != b.size()) throw ShapeError("max_relative_error: length mismatch");
  T worst = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

template <typename T>
T max_abs_difference(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_difference: length mismatch");
  T worst = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

/// Largest relative error between autodiff and central differences over every
/// parameter reachable through model.visit. `loss` must rebuild its graph from
/// the current parameter values on each call. Gradients are cleared on exit.
template <typename T, typename Model>
T parameter_fd_error(Model& model, const std::function<Tensor<T>()>& loss, T eps,
                     T floor = T(1e-4)) {
  std::vector<Tensor<T>> params;
  model.visit("", [&](const std::string&, Tensor<T>& t) {
    t.zero_grad();
    params.push_back(t);
  });
  backward(loss());
  T worst = T(0);
  for (auto& p : params) {
    const std::vector<T> analytic = p.grad();
    std::vector<T>& w = p.mutable_leaf_data();
    std::vector<T> numeric(w.size());
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T saved = w[i];
      w[i] = saved + eps;
      const T up = loss().item();
      w[i] = saved - eps;
      const T down = loss().item();
      w[i] = saved;
      numeric[i] = (up - down) / (T(2) * eps);
    }
    worst = std::max(worst, max_relative_error<T>(analytic, numeric, floor));
  }
  for (auto& p : params) p.zero_grad();
  return worst;
}

}  // namespace sfa
