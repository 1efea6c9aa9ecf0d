// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sfa/tensor.hpp"

namespace sfa {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Tensors that received no gradient in a step
/// are left untouched, moments included.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), T(0));
      v_.emplace_back(p.numel(), T(0));
    }
  }

  template <typename Model>
  static Adam for_model(Model& model, AdamConfig cfg) {
    std::vector<Tensor<T>> params;
    model.visit("", [&](const std::string&, Tensor<T>& t) { params.push_back(t); });
    return Adam(std::move(params), cfg);
  }

  void step() {
    ++t_;
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T lr = static_cast<T>(cfg_.lr), eps = static_cast<T>(cfg_.epsilon);
    const T c1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, static_cast<double>(t_)));
    const T c2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, static_cast<double>(t_)));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor<T>& p = params_[k];
      if (!p.has_grad()) continue;
      const std::vector<T> g = p.grad();
      std::vector<T>& w = p.mutable_leaf_data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    }
    zero_grad();
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace sfa
