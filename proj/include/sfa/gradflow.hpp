// SPDX-License-Identifier: Apache-2.0
//
// Gradient-flow checks for the selection step.
//
// Direct path: excitations are evaluated, detached and held fixed while the
// branch inputs of select() are fresh leaves. The Jacobian of u with respect
// to branch n is then diagonal per (position, feature) and equals the
// softmax weight of branch n for that feature.
//
// Shared gate (selection removed): the merged representation is
// sum_n z_n + b with z_n the contribution of branch n through its row block
// of the merge matrix. With the single excitation frozen, du/dz_n = e for
// every n, so the per-branch coefficients are identical.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "sfa/blocks.hpp"
#include "sfa/finite_diff.hpp"

namespace sfa {

struct BranchCoefficients {
  std::size_t branch = 0;
  std::vector<double> coefficient;  // per feature, read from the Jacobian diagonal
  std::vector<double> expected;     // softmax weight (or shared gate) per feature
  double max_error = 0;             // |diagonal - expected| over all positions
  double off_diagonal = 0;          // largest |entry| off the diagonal
};

struct FdPoint {
  double eps = 0;
  double error = 0;
};

struct GradFlowReport {
  std::string check;
  std::string variant;
  std::vector<BranchCoefficients> branches;
  double spread = 0;  // max over features and branch pairs of |c_n - c_m|
  double max_error = 0;
  double reconstruction_error = 0;
  double tolerance = 0;
  std::vector<FdPoint> fd_sweep;
  std::vector<GradFlowReport> parts;
  bool pass = false;

  nlohmann::json to_json() const {
    nlohmann::json j{{"check", check},         {"variant", variant},
                     {"spread", spread},       {"max_error", max_error},
                     {"tolerance", tolerance}, {"pass", pass}};
    if (reconstruction_error != 0) j["reconstruction_error"] = reconstruction_error;
    if (!branches.empty()) {
      auto& arr = j["branches"] = nlohmann::json::array();
      for (const auto& b : branches) {
        arr.push_back({{"branch", b.branch + 1},
                       {"coefficient", b.coefficient},
                       {"expected", b.expected},
                       {"max_error", b.max_error},
                       {"off_diagonal", b.off_diagonal}});
      }
    }
    if (!fd_sweep.empty()) {
      auto& arr = j["eps_sweep"] = nlohmann::json::array();
      for (const auto& p : fd_sweep) arr.push_back({{"eps", p.eps}, {"error", p.error}});
    }
    if (!parts.empty()) {
      auto& arr = j["parts"] = nlohmann::json::array();
      for (const auto& p : parts) arr.push_back(p.to_json());
    }
    return j;
  }
};

inline constexpr double kDirectPathTolerance = 1e-6;
inline constexpr double kUniformSpreadTolerance = 1e-9;

namespace detail {

inline double branch_spread(const std::vector<BranchCoefficients>& b) {
  double spread = 0;
  for (std::size_t n = 0; n < b.size(); ++n)
    for (std::size_t m = n + 1; m < b.size(); ++m)
      for (std::size_t d = 0; d < b[n].coefficient.size(); ++d)
        spread = std::max(spread, std::abs(b[n].coefficient[d] - b[m].coefficient[d]));
  return spread;
}

/// Full Jacobian of `combine(leaves)` (L x F) with respect to every leaf
/// (each L x F), compared with diag(expected[n]) per feature.
template <typename T>
std::vector<BranchCoefficients> diagonal_jacobian(
    const std::vector<Tensor<T>>& values,
    const std::function<Tensor<T>(const std::vector<Tensor<T>>&)>& combine,
    const std::vector<std::vector<double>>& expected) {
  const std::size_t len = values.front().dim(0), f = values.front().dim(1);
  std::vector<Tensor<T>> leaves;
  for (const auto& v : values) {
    Tensor<T> leaf(v.shape(), v.data());
    leaf.set_requires_grad();
    leaves.push_back(leaf);
  }
  std::vector<BranchCoefficients> out(values.size());
  for (std::size_t n = 0; n < out.size(); ++n) {
    out[n].branch = n;
    out[n].coefficient.assign(f, 0.0);
    out[n].expected = expected[n];
  }
  std::vector<T> onehot(len * f, T(0));
  for (std::size_t l = 0; l < len; ++l)
    for (std::size_t d = 0; d < f; ++d) {
      onehot[l * f + d] = T(1);
      backward(sum_all(mul(combine(leaves), Tensor<T>(Shape{len, f}, onehot))));
      onehot[l * f + d] = T(0);
      for (std::size_t n = 0; n < leaves.size(); ++n) {
        const std::vector<T> g = leaves[n].grad();
        leaves[n].zero_grad();
        for (std::size_t k = 0; k < g.size(); ++k) {
          const double gk = static_cast<double>(g[k]);
          if (k == l * f + d) {
            out[n].coefficient[d] += gk / static_cast<double>(len);
            out[n].max_error = std::max(out[n].max_error, std::abs(gk - expected[n][d]));
          } else {
            out[n].off_diagonal = std::max(out[n].off_diagonal, std::abs(gk));
          }
        }
      }
    }
  return out;
}

}  // namespace detail

/// Frozen-gate per-branch coefficients for either variant.
template <typename T>
GradFlowReport direct_coefficients(const SfaParams<T>& p, const Tensor<T>& x, const Mask& mask = {}) {
  SfaTrace<T> trace;
  {
    NoGradGuard no_grad;
    trace = sfa_trace(x, p, mask);
  }
  const std::size_t f = p.config.branch_width();
  std::vector<Tensor<T>> frozen;
  for (const auto& e : trace.excitations) frozen.push_back(e.detach());

  GradFlowReport r;
  r.check = "direct_path";
  r.tolerance = kDirectPathTolerance;
  if (!p.config.flags.disable_selection) {
    r.variant = "with_selection";
    const Tensor<T> w = selection_weights(frozen);
    std::vector<std::vector<double>> expected(frozen.size(), std::vector<double>(f));
    for (std::size_t n = 0; n < frozen.size(); ++n)
      for (std::size_t d = 0; d < f; ++d) expected[n][d] = static_cast<double>(w.at(n, 0, d));
    r.branches = detail::diagonal_jacobian<T>(
        trace.branches, [&](const std::vector<Tensor<T>>& b) { return select(frozen, b, p); },
        expected);
  } else {
    r.variant = "without_selection";
    // z_n = branch_n W_merge[n-th row block]
    std::vector<Tensor<T>> z;
    for (std::size_t n = 0; n < trace.branches.size(); ++n) {
      z.push_back(matmul(trace.branches[n], narrow(p.merge.weight, 0, n * f, f)).detach());
    }
    const Tensor<T> gate = frozen.front();
    const Tensor<T> bias = p.merge.bias.detach();
    auto combine = [&](const std::vector<Tensor<T>>& parts) {
      Tensor<T> acc = bias;
      for (const auto& zn : parts) acc = add(acc, zn);
      return mul(gate, acc);
    };
    {
      NoGradGuard no_grad;
      r.reconstruction_error = static_cast<double>(
          max_abs_difference<T>(combine(z).data(), select(frozen, trace.branches, p).data()));
    }
    std::vector<double> e(f);
    for (std::size_t d = 0; d < f; ++d) e[d] = static_cast<double>(gate.at(d));
    r.branches = detail::diagonal_jacobian<T>(
        z, combine, std::vector<std::vector<double>>(z.size(), e));
  }
  for (const auto& b : r.branches) r.max_error = std::max({r.max_error, b.max_error, b.off_diagonal});
  r.spread = detail::branch_spread(r.branches);
  r.pass = r.max_error <= r.tolerance && r.reconstruction_error <= r.tolerance;
  return r;
}

/// Jacobian of select() under frozen excitations equals the softmax weights.
template <typename T>
GradFlowReport direct_path_check(const SfaParams<T>& p, const Tensor<T>& x, const Mask& mask = {}) {
  if (p.config.flags.disable_selection) {
    throw ContractError("direct_path_check: requires the selection step");
  }
  return direct_coefficients(p, x, mask);
}

/// Shared gate gives branch-uniform coefficients; selection gives differentiated ones.
template <typename T>
GradFlowReport uniformity_contrast(const SfaParams<T>& with, const SfaParams<T>& without,
                                   const Tensor<T>& x, const Mask& mask = {}) {
  const SfaConfig& a = with.config;
  const SfaConfig& b = without.config;
  if (a.dim != b.dim || a.r1 != b.r1 || a.r2 != b.r2 || a.branches != b.branches ||
      a.flags.disable_ae != b.flags.disable_ae) {
    throw ShapeError("uniformity_contrast: variants must share D, r1, r2, N and the auto encoder");
  }
  if (a.flags.disable_selection || !b.flags.disable_selection) {
    throw ContractError("uniformity_contrast: expects (with selection, without selection)");
  }
  GradFlowReport r;
  r.check = "uniformity_contrast";
  r.tolerance = kUniformSpreadTolerance;
  r.parts.push_back(direct_coefficients(with, x, mask));
  r.parts.push_back(direct_coefficients(without, x, mask));
  r.spread = r.parts[0].spread;
  r.pass = r.parts[0].pass && r.parts[1].pass && r.parts[1].spread < kUniformSpreadTolerance &&
           r.parts[0].spread > 0;
  return r;
}

inline const std::vector<double>& default_eps_sweep() {
  static const std::vector<double> sweep{1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9};
  return sweep;
}

/// d(sum c * f(x))/dx by autodiff against central differences. Failure is
/// reported, not thrown.
template <typename T>
GradFlowReport full_chain_fd_check(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                                   const Tensor<T>& x, T eps, double tol,
                                   const std::vector<double>& sweep = default_eps_sweep(),
                                   std::uint64_t seed = 7) {
  GradFlowReport r;
  r.check = "full_chain_fd";
  r.tolerance = tol;
  Tensor<T> c;
  {
    NoGradGuard no_grad;
    const Tensor<T> y = f(x);
    c = Tensor<T>::uniform(y.shape(), T(-1), T(1), seed);
  }
  auto loss = [&](const Tensor<T>& v) { return sum_all(mul(f(v), c)); };
  Tensor<T> probe(x.shape(), x.data());
  probe.set_requires_grad();
  const GradMap<T> reached = backward(loss(probe));
  const std::vector<T> analytic = probe.grad();
  // Leave parameters captured by f as they were.
  for (const auto& leaf : reached.leaves)
    if (leaf.node() != probe.node()) leaf.zero_grad();
  auto error_at = [&](T h) {
    const Tensor<T> fd = finite_diff_gradient<T>([&](const Tensor<T>& v) { return loss(v).item(); }, x, h);
    return static_cast<double>(max_relative_error<T>(analytic, fd.data()));
  };
  r.max_error = error_at(eps);
  for (double h : sweep) r.fd_sweep.push_back({h, error_at(static_cast<T>(h))});
  r.pass = std::isfinite(r.max_error) && r.max_error < tol;
  return r;
}

template <typename T>
GradFlowReport full_chain_fd_check(const SfaParams<T>& p, const Tensor<T>& x, T eps, double tol,
                                   const std::vector<double>& sweep = default_eps_sweep()) {
  GradFlowReport r = full_chain_fd_check<T>(
      [&](const Tensor<T>& v) { return sfa_forward(v, p); }, x, eps, tol, sweep);
  r.variant = p.config.flags.disable_selection ? "without_selection" : "with_selection";
  return r;
}

template <typename T>
GradFlowReport full_chain_fd_check(const FaParams<T>& p, const Tensor<T>& x, T eps, double tol,
                                   const std::vector<double>& sweep = default_eps_sweep()) {
  GradFlowReport r = full_chain_fd_check<T>(
      [&](const Tensor<T>& v) { return fa_forward(v, p); }, x, eps, tol, sweep);
  r.variant = "fa";
  return r;
}

/// Index of the sweep point with the smallest error.
inline std::size_t best_sweep_index(const GradFlowReport& r) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < r.fd_sweep.size(); ++i)
    if (r.fd_sweep[i].error < r.fd_sweep[best].error) best = i;
  return best;
}

/// Spread of the frozen-gate coefficients, for any variant.
template <typename T>
double coefficient_spread(const SfaParams<T>& p, const Tensor<T>& x) {
  return direct_coefficients(p, x).spread;
}

}  // namespace sfa
