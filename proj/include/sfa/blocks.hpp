// SPDX-License-Identifier: Apache-2.0
//
// Feature Attention (FA) and Selective Feature Attention (SFA) blocks.
// Both are shape-preserving maps L x D -> L x D.
//
// FA:  s = masked mean of x over positions
//      e = sigmoid(tanh(s W1 + b1) W2 + b2)
//      u = e * x                       (e broadcast over positions)
//
// SFA: x  -> kernel-size-1 down projection (L x D/r1)
//         -> N stacked BiGRU layers, branch n = output of layer n (L x 2D/r1)
//         -> stacked N x L x 2D/r1
//         -> s = GAP + GMP over (branch, position)
//         -> shared tanh reducer, one sigmoid exciter per branch
//         -> per-feature softmax across branches, weighted branch sum
//         -> kernel-size-1 up projection back to L x D

#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sfa/layers.hpp"
#include "sfa/ops.hpp"
#include "sfa/tensor.hpp"

namespace sfa {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct AblationFlags {
  bool disable_ae = false;
  bool disable_gmp = false;
  bool disable_gap = false;
  bool disable_selection = false;

  void validate() const {
    if (disable_gmp && disable_gap) {
      throw ConfigError("ablation: global max and average pooling cannot both be removed");
    }
  }
  bool any() const { return disable_ae || disable_gmp || disable_gap || disable_selection; }
  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

// ---------------------------------------------------------------------------
// FA

struct FaConfig {
  std::size_t dim = 0;    // D
  std::size_t decay = 1;  // r

  std::size_t reduced() const { return dim / decay; }
  void validate() const {
    if (dim == 0 || decay == 0) throw ConfigError("fa: D and r must be positive");
    if (dim % decay != 0) throw ConfigError("fa: D must be divisible by r");
  }
};

template <typename T>
struct FaParams {
  FaConfig config;
  Linear<T> fc1;  // D x D/r
  Linear<T> fc2;  // D/r x D

  static FaParams init(const FaConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    return {cfg, Linear<T>::init(cfg.dim, cfg.reduced(), rng),
            Linear<T>::init(cfg.reduced(), cfg.dim, rng)};
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    fc1.visit(prefix + ".fc1", f);
    fc2.visit(prefix + ".fc2", f);
  }
};

/// Excitation vector e (1 x D) of the FA block.
template <typename T>
Tensor<T> fa_excitation(const Tensor<T>& x, const FaParams<T>& p, const Mask& mask = {}) {
  if (x.rank() != 2 || x.dim(1) != p.config.dim) {
    throw ShapeError("fa_forward: input " + x.shape().str() + " does not match D=" +
                     std::to_string(p.config.dim));
  }
  const Tensor<T> s = mean(x, 0, mask);
  return sigmoid(p.fc2(tanh(p.fc1(s))));
}

template <typename T>
Tensor<T> fa_forward(const Tensor<T>& x, const FaParams<T>& p, const Mask& mask = {}) {
  return mul(fa_excitation(x, p, mask), x);
}

// ---------------------------------------------------------------------------
// SFA

struct SfaConfig {
  std::size_t dim = 0;       // D
  std::size_t r1 = 1;        // auto-encoder reduction
  std::size_t r2 = 1;        // excitation bottleneck
  std::size_t branches = 1;  // N
  AblationFlags flags;

  /// Per-direction GRU width. Without the auto encoder the BiGRU stack reads
  /// D directly and its concatenated output (2 * D/2) already has width D.
  std::size_t hidden() const { return flags.disable_ae ? dim / 2 : dim / r1; }
  std::size_t gru_input() const { return flags.disable_ae ? dim : dim / r1; }
  std::size_t branch_width() const { return 2 * hidden(); }
  std::size_t reduced() const { return branch_width() / r2; }
  std::size_t exciter_count() const { return flags.disable_selection ? 1 : branches; }

  void validate() const {
    flags.validate();
    if (dim == 0 || r1 == 0 || r2 == 0 || branches == 0) {
      throw ConfigError("sfa: D, r1, r2 and N must be positive");
    }
    if (flags.disable_ae) {
      if (dim % 2 != 0) throw ConfigError("sfa: D must be even when the auto encoder is removed");
    } else if (dim % r1 != 0) {
      throw ConfigError("sfa: D must be divisible by r1");
    }
    if (branch_width() % r2 != 0) throw ConfigError("sfa: 2D/r1 must be divisible by r2");
  }
};

template <typename T>
struct SfaParams {
  SfaConfig config;
  Linear<T> ae_down;                  // D x D/r1 (absent without auto encoder)
  std::vector<BiGruLayer<T>> gru;     // N layers
  Linear<T> fc1;                      // 2D/r1 x 2D/(r1 r2), shared reducer
  std::vector<Linear<T>> exciters;    // N (or 1 without selection): 2D/(r1 r2) x 2D/r1
  Linear<T> merge;                    // N*2D/r1 x 2D/r1, only without selection
  Linear<T> ae_up;                    // 2D/r1 x D (absent without auto encoder)

  static SfaParams init(const SfaConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    SfaParams p;
    p.config = cfg;
    const std::size_t h = cfg.hidden();
    const std::size_t f = cfg.branch_width();
    if (!cfg.flags.disable_ae) p.ae_down = Linear<T>::init(cfg.dim, h, rng);
    for (std::size_t n = 0; n < cfg.branches; ++n) {
      p.gru.push_back(BiGruLayer<T>::init(n == 0 ? cfg.gru_input() : f, h, rng));
    }
    p.fc1 = Linear<T>::init(f, cfg.reduced(), rng);
    for (std::size_t n = 0; n < cfg.exciter_count(); ++n) {
      p.exciters.push_back(Linear<T>::init(cfg.reduced(), f, rng));
    }
    if (cfg.flags.disable_selection) p.merge = Linear<T>::init(cfg.branches * f, f, rng);
    if (!cfg.flags.disable_ae) p.ae_up = Linear<T>::init(f, cfg.dim, rng);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    if (ae_down.weight.defined()) ae_down.visit(prefix + ".ae_down", f);
    for (std::size_t n = 0; n < gru.size(); ++n) gru[n].visit(prefix + ".gru." + std::to_string(n), f);
    fc1.visit(prefix + ".fc1", f);
    for (std::size_t n = 0; n < exciters.size(); ++n) {
      exciters[n].visit(prefix + ".exciter." + std::to_string(n), f);
    }
    if (merge.weight.defined()) merge.visit(prefix + ".merge", f);
    if (ae_up.weight.defined()) ae_up.visit(prefix + ".ae_up", f);
  }
};

/// Kernel-size-1 projection: the same affine map applied at every position.
template <typename T>
Tensor<T> ae_project(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
  if (x.rank() != 2 || kernel.rank() != 2 || x.dim(1) != kernel.dim(0) ||
      bias.numel() != kernel.dim(1)) {
    throw ShapeError("ae_project: input " + x.shape().str() + " kernel " +
                     kernel.shape().str() + " bias " + bias.shape().str());
  }
  return add(matmul(x, kernel), reshape(bias, Shape{1, kernel.dim(1)}));
}

/// Runs the stacked BiGRU; branch n is the bidirectional output of layer n.
template <typename T>
std::vector<Tensor<T>> sbigru_split(const Tensor<T>& x, const std::vector<BiGruLayer<T>>& stack,
                                    const Mask& mask = {}) {
  if (stack.empty()) throw ConfigError("sbigru_split: empty GRU stack");
  if (x.rank() != 2 || x.dim(1) != stack.front().in()) {
    throw ShapeError("sbigru_split: input " + x.shape().str() + " does not match layer 1 width " +
                     std::to_string(stack.front().in()));
  }
  std::vector<Tensor<T>> branches;
  branches.reserve(stack.size());
  Tensor<T> h = x;
  for (std::size_t n = 0; n < stack.size(); ++n) {
    if (h.dim(1) != stack[n].in()) {
      throw ShapeError("sbigru_split: layer " + std::to_string(n + 1) + " expects width " +
                       std::to_string(stack[n].in()) + ", previous layer gives " +
                       std::to_string(h.dim(1)));
    }
    h = stack[n](h, mask);
    branches.push_back(h);
  }
  return branches;
}

/// N x (L x F) -> N x L x F.
template <typename T>
Tensor<T> fuse(const std::vector<Tensor<T>>& branches) {
  return stack(branches);
}

/// Descriptor s (1 x F) = mean over (branch, position) + max over
/// (branch, position), each term dropped when ablated.
template <typename T>
Tensor<T> squeeze(const Tensor<T>& fused, const Mask& mask, const AblationFlags& flags) {
  flags.validate();
  if (fused.rank() != 3) throw ShapeError("squeeze: expects N x L x F, got " + fused.shape().str());
  const Shape out{1, fused.dim(2)};
  Tensor<T> s;
  if (!flags.disable_gap) s = reshape(mean(mean(fused, 1, mask), 0), out);
  if (!flags.disable_gmp) {
    const Tensor<T> gmp = reshape(max(max(fused, 1, mask), 0), out);
    s = s.defined() ? add(s, gmp) : gmp;
  }
  return s;
}

/// Shared tanh reducer followed by one sigmoid exciter per branch.
template <typename T>
std::vector<Tensor<T>> excite(const Tensor<T>& s, const SfaParams<T>& p) {
  if (s.rank() != 2 || s.dim(0) != 1 || s.dim(1) != p.config.branch_width()) {
    throw ShapeError("excite: descriptor " + s.shape().str() + " does not match F=" +
                     std::to_string(p.config.branch_width()));
  }
  const Tensor<T> reduced = tanh(p.fc1(s));
  std::vector<Tensor<T>> e;
  e.reserve(p.exciters.size());
  for (const auto& ex : p.exciters) e.push_back(sigmoid(ex(reduced)));
  return e;
}

/// Per-feature softmax across branches: N x 1 x F weights summing to 1 over N.
template <typename T>
Tensor<T> selection_weights(const std::vector<Tensor<T>>& excitations) {
  return softmax(stack(excitations), 0);
}

/// sum_n weights[n] * branches[n] with weights N x 1 x F and branches N x L x F.
template <typename T>
Tensor<T> weighted_branch_sum(const Tensor<T>& weights, const std::vector<Tensor<T>>& branches) {
  const Tensor<T> fused = stack(branches);
  if (weights.rank() != 3 || weights.dim(0) != fused.dim(0) || weights.dim(2) != fused.dim(2)) {
    throw ShapeError("select: weights " + weights.shape().str() + " vs branches " +
                     fused.shape().str());
  }
  const Tensor<T> combined = sum(mul(weights, fused), 0);
  return reshape(combined, Shape{fused.dim(1), fused.dim(2)});
}

/// Branches concatenated along features and re-projected to F, the fused
/// representation gated by the single excitation when selection is removed.
template <typename T>
Tensor<T> merged_branches(const std::vector<Tensor<T>>& branches, const Linear<T>& merge) {
  return merge(concat(branches, 1));
}

/// Selection step. With selection: softmax-weighted branch sum. Without: one
/// excitation gates the merged branches.
template <typename T>
Tensor<T> select(const std::vector<Tensor<T>>& excitations, const std::vector<Tensor<T>>& branches,
                 const SfaParams<T>& p) {
  if (branches.empty()) throw ShapeError("select: no branches");
  if (!p.config.flags.disable_selection) {
    if (excitations.size() != branches.size()) {
      throw ShapeError("select: " + std::to_string(excitations.size()) + " excitations for " +
                       std::to_string(branches.size()) + " branches");
    }
    return weighted_branch_sum(selection_weights(excitations), branches);
  }
  if (excitations.size() != 1) throw ShapeError("select: single-gate variant needs one excitation");
  return mul(excitations.front(), merged_branches(branches, p.merge));
}

/// Intermediate values of one SFA forward pass.
template <typename T>
struct SfaTrace {
  Tensor<T> reduced_input;  // after the down projection
  std::vector<Tensor<T>> branches;
  Tensor<T> fused;
  Tensor<T> descriptor;
  std::vector<Tensor<T>> excitations;
  Tensor<T> selected;
  Tensor<T> output;
};

template <typename T>
SfaTrace<T> sfa_trace(const Tensor<T>& x, const SfaParams<T>& p, const Mask& mask = {}) {
  const SfaConfig& cfg = p.config;
  if (x.rank() != 2 || x.dim(1) != cfg.dim) {
    throw ShapeError("sfa_forward: input " + x.shape().str() + " does not match D=" +
                     std::to_string(cfg.dim));
  }
  SfaTrace<T> t;
  t.reduced_input = cfg.flags.disable_ae ? x : ae_project(x, p.ae_down.weight, p.ae_down.bias);
  t.branches = sbigru_split(t.reduced_input, p.gru, mask);
  t.fused = fuse(t.branches);
  t.descriptor = squeeze(t.fused, mask, cfg.flags);
  t.excitations = excite(t.descriptor, p);
  t.selected = select(t.excitations, t.branches, p);
  t.output = cfg.flags.disable_ae ? t.selected
                                  : ae_project(t.selected, p.ae_up.weight, p.ae_up.bias);
  return t;
}

template <typename T>
Tensor<T> sfa_forward(const Tensor<T>& x, const SfaParams<T>& p, const Mask& mask = {}) {
  return sfa_trace(x, p, mask).output;
}

// ---------------------------------------------------------------------------
// Bottleneck constraint and parameter accounting

struct BottleneckReport {
  double fa_dim = 0;       // D / r
  double branch_dim = 0;   // 2D / r1
  double reduced_dim = 0;  // 2D / (r1 r2)
  double threshold = 0;    // 8.33 log L
  bool fa_pass = false;
  bool branch_pass = false;
  bool reduced_pass = false;

  bool sfa_pass() const { return branch_pass && reduced_pass; }
  bool all_pass() const { return fa_pass && sfa_pass(); }
};

inline constexpr double kBottleneckSlope = 8.33;

/// Each reduced width must exceed 8.33 * log_base(L). `log_base` defaults to e.
inline BottleneckReport check_bottleneck(std::size_t dim, std::size_t r, std::size_t r1,
                                         std::size_t r2, std::size_t len,
                                         double log_base = std::numbers::e) {
  if (dim == 0 || r == 0 || r1 == 0 || r2 == 0 || len == 0) {
    throw ConfigError("check_bottleneck: all arguments must be positive");
  }
  if (!(log_base > 1.0)) throw ConfigError("check_bottleneck: log base must exceed 1");
  BottleneckReport rep;
  const double d = static_cast<double>(dim);
  rep.fa_dim = d / static_cast<double>(r);
  rep.branch_dim = 2.0 * d / static_cast<double>(r1);
  rep.reduced_dim = rep.branch_dim / static_cast<double>(r2);
  rep.threshold = kBottleneckSlope * std::log(static_cast<double>(len)) / std::log(log_base);
  rep.fa_pass = rep.fa_dim > rep.threshold;
  rep.branch_pass = rep.branch_dim > rep.threshold;
  rep.reduced_pass = rep.reduced_dim > rep.threshold;
  return rep;
}

struct ParamCount {
  std::size_t total = 0;
  std::vector<std::pair<std::string, std::size_t>> by_component;

  void add(std::string name, std::size_t n) {
    total += n;
    by_component.emplace_back(std::move(name), n);
  }
};

inline ParamCount count_params(const FaConfig& cfg) {
  cfg.validate();
  ParamCount c;
  c.add("fc1", Linear<double>::count(cfg.dim, cfg.reduced()));
  c.add("fc2", Linear<double>::count(cfg.reduced(), cfg.dim));
  return c;
}

inline ParamCount count_params(const SfaConfig& cfg) {
  cfg.validate();
  ParamCount c;
  const std::size_t h = cfg.hidden();
  const std::size_t f = cfg.branch_width();
  if (!cfg.flags.disable_ae) c.add("ae_down", Linear<double>::count(cfg.dim, h));
  for (std::size_t n = 0; n < cfg.branches; ++n) {
    c.add("gru." + std::to_string(n), BiGruLayer<double>::count(n == 0 ? cfg.gru_input() : f, h));
  }
  c.add("fc1", Linear<double>::count(f, cfg.reduced()));
  c.add("exciters", cfg.exciter_count() * Linear<double>::count(cfg.reduced(), f));
  if (cfg.flags.disable_selection) c.add("merge", Linear<double>::count(cfg.branches * f, f));
  if (!cfg.flags.disable_ae) c.add("ae_up", Linear<double>::count(f, cfg.dim));
  return c;
}

/// Sum of element counts of every tensor reachable through visit().
template <typename Params>
std::size_t instantiated_count(Params& p) {
  std::size_t n = 0;
  p.visit("", [&](const std::string&, auto& t) { n += t.numel(); });
  return n;
}

}  // namespace sfa
