// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. Every function returns a new tensor and,
// when an operand requires a gradient, registers the matching backward rule.

#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "sfa/tensor.hpp"

namespace sfa {

namespace detail {

struct Broadcast {
  Shape out;
  std::array<std::size_t, 3> dims{1, 1, 1};
  std::array<std::size_t, 3> stride_a{0, 0, 0};
  std::array<std::size_t, 3> stride_b{0, 0, 0};
};

inline std::array<std::size_t, 3> padded(const Shape& s) {
  std::array<std::size_t, 3> d{1, 1, 1};
  const std::size_t off = 3 - s.rank();
  for (std::size_t i = 0; i < s.rank(); ++i) d[off + i] = s[i];
  return d;
}

inline std::array<std::size_t, 3> broadcast_strides(const std::array<std::size_t, 3>& d,
                                                    const std::array<std::size_t, 3>& out) {
  std::array<std::size_t, 3> st{};
  std::size_t running = 1;
  for (int i = 2; i >= 0; --i) {
    st[i] = (d[i] == 1 && out[i] != 1) ? 0 : running;
    running *= d[i];
  }
  return st;
}

inline Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  const auto da = padded(a);
  const auto db = padded(b);
  for (std::size_t i = 0; i < 3; ++i) {
    if (da[i] != db[i] && da[i] != 1 && db[i] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + a.str() + " with " + b.str());
    }
    bc.dims[i] = std::max(da[i], db[i]);
  }
  const std::size_t rank = std::max(a.rank(), b.rank());
  std::vector<std::size_t> ext(bc.dims.begin() + static_cast<std::ptrdiff_t>(3 - rank),
                               bc.dims.end());
  bc.out = Shape::of(ext);
  bc.stride_a = broadcast_strides(da, bc.dims);
  bc.stride_b = broadcast_strides(db, bc.dims);
  return bc;
}

/// Binary op with per-coordinate partials. `fwd(a, b)`, `da(a, b)`, `db(a, b)`.
template <typename T, typename Fwd, typename Da, typename Db>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, Da da,
                 Db db) {
  if (a.shape() == b.shape()) {
    const auto& x = a.data();
    const auto& y = b.data();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i], y[i]);
    return make_result<T>(a.shape(), std::move(out), {a.node(), b.node()},
                          [da, db](Node<T>& n) {
                            auto& pa = *n.parents[0];
                            auto& pb = *n.parents[1];
                            const auto& g = n.grad;
                            if (pa.requires_grad) {
                              auto& ga = pa.grad_buffer();
                              for (std::size_t i = 0; i < g.size(); ++i)
                                ga[i] += g[i] * da(pa.data[i], pb.data[i]);
                            }
                            if (pb.requires_grad) {
                              auto& gb = pb.grad_buffer();
                              for (std::size_t i = 0; i < g.size(); ++i)
                                gb[i] += g[i] * db(pa.data[i], pb.data[i]);
                            }
                          });
  }
  const Broadcast bc = broadcast(a.shape(), b.shape(), name);
  std::vector<T> out(bc.out.numel());
  {
    const auto& x = a.data();
    const auto& y = b.data();
    std::size_t o = 0;
    for (std::size_t i = 0; i < bc.dims[0]; ++i)
      for (std::size_t j = 0; j < bc.dims[1]; ++j)
        for (std::size_t k = 0; k < bc.dims[2]; ++k, ++o) {
          const std::size_t ia = i * bc.stride_a[0] + j * bc.stride_a[1] + k * bc.stride_a[2];
          const std::size_t ib = i * bc.stride_b[0] + j * bc.stride_b[1] + k * bc.stride_b[2];
          out[o] = fwd(x[ia], y[ib]);
        }
  }
  return make_result<T>(bc.out, std::move(out), {a.node(), b.node()}, [bc, da, db](Node<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    const auto& g = n.grad;
    T* ga = pa.requires_grad ? pa.grad_buffer().data() : nullptr;
    T* gb = pb.requires_grad ? pb.grad_buffer().data() : nullptr;
    std::size_t o = 0;
    for (std::size_t i = 0; i < bc.dims[0]; ++i)
      for (std::size_t j = 0; j < bc.dims[1]; ++j)
        for (std::size_t k = 0; k < bc.dims[2]; ++k, ++o) {
          const std::size_t ia = i * bc.stride_a[0] + j * bc.stride_a[1] + k * bc.stride_a[2];
          const std::size_t ib = i * bc.stride_b[0] + j * bc.stride_b[1] + k * bc.stride_b[2];
          if (ga) ga[ia] += g[o] * da(pa.data[ia], pb.data[ib]);
          if (gb) gb[ib] += g[o] * db(pa.data[ia], pb.data[ib]);
        }
  });
}

/// Unary op whose derivative is expressed through input and output values.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  const auto& v = x.data();
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = fwd(v[i]);
  return make_result<T>(x.shape(), std::move(out), {x.node()}, [deriv](Node<T>& n) {
    auto& p = *n.parents[0];
    auto& gp = p.grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      gp[i] += n.grad[i] * deriv(p.data[i], n.data[i]);
  });
}

inline void check_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.rank()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     s.str());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return detail::unary(x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

/// |x| with derivative sign(x) (0 at 0).
template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Linear algebra and layout

/// (m x k) . (k x n) -> (m x n).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + a.shape().str() + " and " +
                     b.shape().str());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      const T* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return detail::make_result<T>(Shape{m, n}, std::move(out), {a.node(), b.node()},
                                [m, k, n](detail::Node<T>& node) {
                                  auto& A = *node.parents[0];
                                  auto& B = *node.parents[1];
                                  const T* g = node.grad.data();
                                  if (A.requires_grad) {
                                    // dA = g . B^T
                                    T* ga = A.grad_buffer().data();
                                    for (std::size_t i = 0; i < m; ++i)
                                      for (std::size_t p = 0; p < k; ++p) {
                                        const T* brow = B.data.data() + p * n;
                                        const T* grow = g + i * n;
                                        T acc = T(0);
                                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                                        ga[i * k + p] += acc;
                                      }
                                  }
                                  if (B.requires_grad) {
                                    // dB = A^T . g
                                    T* gb = B.grad_buffer().data();
                                    for (std::size_t i = 0; i < m; ++i)
                                      for (std::size_t p = 0; p < k; ++p) {
                                        const T av = A.data[i * k + p];
                                        const T* grow = g + i * n;
                                        T* gbrow = gb + p * n;
                                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                                      }
                                  }
                                });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expects a matrix, got " + x.shape().str());
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.data()[i * c + j];
  return detail::make_result<T>(Shape{c, r}, std::move(out), {x.node()},
                                [r, c](detail::Node<T>& n) {
                                  auto& gp = n.parents[0]->grad_buffer();
                                  for (std::size_t i = 0; i < r; ++i)
                                    for (std::size_t j = 0; j < c; ++j)
                                      gp[i * c + j] += n.grad[j * r + i];
                                });
}

/// Same data under a new shape of equal element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (shape.numel() != x.numel()) {
    throw ShapeError("reshape: " + x.shape().str() + " -> " + shape.str());
  }
  return detail::make_result<T>(shape, x.data(), {x.node()}, [](detail::Node<T>& n) {
    auto& gp = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) gp[i] += n.grad[i];
  });
}

/// Concatenation along an existing axis.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  detail::check_axis(first, axis, "concat");
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.rank()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < first.rank(); ++i) {
      if (i != axis && p.dim(i) != first[i]) {
        throw ShapeError("concat: " + p.shape().str() + " vs " + first.str());
      }
    }
    total += p.dim(axis);
  }
  const Shape out_shape = first.with(axis, total);
  const std::size_t outer = first.outer(axis);
  const std::size_t inner = first.inner(axis);
  std::vector<T> out(out_shape.numel());
  std::vector<std::size_t> offsets;
  std::vector<std::shared_ptr<detail::Node<T>>> parents;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(o * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(o * total * inner + offset));
    }
    offsets.push_back(offset);
    offset += w;
    parents.push_back(p.node());
  }
  return detail::make_result<T>(out_shape, std::move(out), std::move(parents),
                                [offsets, outer, inner, total](detail::Node<T>& n) {
                                  for (std::size_t k = 0; k < n.parents.size(); ++k) {
                                    auto& p = *n.parents[k];
                                    if (!p.requires_grad) continue;
                                    auto& gp = p.grad_buffer();
                                    const std::size_t w = gp.size() / outer;
                                    for (std::size_t o = 0; o < outer; ++o)
                                      for (std::size_t i = 0; i < w; ++i)
                                        gp[o * w + i] += n.grad[o * total * inner + offsets[k] + i];
                                  }
                                });
}

/// Stacks equally shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  const Shape& s = parts[0].shape();
  if (s.rank() >= kMaxRank) throw ShapeError("stack: result would exceed rank 3");
  std::vector<std::size_t> ext{parts.size()};
  for (std::size_t e : s.extents()) ext.push_back(e);
  std::vector<T> out;
  out.reserve(parts.size() * s.numel());
  std::vector<std::shared_ptr<detail::Node<T>>> parents;
  for (const auto& p : parts) {
    if (!(p.shape() == s)) throw ShapeError("stack: " + p.shape().str() + " vs " + s.str());
    out.insert(out.end(), p.data().begin(), p.data().end());
    parents.push_back(p.node());
  }
  const std::size_t w = s.numel();
  return detail::make_result<T>(Shape::of(ext), std::move(out), std::move(parents),
                                [w](detail::Node<T>& n) {
                                  for (std::size_t k = 0; k < n.parents.size(); ++k) {
                                    auto& p = *n.parents[k];
                                    if (!p.requires_grad) continue;
                                    auto& gp = p.grad_buffer();
                                    for (std::size_t i = 0; i < w; ++i) gp[i] += n.grad[k * w + i];
                                  }
                                });
}

/// Contiguous range [start, start+length) along `axis`.
template <typename T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  detail::check_axis(x.shape(), axis, "narrow");
  const std::size_t extent = x.dim(axis);
  if (length == 0 || start + length > extent) throw ShapeError("narrow: range out of bounds");
  const std::size_t outer = x.shape().outer(axis);
  const std::size_t inner = x.shape().inner(axis);
  const Shape out_shape = x.shape().with(axis, length);
  std::vector<T> out(out_shape.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((o * extent + start) * inner),
                length * inner, out.begin() + static_cast<std::ptrdiff_t>(o * length * inner));
  }
  return detail::make_result<T>(out_shape, std::move(out), {x.node()},
                                [outer, inner, extent, start, length](detail::Node<T>& n) {
                                  auto& gp = n.parents[0]->grad_buffer();
                                  for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t i = 0; i < length * inner; ++i)
                                      gp[(o * extent + start) * inner + i] +=
                                          n.grad[o * length * inner + i];
                                });
}

/// Row lookup: ids index the leading axis of a (V x D) table.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<std::size_t>& ids) {
  if (table.rank() != 2) throw ShapeError("gather_rows: table must be a matrix");
  if (ids.empty()) throw ShapeError("gather_rows: empty id list");
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v) {
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[i]) + " >= " +
                              std::to_string(v));
    }
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return detail::make_result<T>(Shape{ids.size(), d}, std::move(out), {table.node()},
                                [ids, d](detail::Node<T>& n) {
                                  auto& gp = n.parents[0]->grad_buffer();
                                  for (std::size_t i = 0; i < ids.size(); ++i)
                                    for (std::size_t j = 0; j < d; ++j)
                                      gp[ids[i] * d + j] += n.grad[i * d + j];
                                });
}

/// Zeroes the rows (leading-axis slices) marked invalid.
template <typename T>
Tensor<T> mask_rows(const Tensor<T>& x, const Mask& mask) {
  if (mask.empty()) return x;
  if (mask.size() != x.dim(0)) throw ShapeError("mask_rows: mask length mismatch");
  const std::size_t w = x.numel() / x.dim(0);
  std::vector<T> out = x.data();
  for (std::size_t r = 0; r < x.dim(0); ++r)
    if (!mask.valid(r)) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(r * w), w, T(0));
  return detail::make_result<T>(x.shape(), std::move(out), {x.node()},
                                [mask, w](detail::Node<T>& n) {
                                  auto& gp = n.parents[0]->grad_buffer();
                                  for (std::size_t i = 0; i < n.grad.size(); ++i)
                                    if (mask.valid(i / w)) gp[i] += n.grad[i];
                                });
}

// ---------------------------------------------------------------------------
// Reductions

enum class Reduction { kMean, kMax, kSum };

/// Reduces `axis` to extent 1 (rank is kept). Masked positions along `axis`
/// are never read; max routes its gradient to the lowest attaining index.
template <typename T>
Tensor<T> reduce(Reduction kind, const Tensor<T>& x, std::size_t axis, const Mask& mask = {}) {
  detail::check_axis(x.shape(), axis, "reduce");
  const std::size_t n = x.dim(axis);
  mask.check(n, "reduce");
  const std::size_t outer = x.shape().outer(axis);
  const std::size_t inner = x.shape().inner(axis);
  const std::size_t count = mask.count(n);
  const Shape out_shape = x.shape().collapsed(axis);
  std::vector<T> out(out_shape.numel());
  std::vector<std::size_t> argmax;
  if (kind == Reduction::kMax) argmax.resize(out.size());
  const auto& v = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t oi = o * inner + i;
      if (kind == Reduction::kMax) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t where = n;
        for (std::size_t k = 0; k < n; ++k) {
          if (!mask.valid(k)) continue;
          const T val = v[(o * n + k) * inner + i];
          if (where == n || val > best) {
            best = val;
            where = k;
          }
        }
        out[oi] = best;
        argmax[oi] = where;
      } else {
        T acc = T(0);
        for (std::size_t k = 0; k < n; ++k)
          if (mask.valid(k)) acc += v[(o * n + k) * inner + i];
        out[oi] = kind == Reduction::kMean ? acc / static_cast<T>(count) : acc;
      }
    }
  return detail::make_result<T>(
      out_shape, std::move(out), {x.node()},
      [kind, mask, argmax, n, outer, inner, count](detail::Node<T>& node) {
        auto& gp = node.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < inner; ++i) {
            const T g = node.grad[o * inner + i];
            if (kind == Reduction::kMax) {
              gp[(o * n + argmax[o * inner + i]) * inner + i] += g;
              continue;
            }
            const T share = kind == Reduction::kMean ? g / static_cast<T>(count) : g;
            for (std::size_t k = 0; k < n; ++k)
              if (mask.valid(k)) gp[(o * n + k) * inner + i] += share;
          }
      });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis, const Mask& mask = {}) {
  return reduce(Reduction::kMean, x, axis, mask);
}
template <typename T>
Tensor<T> max(const Tensor<T>& x, std::size_t axis, const Mask& mask = {}) {
  return reduce(Reduction::kMax, x, axis, mask);
}
template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis, const Mask& mask = {}) {
  return reduce(Reduction::kSum, x, axis, mask);
}

/// Sum of every element as a 1-element tensor.
template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  return detail::make_result<T>(Shape{1}, {acc}, {x.node()}, [](detail::Node<T>& n) {
    auto& gp = n.parents[0]->grad_buffer();
    for (T& g : gp) g += n.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Normalization and loss

/// Softmax along `axis` with max subtraction. Masked positions get exactly
/// zero probability and never influence the result.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis, const Mask& mask = {}) {
  detail::check_axis(x.shape(), axis, "softmax");
  const std::size_t n = x.dim(axis);
  mask.check(n, "softmax");
  const std::size_t outer = x.shape().outer(axis);
  const std::size_t inner = x.shape().inner(axis);
  const auto& v = x.data();
  std::vector<T> out(v.size(), T(0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      T hi = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < n; ++k)
        if (mask.valid(k)) hi = std::max(hi, v[(o * n + k) * inner + i]);
      T z = T(0);
      for (std::size_t k = 0; k < n; ++k) {
        if (!mask.valid(k)) continue;
        const std::size_t idx = (o * n + k) * inner + i;
        out[idx] = std::exp(v[idx] - hi);
        z += out[idx];
      }
      for (std::size_t k = 0; k < n; ++k) out[(o * n + k) * inner + i] /= z;
    }
  return detail::make_result<T>(x.shape(), std::move(out), {x.node()},
                                [n, outer, inner](detail::Node<T>& node) {
                                  auto& gp = node.parents[0]->grad_buffer();
                                  const auto& y = node.data;
                                  const auto& g = node.grad;
                                  for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t i = 0; i < inner; ++i) {
                                      T dot = T(0);
                                      for (std::size_t k = 0; k < n; ++k) {
                                        const std::size_t idx = (o * n + k) * inner + i;
                                        dot += g[idx] * y[idx];
                                      }
                                      for (std::size_t k = 0; k < n; ++k) {
                                        const std::size_t idx = (o * n + k) * inner + i;
                                        gp[idx] += y[idx] * (g[idx] - dot);
                                      }
                                    }
                                });
}

/// -log(probs[label]) for a probability vector.
template <typename T>
Tensor<T> nll(const Tensor<T>& probs, std::size_t label) {
  if (label >= probs.numel()) throw std::out_of_range("nll: label outside the label set");
  const T p = std::max(probs.data()[label], std::numeric_limits<T>::min());
  return detail::make_result<T>(Shape{1}, {-std::log(p)}, {probs.node()},
                                [label, p](detail::Node<T>& n) {
                                  n.parents[0]->grad_buffer()[label] -= n.grad[0] / p;
                                });
}

}  // namespace sfa
