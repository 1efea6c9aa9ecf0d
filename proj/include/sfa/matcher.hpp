// SPDX-License-Identifier: Apache-2.0
//
// Siamese sentence-pair matcher: shared embedding and contextual BiGRU,
// soft-alignment interaction, one feature block per side (never shared),
// masked mean/max pooling and a two-layer classifier.

#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sfa/blocks.hpp"
#include "sfa/layers.hpp"
#include "sfa/ops.hpp"
#include "sfa/tensor.hpp"

namespace sfa {

enum class BlockKind { kNone, kFa, kSfa };

inline std::string to_string(BlockKind k) {
  switch (k) {
    case BlockKind::kNone: return "none";
    case BlockKind::kFa: return "fa";
    case BlockKind::kSfa: return "sfa";
  }
  return "?";
}

inline BlockKind parse_block_kind(const std::string& s) {
  if (s == "none") return BlockKind::kNone;
  if (s == "fa") return BlockKind::kFa;
  if (s == "sfa") return BlockKind::kSfa;
  throw ConfigError("unknown block kind '" + s + "' (expected none, fa or sfa)");
}

struct MatcherConfig {
  std::size_t vocab = 100;   // V
  std::size_t dim = 32;      // D
  std::size_t hidden = 32;   // classifier hidden width
  std::size_t classes = 2;   // |labels|
  BlockKind block = BlockKind::kNone;
  std::size_t r = 2;         // FA decay
  std::size_t r1 = 8;
  std::size_t r2 = 2;
  std::size_t branches = 2;  // N
  AblationFlags flags;

  FaConfig fa() const { return {dim, r}; }
  SfaConfig sfa() const { return {dim, r1, r2, branches, flags}; }

  void validate() const {
    if (vocab < 1 || dim < 2 || dim % 2 != 0 || hidden < 1 || classes < 2) {
      throw ConfigError("matcher: need V >= 1, even D >= 2, hidden >= 1, classes >= 2");
    }
    if (block == BlockKind::kFa) fa().validate();
    if (block == BlockKind::kSfa) sfa().validate();
  }
};

/// Either nothing, an FA block or an SFA block, selected at construction.
template <typename T>
struct FeatureBlock {
  BlockKind kind = BlockKind::kNone;
  FaParams<T> fa;
  SfaParams<T> sfa;

  static FeatureBlock init(const MatcherConfig& cfg, std::mt19937_64& rng) {
    FeatureBlock b;
    b.kind = cfg.block;
    if (b.kind == BlockKind::kFa) b.fa = FaParams<T>::init(cfg.fa(), rng);
    if (b.kind == BlockKind::kSfa) b.sfa = SfaParams<T>::init(cfg.sfa(), rng);
    return b;
  }

  Tensor<T> operator()(const Tensor<T>& x, const Mask& mask) const {
    switch (kind) {
      case BlockKind::kFa: return fa_forward(x, fa, mask);
      case BlockKind::kSfa: return sfa_forward(x, sfa, mask);
      case BlockKind::kNone: break;
    }
    return x;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    if (kind == BlockKind::kFa) fa.visit(prefix, f);
    if (kind == BlockKind::kSfa) sfa.visit(prefix, f);
  }
};

template <typename T>
struct SiameseModel {
  MatcherConfig config;
  Tensor<T> embedding;   // V x D
  BiGruLayer<T> context; // D -> D (hidden D/2 per direction)
  Linear<T> proj_x;      // 4D -> D
  Linear<T> proj_y;
  FeatureBlock<T> block_x;
  FeatureBlock<T> block_y;
  Linear<T> cls_hidden;  // 8D -> hidden
  Linear<T> cls_out;     // hidden -> classes

  static SiameseModel init(const MatcherConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    SiameseModel m;
    m.config = cfg;
    const std::size_t d = cfg.dim;
    m.embedding = glorot<T>(Shape{cfg.vocab, d}, cfg.vocab, d, rng);
    m.context = BiGruLayer<T>::init(d, d / 2, rng);
    m.proj_x = Linear<T>::init(4 * d, d, rng);
    m.proj_y = Linear<T>::init(4 * d, d, rng);
    m.block_x = FeatureBlock<T>::init(cfg, rng);
    m.block_y = FeatureBlock<T>::init(cfg, rng);
    m.cls_hidden = Linear<T>::init(8 * d, cfg.hidden, rng);
    m.cls_out = Linear<T>::init(cfg.hidden, cfg.classes, rng);
    return m;
  }

  /// Parameters of the matcher without any feature block.
  static std::size_t base_count(const MatcherConfig& cfg) {
    const std::size_t d = cfg.dim;
    return cfg.vocab * d + BiGruLayer<T>::count(d, d / 2) + 2 * Linear<T>::count(4 * d, d) +
           Linear<T>::count(8 * d, cfg.hidden) + Linear<T>::count(cfg.hidden, cfg.classes);
  }

  /// Parameters added by block_x and block_y together.
  static std::size_t block_count(const MatcherConfig& cfg) {
    switch (cfg.block) {
      case BlockKind::kFa: return 2 * count_params(cfg.fa()).total;
      case BlockKind::kSfa: return 2 * count_params(cfg.sfa()).total;
      case BlockKind::kNone: break;
    }
    return 0;
  }

  void visit(const ParamVisitor<T>& f) {
    f("embedding", embedding);
    context.visit("context", f);
    proj_x.visit("proj_x", f);
    proj_y.visit("proj_y", f);
    block_x.visit("block_x", f);
    block_y.visit("block_y", f);
    cls_hidden.visit("classifier.hidden", f);
    cls_out.visit("classifier.out", f);
  }
  // Uniform visit signature so generic helpers (clone_params) apply.
  void visit(const std::string&, const ParamVisitor<T>& f) { visit(f); }
};

struct ExamplePair {
  std::vector<std::size_t> tokens_a;
  std::vector<std::size_t> tokens_b;
  std::size_t label = 0;
};

/// Embedding lookup then the contextual BiGRU; rows at padding are zeroed.
template <typename T>
Tensor<T> embed_encode(const std::vector<std::size_t>& tokens, const Mask& mask,
                       const SiameseModel<T>& m) {
  if (tokens.empty()) throw ShapeError("embed_encode: empty sequence");
  mask.check(tokens.size(), "embed_encode");
  const Tensor<T> emb = gather_rows(m.embedding, tokens);
  return mask_rows(m.context(emb, mask), mask);
}

/// alpha = softmax over keys of q k^T (masked keys get zero weight); returns alpha k.
template <typename T>
Tensor<T> align(const Tensor<T>& q, const Tensor<T>& k, const Mask& key_mask) {
  return matmul(softmax(matmul(q, transpose(k)), 1, key_mask), k);
}

/// tanh(P [a; a~; a - a~; a * a~]) with a~ the soft alignment of a over b.
template <typename T>
Tensor<T> enhance(const Tensor<T>& a, const Tensor<T>& aligned, const Linear<T>& proj) {
  return tanh(proj(concat<T>({a, aligned, sub(a, aligned), mul(a, aligned)}, 1)));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> interaction_attention(const Tensor<T>& a, const Tensor<T>& b,
                                                      const Mask& mask_a, const Mask& mask_b,
                                                      const SiameseModel<T>& m) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1) || a.dim(1) != m.config.dim) {
    throw ShapeError("interaction_attention: " + a.shape().str() + " vs " + b.shape().str());
  }
  mask_a.check(a.dim(0), "interaction_attention(a)");
  mask_b.check(b.dim(0), "interaction_attention(b)");
  Tensor<T> x = mask_rows(enhance(a, align(a, b, mask_b), m.proj_x), mask_a);
  Tensor<T> y = mask_rows(enhance(b, align(b, a, mask_a), m.proj_y), mask_b);
  return {x, y};
}

/// [masked mean; masked max] over positions: L x D -> 1 x 2D.
template <typename T>
Tensor<T> pool(const Tensor<T>& u, const Mask& mask) {
  return concat<T>({mean(u, 0, mask), max(u, 0, mask)}, 1);
}

/// Probability vector over the label set.
template <typename T>
Tensor<T> classify(const Tensor<T>& u, const Tensor<T>& v, const Mask& mask_u, const Mask& mask_v,
                   const SiameseModel<T>& m) {
  const Tensor<T> pu = pool(u, mask_u);
  const Tensor<T> pv = pool(v, mask_v);
  const Tensor<T> features = concat<T>({pu, pv, abs(sub(pu, pv)), mul(pu, pv)}, 1);
  const Tensor<T> logits = m.cls_out(tanh(m.cls_hidden(features)));
  return reshape(softmax(logits, 1), Shape{m.config.classes});
}

template <typename T>
Tensor<T> loss(const Tensor<T>& probs, std::size_t label) {
  return nll(probs, label);
}

template <typename T>
struct MatcherTrace {
  Tensor<T> a, b;  // contextual encodings
  Tensor<T> x, y;  // interaction outputs
  Tensor<T> u, v;  // block outputs
  Tensor<T> probs;
};

struct ForwardOptions {
  bool detach_y = false;  // cut the graph after block_y (gradient isolation)
};

/// Full forward pass on a pair at its true lengths.
template <typename T>
MatcherTrace<T> forward_trace(const ExamplePair& pair, const SiameseModel<T>& m,
                              const ForwardOptions& opt = {}) {
  const Mask ma, mb;
  MatcherTrace<T> t;
  t.a = embed_encode(pair.tokens_a, ma, m);
  t.b = embed_encode(pair.tokens_b, mb, m);
  std::tie(t.x, t.y) = interaction_attention(t.a, t.b, ma, mb, m);
  t.u = m.block_x(t.x, ma);
  t.v = m.block_y(t.y, mb);
  if (opt.detach_y) t.v = t.v.detach();
  t.probs = classify(t.u, t.v, ma, mb, m);
  return t;
}

template <typename T>
Tensor<T> forward(const ExamplePair& pair, const SiameseModel<T>& m) {
  return forward_trace(pair, m).probs;
}

}  // namespace sfa
