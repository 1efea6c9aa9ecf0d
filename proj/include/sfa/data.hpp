// SPDX-License-Identifier: Apache-2.0
//
// Synthetic sentence-pair task. Sentence a carries a key n-gram of synonym
// classes inside filler words. A relevant b restates the same class sequence
// (each word possibly swapped for its synonym); an irrelevant b carries a
// distractor: one key class replaced, the key classes reordered (off by
// default), or an unrelated class n-gram. Synonym swaps hide matches from
// exact-word features and reordered keys hide them from any bag of words,
// which caps what a linear probe can reach.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sfa/blocks.hpp"
#include "sfa/matcher.hpp"

namespace sfa {

inline constexpr std::size_t kPadId = 0;

struct GenConfig {
  std::size_t vocab_size = 100;
  std::size_t max_len = 12;
  std::size_t min_len = 6;
  std::size_t n_train = 2000;
  std::size_t n_dev = 500;
  std::size_t n_test = 500;
  std::size_t ngram = 3;
  std::size_t synonym_classes = 10;
  std::size_t synonyms_per_class = 2;
  double synonym_rate = 0.5;     // per key word in b: use a different synonym
  double distractor_rate = 0.5;  // share of negatives built from the key itself
  double reorder_share = 0.0;    // of those, share reordering the key (else one class replaced)
  std::uint64_t seed = 1;

  std::size_t class_words() const { return synonym_classes * synonyms_per_class; }
  std::size_t first_filler() const { return 1 + class_words(); }

  void validate() const {
    if (synonyms_per_class < 2) throw ConfigError("data: need at least 2 synonyms per class");
    if (ngram < 1 || synonym_classes < ngram + 1) {
      throw ConfigError("data: need more synonym classes than the n-gram length");
    }
    if (vocab_size < 2 * synonym_classes || vocab_size <= first_filler()) {
      throw ConfigError("data: vocab_size " + std::to_string(vocab_size) +
                        " too small for the synonym classes plus at least one filler word");
    }
    if (min_len < ngram || max_len < min_len) {
      throw ConfigError("data: need ngram <= min_len <= max_len");
    }
    if (n_train < 2 || n_dev < 2 || n_test < 2) throw ConfigError("data: each split needs >= 2 pairs");
    if (synonym_rate < 0 || synonym_rate > 1 || distractor_rate < 0 || distractor_rate > 1 ||
        reorder_share < 0 || reorder_share > 1) {
      throw ConfigError("data: rates must lie in [0, 1]");
    }
  }
};

enum : std::size_t { kIrrelevant = 0, kRelevant = 1 };

struct Dataset {
  GenConfig config;
  std::vector<ExamplePair> train, dev, test;
};

/// Printable token names: "<pad>", class words "s<class><letter>", fillers "w<id>".
inline std::string token_name(std::size_t id, const GenConfig& cfg) {
  if (id == kPadId) return "<pad>";
  if (id < cfg.first_filler()) {
    const std::size_t k = id - 1;
    std::string s = "s" + std::to_string(k / cfg.synonyms_per_class);
    s += static_cast<char>('a' + static_cast<int>(k % cfg.synonyms_per_class));
    return s;
  }
  return "w" + std::to_string(id);
}

namespace detail {

class PairSampler {
 public:
  PairSampler(const GenConfig& cfg, std::mt19937_64& rng) : cfg_(cfg), rng_(rng) {}

  ExamplePair sample(std::size_t label) {
    const std::vector<std::size_t> key = distinct_classes(cfg_.ngram);
    std::vector<std::size_t> a_words(key.size());
    for (std::size_t i = 0; i < key.size(); ++i) a_words[i] = word(key[i], pick(cfg_.synonyms_per_class));

    std::vector<std::size_t> b_words;
    if (label == kRelevant) {
      b_words = restate(key, a_words);
    } else if (uniform() < cfg_.distractor_rate) {
      std::vector<std::size_t> classes = key;
      if (key.size() > 1 && uniform() < cfg_.reorder_share) {
        while (classes == key) std::shuffle(classes.begin(), classes.end(), rng_);
      } else {
        std::size_t replacement;
        do replacement = pick(cfg_.synonym_classes);
        while (std::find(key.begin(), key.end(), replacement) != key.end());
        classes[pick(classes.size())] = replacement;
      }
      b_words = restate(classes, a_words, &key);
    } else {
      std::vector<std::size_t> classes;
      do classes = distinct_classes(cfg_.ngram);
      while (classes == key);
      for (std::size_t c : classes) b_words.push_back(word(c, pick(cfg_.synonyms_per_class)));
    }
    return {plant(a_words), plant(b_words), label};
  }

 private:
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  std::size_t pick(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }
  std::size_t word(std::size_t cls, std::size_t syn) const {
    return 1 + cls * cfg_.synonyms_per_class + syn;
  }

  std::vector<std::size_t> distinct_classes(std::size_t n) {
    std::vector<std::size_t> all(cfg_.synonym_classes);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    for (std::size_t i = 0; i < n; ++i) std::swap(all[i], all[i + pick(all.size() - i)]);
    all.resize(n);
    return all;
  }

  // Renders `classes` for sentence b. A class that also occurs in the key
  // reuses a's word for it unless swapped for another synonym.
  std::vector<std::size_t> restate(const std::vector<std::size_t>& classes,
                                   const std::vector<std::size_t>& a_words,
                                   const std::vector<std::size_t>* key = nullptr) {
    const std::vector<std::size_t>& key_classes = key ? *key : classes;
    std::vector<std::size_t> out;
    for (std::size_t c : classes) {
      const auto it = std::find(key_classes.begin(), key_classes.end(), c);
      std::size_t syn = pick(cfg_.synonyms_per_class);
      if (it != key_classes.end()) {
        const std::size_t a_syn =
            (a_words[static_cast<std::size_t>(it - key_classes.begin())] - 1) % cfg_.synonyms_per_class;
        syn = a_syn;
        if (uniform() < cfg_.synonym_rate) {
          syn = (a_syn + 1 + pick(cfg_.synonyms_per_class - 1)) % cfg_.synonyms_per_class;
        }
      }
      out.push_back(word(c, syn));
    }
    return out;
  }

  std::vector<std::size_t> plant(const std::vector<std::size_t>& gram) {
    const std::size_t len = cfg_.min_len + pick(cfg_.max_len - cfg_.min_len + 1);
    const std::size_t fillers = cfg_.vocab_size - cfg_.first_filler();
    std::vector<std::size_t> s(len);
    for (auto& t : s) t = cfg_.first_filler() + pick(fillers);
    const std::size_t at = pick(len - gram.size() + 1);
    std::copy(gram.begin(), gram.end(), s.begin() + static_cast<std::ptrdiff_t>(at));
    return s;
  }

  const GenConfig& cfg_;
  std::mt19937_64& rng_;
};

}  // namespace detail

/// Deterministic in cfg.seed. Labels alternate within each split (balance
/// within one pair); no (a, b) pair appears twice across all splits.
inline Dataset generate_dataset(const GenConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  detail::PairSampler sampler(cfg, rng);
  std::set<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> seen;
  auto fill_split = [&](std::size_t n) {
    std::vector<ExamplePair> out;
    out.reserve(n);
    std::size_t attempts = 0;
    while (out.size() < n) {
      if (++attempts > 100 * n) throw ConfigError("data: cannot draw enough distinct pairs");
      ExamplePair p = sampler.sample(out.size() % 2 == 0 ? kRelevant : kIrrelevant);
      if (seen.insert({p.tokens_a, p.tokens_b}).second) out.push_back(std::move(p));
    }
    return out;
  };
  Dataset d;
  d.config = cfg;
  d.train = fill_split(cfg.n_train);
  d.dev = fill_split(cfg.n_dev);
  d.test = fill_split(cfg.n_test);
  return d;
}

// ---------------------------------------------------------------------------
// Linear bag-of-words probe

struct ProbeResult {
  double train_accuracy = 0;
  double dev_accuracy = 0;
};

/// Logistic regression on [present(a); present(b); present(a) * present(b)]
/// over the vocabulary, trained by full-batch gradient descent.
inline ProbeResult bow_probe(const Dataset& data, std::size_t epochs = 300, double lr = 0.5,
                             double l2 = 1e-4) {
  const std::size_t v = data.config.vocab_size;
  auto features = [v](const ExamplePair& p) {
    std::vector<double> f(3 * v, 0.0);
    for (std::size_t t : p.tokens_a) f[t] = 1.0;
    for (std::size_t t : p.tokens_b) f[v + t] = 1.0;
    for (std::size_t i = 0; i < v; ++i) f[2 * v + i] = f[i] * f[v + i];
    return f;
  };
  auto encode = [&](const std::vector<ExamplePair>& split) {
    std::vector<std::vector<double>> x;
    for (const auto& p : split) x.push_back(features(p));
    return x;
  };
  const auto xtr = encode(data.train);
  const auto xdev = encode(data.dev);
  std::vector<double> w(3 * v, 0.0);
  double b = 0.0;
  auto logit = [&](const std::vector<double>& f) {
    double z = b;
    for (std::size_t i = 0; i < f.size(); ++i) z += w[i] * f[i];
    return z;
  };
  for (std::size_t e = 0; e < epochs; ++e) {
    std::vector<double> gw(w.size(), 0.0);
    double gb = 0.0;
    for (std::size_t n = 0; n < xtr.size(); ++n) {
      const double p = 1.0 / (1.0 + std::exp(-logit(xtr[n])));
      const double g = p - (data.train[n].label == kRelevant ? 1.0 : 0.0);
      for (std::size_t i = 0; i < w.size(); ++i) gw[i] += g * xtr[n][i];
      gb += g;
    }
    const double inv = 1.0 / static_cast<double>(xtr.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (gw[i] * inv + l2 * w[i]);
    b -= lr * gb * inv;
  }
  auto accuracy = [&](const std::vector<std::vector<double>>& x, const std::vector<ExamplePair>& split) {
    std::size_t ok = 0;
    for (std::size_t n = 0; n < x.size(); ++n)
      ok += ((logit(x[n]) > 0) == (split[n].label == kRelevant)) ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(x.size());
  };
  return {accuracy(xtr, data.train), accuracy(xdev, data.dev)};
}

}  // namespace sfa
