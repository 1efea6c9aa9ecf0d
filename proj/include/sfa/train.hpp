// SPDX-License-Identifier: Apache-2.0
//
// Training loop, evaluation, latency measurement, multi-seed comparison,
// ablation runner and similarity heatmap export.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "sfa/blocks.hpp"
#include "sfa/data.hpp"
#include "sfa/gradflow.hpp"
#include "sfa/matcher.hpp"
#include "sfa/optim.hpp"

namespace sfa {

enum class Precision { kF32, kF64 };

inline Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::kF32;
  if (s == "f64") return Precision::kF64;
  throw ConfigError("unknown precision '" + s + "' (expected f32 or f64)");
}
inline std::string to_string(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }

struct BottleneckViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  MatcherConfig model;
  AdamConfig adam;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::size_t patience = 5;
  std::uint64_t init_seed = 1;
  std::uint64_t shuffle_seed = 1;
  Precision precision = Precision::kF64;
  bool bottleneck_override = false;
  double log_base = std::numbers::e;
  std::size_t latency_pairs = 0;  // 0 skips latency measurement
  std::size_t latency_repeats = 5;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0;
  double dev_loss = 0;
  double dev_acc = 0;
};

struct EvalStats {
  double loss = 0;
  double accuracy = 0;
};

struct LatencyStats {
  double median_ms = 0;
  double mean_ms = 0;
  std::size_t pairs = 0;
  std::size_t repeats = 0;
  std::string hardware;
};

struct RunReport {
  std::vector<EpochMetrics> epochs;
  std::size_t best_epoch = 0;  // 0: the initial parameters were never beaten
  EvalStats init_dev;
  EvalStats best_dev;
  EvalStats test;
  bool aborted = false;
  std::string abort_reason;
  std::size_t base_params = 0;
  std::size_t added_params = 0;
  double added_percent = 0;
  BottleneckReport bottleneck;
  bool bottleneck_checked = false;
  LatencyStats latency;
  double wall_seconds = 0;
};

/// Bottleneck policy: an SFA model must satisfy the constraint unless the
/// override is set. Returns the evaluated report either way.
inline BottleneckReport enforce_bottleneck(const TrainConfig& cfg, std::size_t max_len,
                                           bool* checked = nullptr) {
  const MatcherConfig& m = cfg.model;
  const BottleneckReport rep = check_bottleneck(m.dim, m.r, m.r1, m.r2, max_len, cfg.log_base);
  const bool applies = m.block == BlockKind::kSfa;
  if (checked) *checked = applies;
  if (applies && !rep.sfa_pass() && !cfg.bottleneck_override) {
    std::ostringstream os;
    os << "bottleneck constraint violated: 2D/r1=" << rep.branch_dim
       << ", 2D/(r1 r2)=" << rep.reduced_dim << ", threshold=" << rep.threshold
       << " at L=" << max_len << " (set train.bottleneck_override to proceed)";
    throw BottleneckViolation(os.str());
  }
  return rep;
}

inline std::string hardware_descriptor() {
  std::string model = "unknown cpu";
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) model = line.substr(colon + 2);
      break;
    }
  }
  return model + ", " + std::to_string(std::thread::hardware_concurrency()) + " hw threads";
}

template <typename T>
std::size_t predict(const Tensor<T>& probs) {
  const auto& p = probs.data();
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

template <typename T>
EvalStats evaluate(const SiameseModel<T>& model, const std::vector<ExamplePair>& split) {
  NoGradGuard no_grad;
  double total = 0;
  std::size_t correct = 0;
  for (const auto& pair : split) {
    const Tensor<T> probs = forward(pair, model);
    total += static_cast<double>(loss(probs, pair.label).item());
    correct += predict(probs) == pair.label ? 1 : 0;
  }
  const double n = static_cast<double>(split.size());
  return {total / n, static_cast<double>(correct) / n};
}

/// Per-pair forward latency. Each of the first `pairs` examples runs one
/// untimed warmup pass then `repeats` timed passes; the per-pair time is the
/// mean of its timed passes.
template <typename T>
LatencyStats measure_latency(const SiameseModel<T>& model, const std::vector<ExamplePair>& split,
                             std::size_t pairs, std::size_t repeats) {
  NoGradGuard no_grad;
  LatencyStats s;
  s.pairs = std::min(pairs, split.size());
  s.repeats = std::max<std::size_t>(repeats, 1);
  s.hardware = hardware_descriptor();
  std::vector<double> per_pair;
  volatile T sink = T(0);
  for (std::size_t i = 0; i < s.pairs; ++i) {
    sink = sink + forward(split[i], model).data()[0];
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t k = 0; k < s.repeats; ++k) sink = sink + forward(split[i], model).data()[0];
    const std::chrono::duration<double, std::milli> dt = std::chrono::steady_clock::now() - start;
    per_pair.push_back(dt.count() / static_cast<double>(s.repeats));
  }
  if (per_pair.empty()) return s;
  s.mean_ms = std::accumulate(per_pair.begin(), per_pair.end(), 0.0) / static_cast<double>(per_pair.size());
  std::sort(per_pair.begin(), per_pair.end());
  const std::size_t m = per_pair.size() / 2;
  s.median_ms = per_pair.size() % 2 ? per_pair[m] : 0.5 * (per_pair[m - 1] + per_pair[m]);
  return s;
}

template <typename T>
struct TrainResult {
  RunReport report;
  SiameseModel<T> model;
};

/// Optional per-epoch callback, e.g. for streaming metrics.
using EpochCallback = std::function<void(const EpochMetrics&)>;

template <typename T>
TrainResult<T> train_model(const TrainConfig& cfg, const Dataset& data,
                           const EpochCallback& on_epoch = {}) {
  const auto wall_start = std::chrono::steady_clock::now();
  MatcherConfig mcfg = cfg.model;
  mcfg.vocab = data.config.vocab_size;
  if (mcfg.classes != 2) throw ConfigError("train: the synthetic task has exactly 2 labels");
  if (cfg.batch_size == 0) throw ConfigError("train: batch_size must be >= 1");

  TrainResult<T> out{{}, SiameseModel<T>::init(mcfg, cfg.init_seed)};
  RunReport& rep = out.report;
  SiameseModel<T>& model = out.model;
  rep.bottleneck = enforce_bottleneck(cfg, data.config.max_len, &rep.bottleneck_checked);
  rep.base_params = SiameseModel<T>::base_count(mcfg);
  rep.added_params = SiameseModel<T>::block_count(mcfg);
  rep.added_percent = 100.0 * static_cast<double>(rep.added_params) / static_cast<double>(rep.base_params);

  std::vector<Tensor<T>> params;
  model.visit([&](const std::string&, Tensor<T>& t) { params.push_back(t); });
  auto snapshot = [&] {
    std::vector<std::vector<T>> s;
    for (const auto& p : params) s.push_back(p.data());
    return s;
  };
  Adam<T> opt(params, cfg.adam);

  rep.init_dev = evaluate(model, data.dev);
  rep.best_dev = rep.init_dev;
  auto best = snapshot();
  std::size_t since_best = 0;

  std::mt19937_64 shuffle_rng(cfg.shuffle_seed);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs && !rep.aborted; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Tensor<T>> losses;
      for (std::size_t i = start; i < end; ++i) {
        const ExamplePair& pair = data.train[order[i]];
        losses.push_back(loss(forward(pair, model), pair.label));
      }
      const Tensor<T> batch = scale(sum_all(concat(losses, 0)), T(1) / static_cast<T>(end - start));
      const double value = static_cast<double>(batch.item());
      if (!std::isfinite(value)) {
        rep.aborted = true;
        rep.abort_reason = "non-finite training loss in epoch " + std::to_string(epoch);
        break;
      }
      epoch_loss += value * static_cast<double>(end - start);
      backward(batch);
      opt.step();
    }
    if (rep.aborted) break;
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = epoch_loss / static_cast<double>(order.size());
    const EvalStats dev = evaluate(model, data.dev);
    m.dev_loss = dev.loss;
    m.dev_acc = dev.accuracy;
    rep.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
    if (!std::isfinite(dev.loss)) {
      rep.aborted = true;
      rep.abort_reason = "non-finite dev loss in epoch " + std::to_string(epoch);
      break;
    }
    if (dev.loss < rep.best_dev.loss) {
      rep.best_dev = dev;
      rep.best_epoch = epoch;
      best = snapshot();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  for (std::size_t k = 0; k < params.size(); ++k) params[k].mutable_leaf_data() = best[k];
  rep.test = evaluate(model, data.test);
  if (cfg.latency_pairs > 0) {
    rep.latency = measure_latency(model, data.test, cfg.latency_pairs, cfg.latency_repeats);
  }
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  return out;
}

/// Precision dispatch when only the report is needed.
inline RunReport train(const TrainConfig& cfg, const Dataset& data, const EpochCallback& cb = {}) {
  if (cfg.precision == Precision::kF32) return train_model<float>(cfg, data, cb).report;
  return train_model<double>(cfg, data, cb).report;
}

/// metrics.csv body: epoch,train_loss,dev_loss,dev_acc with round-trip precision.
inline std::string metrics_csv(const RunReport& rep) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_loss,dev_loss,dev_acc\n";
  for (const auto& e : rep.epochs) {
    os << e.epoch << ',' << e.train_loss << ',' << e.dev_loss << ',' << e.dev_acc << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Multi-seed runs

/// One seed drives data generation, initialization and shuffling.
struct SeededRun {
  std::uint64_t seed = 0;
  RunReport report;
  double spread = std::numeric_limits<double>::quiet_NaN();  // SFA models only
};

/// Frozen-gate coefficient spread of a trained model's block_x, probed with
/// the interaction output of the first dev pair. NaN for non-SFA models.
template <typename T>
double trained_spread(const SiameseModel<T>& m, const Dataset& data) {
  if (m.config.block != BlockKind::kSfa || data.dev.empty()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  Tensor<T> x;
  {
    NoGradGuard no_grad;
    x = forward_trace(data.dev.front(), m).x;
  }
  return direct_coefficients(m.block_x.sfa, x).spread;
}

inline SeededRun run_seed(const TrainConfig& cfg, const Dataset& data, std::uint64_t seed) {
  SeededRun run{seed, {}, std::numeric_limits<double>::quiet_NaN()};
  if (cfg.precision == Precision::kF32) {
    auto r = train_model<float>(cfg, data);
    run.report = std::move(r.report);
    run.spread = trained_spread(r.model, data);
  } else {
    auto r = train_model<double>(cfg, data);
    run.report = std::move(r.report);
    run.spread = trained_spread(r.model, data);
  }
  return run;
}

inline std::pair<GenConfig, TrainConfig> with_seed(GenConfig g, TrainConfig t, std::uint64_t seed) {
  g.seed = seed;
  t.init_seed = seed;
  t.shuffle_seed = seed;
  return {g, t};
}

struct VariantResult {
  std::string name;
  TrainConfig config;
  std::vector<SeededRun> runs;

  double mean_test_accuracy() const {
    double s = 0;
    for (const auto& r : runs) s += r.report.test.accuracy;
    return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
  }
};

using RunCallback = std::function<void(const std::string& variant, std::uint64_t seed,
                                       const RunReport&)>;

/// Trains every named variant on every seed; the dataset for a seed is shared
/// by all variants.
inline std::vector<VariantResult> run_variants(
    const GenConfig& gen, const std::vector<std::pair<std::string, TrainConfig>>& variants,
    const std::vector<std::uint64_t>& seeds, const RunCallback& cb = {}) {
  std::vector<VariantResult> out;
  for (const auto& [name, cfg] : variants) out.push_back({name, cfg, {}});
  for (std::uint64_t seed : seeds) {
    GenConfig g = gen;
    g.seed = seed;
    const Dataset data = generate_dataset(g);
    for (auto& v : out) {
      const TrainConfig t = with_seed(g, v.config, seed).second;
      SeededRun run = run_seed(t, data, seed);
      if (cb) cb(v.name, seed, run.report);
      v.runs.push_back(std::move(run));
    }
  }
  return out;
}

/// none / fa / sfa built from one base configuration.
inline std::vector<std::pair<std::string, TrainConfig>> block_variants(const TrainConfig& base) {
  std::vector<std::pair<std::string, TrainConfig>> v;
  for (BlockKind k : {BlockKind::kNone, BlockKind::kFa, BlockKind::kSfa}) {
    TrainConfig t = base;
    t.model.block = k;
    v.emplace_back(to_string(k), t);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Ablation

inline const std::vector<std::string>& ablation_components() {
  static const std::vector<std::string> names{"ae", "gmp", "gap", "selection"};
  return names;
}

inline AblationFlags ablate(AblationFlags f, const std::string& component) {
  if (component == "ae") f.disable_ae = true;
  else if (component == "gmp") f.disable_gmp = true;
  else if (component == "gap") f.disable_gap = true;
  else if (component == "selection") f.disable_selection = true;
  else throw ConfigError("unknown ablation component '" + component +
                         "' (expected ae, gmp, gap or selection)");
  return f;
}

/// Control (full SFA) plus one single-component removal per requested name.
inline std::vector<std::pair<std::string, TrainConfig>> ablation_variants(
    const TrainConfig& base, const std::vector<std::string>& components) {
  for (std::size_t i = 0; i < components.size(); ++i) {
    ablate({}, components[i]);
    if (std::find(components.begin(), components.begin() + static_cast<std::ptrdiff_t>(i),
                  components[i]) != components.begin() + static_cast<std::ptrdiff_t>(i)) {
      throw ConfigError("ablation: component '" + components[i] + "' listed twice");
    }
  }
  TrainConfig control = base;
  control.model.block = BlockKind::kSfa;
  control.model.flags = {};
  std::vector<std::pair<std::string, TrainConfig>> v{{"control", control}};
  for (const auto& c : components) {
    TrainConfig t = control;
    t.model.flags = ablate({}, c);
    v.emplace_back("no_" + c, t);
  }
  return v;
}

/// CSV series for loss curves: variant,seed,epoch,train_loss,dev_loss,dev_acc.
inline std::string series_csv(const std::vector<VariantResult>& results) {
  std::ostringstream os;
  os.precision(17);
  os << "variant,seed,epoch,train_loss,dev_loss,dev_acc\n";
  for (const auto& v : results)
    for (const auto& r : v.runs)
      for (const auto& e : r.report.epochs)
        os << v.name << ',' << r.seed << ',' << e.epoch << ',' << e.train_loss << ','
           << e.dev_loss << ',' << e.dev_acc << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Heatmap

struct Heatmap {
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<double> values;  // rows x cols

  std::size_t rows() const { return row_labels.size(); }
  std::size_t cols() const { return col_labels.size(); }
  double at(std::size_t i, std::size_t j) const { return values.at(i * cols() + j); }
};

/// M_ij = (1/D) sum_d u_id v_jd over unmasked rows of u and v.
template <typename T>
std::vector<double> feature_mean_similarity(const Tensor<T>& u, const Tensor<T>& v,
                                            const Mask& mask_u = {}, const Mask& mask_v = {},
                                            std::size_t* rows = nullptr, std::size_t* cols = nullptr) {
  if (u.rank() != 2 || v.rank() != 2 || u.dim(1) != v.dim(1)) {
    throw ShapeError("heatmap: " + u.shape().str() + " vs " + v.shape().str());
  }
  mask_u.check(u.dim(0), "heatmap(u)");
  mask_v.check(v.dim(0), "heatmap(v)");
  const std::size_t d = u.dim(1);
  std::vector<double> out;
  std::size_t r = 0;
  for (std::size_t i = 0; i < u.dim(0); ++i) {
    if (!mask_u.valid(i)) continue;
    ++r;
    for (std::size_t j = 0; j < v.dim(0); ++j) {
      if (!mask_v.valid(j)) continue;
      double acc = 0;
      for (std::size_t k = 0; k < d; ++k)
        acc += static_cast<double>(u.at(i, k)) * static_cast<double>(v.at(j, k));
      out.push_back(acc / static_cast<double>(d));
    }
  }
  if (rows) *rows = r;
  if (cols) *cols = r ? out.size() / r : 0;
  return out;
}

inline std::vector<std::size_t> strip_padding(std::vector<std::size_t> tokens) {
  while (!tokens.empty() && tokens.back() == kPadId) tokens.pop_back();
  if (tokens.empty()) throw ShapeError("heatmap: sentence consists of padding only");
  return tokens;
}

/// Similarity of the post-block representations u (sentence a) and v
/// (sentence b), labelled with token names. Trailing padding is dropped.
template <typename T>
Heatmap export_heatmap(const SiameseModel<T>& model, const ExamplePair& pair, const GenConfig& names) {
  NoGradGuard no_grad;
  const ExamplePair clean{strip_padding(pair.tokens_a), strip_padding(pair.tokens_b), pair.label};
  const auto trace = forward_trace(clean, model);
  Heatmap h;
  for (std::size_t t : clean.tokens_a) h.row_labels.push_back(token_name(t, names));
  for (std::size_t t : clean.tokens_b) h.col_labels.push_back(token_name(t, names));
  h.values = feature_mean_similarity(trace.u, trace.v);
  return h;
}

inline std::string heatmap_csv(const Heatmap& h) {
  std::ostringstream os;
  os.precision(17);
  os << "token";
  for (const auto& c : h.col_labels) os << ',' << c;
  os << '\n';
  for (std::size_t i = 0; i < h.rows(); ++i) {
    os << h.row_labels[i];
    for (std::size_t j = 0; j < h.cols(); ++j) os << ',' << h.at(i, j);
    os << '\n';
  }
  return os.str();
}

}  // namespace sfa
