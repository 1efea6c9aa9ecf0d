// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "sfa/checkpoint.hpp"
#include "sfa/config.hpp"
#include "sfa/data.hpp"
#include "sfa/train.hpp"

namespace sfa {
namespace {

GenConfig tiny_data(std::uint64_t seed = 1) {
  GenConfig g;
  g.n_train = 50;
  g.n_dev = 20;
  g.n_test = 20;
  g.seed = seed;
  return g;
}

TrainConfig tiny_train(BlockKind block = BlockKind::kSfa) {
  TrainConfig t;
  t.model.block = block;
  t.epochs = 1;
  t.bottleneck_override = true;
  return t;
}

std::vector<std::vector<double>> all_params(SiameseModel<double> m) {
  std::vector<std::vector<double>> out;
  m.visit([&](const std::string&, Tensor<double>& t) { out.push_back(t.data()); });
  return out;
}

// --- data -------------------------------------------------------------------

TEST(Data, SameSeedGivesIdenticalDatasets) {
  const Dataset a = generate_dataset(tiny_data(3));
  const Dataset b = generate_dataset(tiny_data(3));
  auto same = [](const std::vector<ExamplePair>& x, const std::vector<ExamplePair>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i].tokens_a != y[i].tokens_a || x[i].tokens_b != y[i].tokens_b || x[i].label != y[i].label)
        return false;
    return true;
  };
  EXPECT_TRUE(same(a.train, b.train));
  EXPECT_TRUE(same(a.dev, b.dev));
  EXPECT_TRUE(same(a.test, b.test));
  EXPECT_FALSE(same(a.train, generate_dataset(tiny_data(4)).train));
}

TEST(Data, LabelsBalancedAndSplitsDisjoint) {
  GenConfig g;
  g.n_train = 301;
  const Dataset d = generate_dataset(g);
  std::set<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> seen;
  for (const auto* split : {&d.train, &d.dev, &d.test}) {
    long balance = 0;
    for (const auto& p : *split) {
      balance += p.label == kRelevant ? 1 : -1;
      EXPECT_TRUE(seen.insert({p.tokens_a, p.tokens_b}).second);
      EXPECT_GE(p.tokens_a.size(), g.min_len);
      EXPECT_LE(p.tokens_a.size(), g.max_len);
      for (std::size_t t : p.tokens_a) EXPECT_LT(t, g.vocab_size);
      for (std::size_t t : p.tokens_b) EXPECT_NE(t, kPadId);
    }
    EXPECT_LE(std::abs(balance), 1);
  }
}

TEST(Data, PositivesRestateTheKeyClasses) {
  const GenConfig g;
  const Dataset d = generate_dataset(g);
  auto classes = [&](const std::vector<std::size_t>& s) {
    std::vector<std::size_t> c;
    for (std::size_t t : s)
      if (t != kPadId && t < g.first_filler()) c.push_back((t - 1) / g.synonyms_per_class);
    return c;
  };
  for (const auto& p : d.train) {
    const auto ca = classes(p.tokens_a);
    const auto cb = classes(p.tokens_b);
    ASSERT_EQ(ca.size(), g.ngram);
    ASSERT_EQ(cb.size(), g.ngram);
    EXPECT_EQ(ca == cb, p.label == kRelevant);
  }
}

TEST(Data, InfeasibleConfigsRejected) {
  GenConfig g;
  g.vocab_size = 15;
  EXPECT_THROW(generate_dataset(g), ConfigError);
  g = {};
  g.max_len = 2;
  g.min_len = 2;
  EXPECT_THROW(generate_dataset(g), ConfigError);
  g = {};
  g.synonym_rate = 1.5;
  EXPECT_THROW(generate_dataset(g), ConfigError);
  g = {};
  g.vocab_size = 21;  // pad + 20 class words leaves no filler word
  EXPECT_THROW(generate_dataset(g), ConfigError);
}

TEST(Data, TokenNames) {
  const GenConfig g;
  EXPECT_EQ(token_name(0, g), "<pad>");
  EXPECT_EQ(token_name(1, g), "s0a");
  EXPECT_EQ(token_name(4, g), "s1b");
  EXPECT_EQ(token_name(21, g), "w21");
}

TEST(Data, BagOfWordsProbeStaysBelowCap) {
  const Dataset d = generate_dataset(GenConfig{});
  const ProbeResult r = bow_probe(d);
  EXPECT_GT(r.train_accuracy, r.dev_accuracy);
  EXPECT_LT(r.dev_accuracy, 0.85);
}

// --- training ---------------------------------------------------------------

TEST(Train, ZeroStepSizeLeavesParametersUntouched) {
  const Dataset d = generate_dataset(tiny_data());
  TrainConfig t = tiny_train();
  t.adam.lr = 0.0;
  t.epochs = 2;
  const auto init = SiameseModel<double>::init([&] {
    MatcherConfig m = t.model;
    m.vocab = d.config.vocab_size;
    return m;
  }(), t.init_seed);
  const auto r = train_model<double>(t, d);
  EXPECT_EQ(all_params(r.model), all_params(init));
  EXPECT_EQ(r.report.best_dev.accuracy, r.report.init_dev.accuracy);
  EXPECT_EQ(r.report.test.accuracy, evaluate(init, d.test).accuracy);
}

TEST(Train, OneEpochOnFiftyExamplesIsFinite) {
  const Dataset d = generate_dataset(tiny_data());
  for (BlockKind k : {BlockKind::kNone, BlockKind::kFa, BlockKind::kSfa})
    for (Precision p : {Precision::kF32, Precision::kF64}) {
      TrainConfig t = tiny_train(k);
      t.precision = p;
      const RunReport r = train(t, d);
      ASSERT_EQ(r.epochs.size(), 1u);
      EXPECT_TRUE(std::isfinite(r.epochs[0].train_loss));
      EXPECT_TRUE(std::isfinite(r.epochs[0].dev_loss));
      EXPECT_FALSE(r.aborted);
    }
}

TEST(Train, DivergenceIsFlaggedNotThrown) {
  const Dataset d = generate_dataset(tiny_data());
  TrainConfig t = tiny_train(BlockKind::kNone);
  t.adam.lr = std::numeric_limits<double>::max();
  t.epochs = 5;
  const RunReport r = train(t, d);
  EXPECT_TRUE(r.aborted);
  EXPECT_FALSE(r.abort_reason.empty());
}

TEST(Train, ReportFillsParameterBudget) {
  const Dataset d = generate_dataset(tiny_data());
  const RunReport r = train(tiny_train(), d);
  MatcherConfig m = tiny_train().model;
  EXPECT_EQ(r.base_params, SiameseModel<double>::base_count(m));
  EXPECT_EQ(r.added_params, 2 * count_params(m.sfa()).total);
  EXPECT_DOUBLE_EQ(r.added_percent,
                   100.0 * static_cast<double>(r.added_params) / static_cast<double>(r.base_params));
}

TEST(Train, BottleneckPolicy) {
  const Dataset d = generate_dataset(tiny_data());
  TrainConfig t = tiny_train();
  t.bottleneck_override = false;
  EXPECT_THROW(train(t, d), BottleneckViolation);
  t.model.block = BlockKind::kFa;  // the constraint applies to SFA only
  EXPECT_NO_THROW(train(t, d));
  t.model.block = BlockKind::kSfa;
  t.model.r1 = 1;
  t.model.r2 = 1;
  GenConfig g = tiny_data();
  g.max_len = g.min_len = 6;  // 8.33 ln 6 = 14.9 < 2D/(r1 r2) = 64
  EXPECT_NO_THROW(train(t, generate_dataset(g)));
}

TEST(Train, SixtyFourBitRunsAreBitReproducible) {
  const Dataset d = generate_dataset(tiny_data());
  TrainConfig t = tiny_train();
  t.epochs = 3;
  const std::string a = metrics_csv(train(t, d));
  const std::string b = metrics_csv(train(t, d));
  EXPECT_EQ(a, b);
  t.shuffle_seed = 2;
  EXPECT_NE(a, metrics_csv(train(t, d)));
}

TEST(Train, EarlyStoppingRestoresBestCheckpoint) {
  const Dataset d = generate_dataset(tiny_data());
  TrainConfig t = tiny_train(BlockKind::kNone);
  t.epochs = 30;
  t.patience = 2;
  t.adam.lr = 0.01;
  const auto r = train_model<double>(t, d);
  EXPECT_LT(r.report.epochs.size(), 30u);
  EXPECT_EQ(r.report.epochs.size(), r.report.best_epoch + t.patience);
  for (std::size_t e = 0; e < r.report.epochs.size(); ++e)
    EXPECT_GE(r.report.epochs[e].dev_loss, r.report.best_dev.loss);
  EXPECT_DOUBLE_EQ(evaluate(r.model, d.dev).loss, r.report.best_dev.loss);
}

// --- ablation ----------------------------------------------------------------

TEST(Ablation, EmptySubsetReproducesControl) {
  const GenConfig g = tiny_data();
  const auto variants = ablation_variants(tiny_train(), {});
  ASSERT_EQ(variants.size(), 1u);
  EXPECT_EQ(variants[0].first, "control");
  const auto res = run_variants(g, variants, {1});
  const auto [gs, ts] = with_seed(g, variants[0].second, 1);
  const RunReport direct = train(ts, generate_dataset(gs));
  EXPECT_EQ(metrics_csv(res[0].runs[0].report), metrics_csv(direct));
  EXPECT_EQ(res[0].runs[0].report.test.accuracy, direct.test.accuracy);
}

TEST(Ablation, AllSingleRemovalsEmitFiveSeries) {
  const auto variants = ablation_variants(tiny_train(), ablation_components());
  ASSERT_EQ(variants.size(), 5u);
  const auto res = run_variants(tiny_data(), variants, {1});
  const std::string csv = series_csv(res);
  std::set<std::string> names;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "variant,seed,epoch,train_loss,dev_loss,dev_acc");
  while (std::getline(in, line)) names.insert(line.substr(0, line.find(',')));
  EXPECT_EQ(names, (std::set<std::string>{"control", "no_ae", "no_gmp", "no_gap", "no_selection"}));
  for (const auto& v : res) {
    if (v.name == "no_selection") EXPECT_EQ(v.runs[0].spread, 0.0);
    else EXPECT_GT(v.runs[0].spread, 0.0) << v.name;
  }
}

TEST(Ablation, InvalidSubsetsRejected) {
  EXPECT_THROW(ablation_variants(tiny_train(), {"dropout"}), ConfigError);
  EXPECT_THROW(ablation_variants(tiny_train(), {"ae", "ae"}), ConfigError);
  TrainConfig t = tiny_train();
  t.model.flags.disable_gmp = true;
  t.model.flags.disable_gap = true;
  EXPECT_THROW(t.model.validate(), ConfigError);
}

// --- heatmap -----------------------------------------------------------------

TEST(Heatmap, OnesGiveConstantOne) {
  const auto u = Tensor<double>::ones(Shape{3, 8});
  const auto v = Tensor<double>::ones(Shape{5, 8});
  std::size_t rows = 0, cols = 0;
  const auto m = feature_mean_similarity(u, v, {}, {}, &rows, &cols);
  EXPECT_EQ(rows, 3u);
  EXPECT_EQ(cols, 5u);
  for (double x : m) EXPECT_EQ(x, 1.0);
}

TEST(Heatmap, OrthogonalRowsGiveZero) {
  Tensor<double> u = Tensor<double>::zeros(Shape{2, 4});
  Tensor<double> v = Tensor<double>::zeros(Shape{2, 4});
  u.mutable_leaf_data() = {1, 0, 0, 0, 0, 2, 0, 0};
  v.mutable_leaf_data() = {0, 0, 3, 0, 0, 0, 0, -1};
  for (double x : feature_mean_similarity(u, v)) EXPECT_EQ(x, 0.0);
}

TEST(Heatmap, MaskedRowsExcluded) {
  const auto u = Tensor<double>::uniform(Shape{4, 6}, -1, 1, 1);
  const auto v = Tensor<double>::uniform(Shape{3, 6}, -1, 1, 2);
  std::size_t rows = 0, cols = 0;
  const auto m = feature_mean_similarity(u, v, Mask({1, 1, 0, 0}), Mask({1, 0, 1}), &rows, &cols);
  ASSERT_EQ(rows, 2u);
  ASSERT_EQ(cols, 2u);
  double ref = 0;
  for (std::size_t d = 0; d < 6; ++d) ref += u.at(1, d) * v.at(2, d);
  EXPECT_NEAR(m[3], ref / 6, 1e-15);
}

TEST(Heatmap, ExportMatchesUnpaddedLengthsAndNamesTokens) {
  MatcherConfig mc;
  const auto model = SiameseModel<double>::init(mc, 1);
  const GenConfig g;
  const ExamplePair pair{{1, 3, 40, 0, 0}, {5, 60, 0}, 1};
  const Heatmap h = export_heatmap(model, pair, g);
  ASSERT_EQ(h.rows(), 3u);
  ASSERT_EQ(h.cols(), 2u);
  EXPECT_EQ(h.row_labels, (std::vector<std::string>{"s0a", "s1a", "w40"}));
  EXPECT_EQ(h.col_labels, (std::vector<std::string>{"s2a", "w60"}));
  const std::string csv = heatmap_csv(h);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "token,s2a,w60");
  EXPECT_THROW(export_heatmap(model, ExamplePair{{0, 0}, {5}, 0}, g), ShapeError);
}

// --- latency -----------------------------------------------------------------

TEST(Latency, ReportsHardwareAndPositiveTimes) {
  const Dataset d = generate_dataset(tiny_data());
  const auto m = SiameseModel<double>::init(MatcherConfig{}, 1);
  const LatencyStats one = measure_latency(m, d.test, 10, 1);
  const LatencyStats many = measure_latency(m, d.test, 10, 100);
  EXPECT_FALSE(one.hardware.empty());
  EXPECT_GT(one.median_ms, 0.0);
  EXPECT_GT(many.median_ms, 0.0);
  // Loose band: same work per pair, different repeat counts.
  EXPECT_LT(std::abs(std::log(one.median_ms / many.median_ms)), std::log(5.0));
}

TEST(Latency, BaselineNoSlowerThanSfa) {
  const Dataset d = generate_dataset(tiny_data());
  MatcherConfig none;
  none.block = BlockKind::kNone;
  MatcherConfig sfa;
  sfa.block = BlockKind::kSfa;
  const auto m_none = SiameseModel<double>::init(none, 1);
  const auto m_sfa = SiameseModel<double>::init(sfa, 1);
  int wins = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const double a = measure_latency(m_none, d.test, 10, 3).median_ms;
    const double b = measure_latency(m_sfa, d.test, 10, 3).median_ms;
    wins += a <= b ? 1 : 0;
  }
  EXPECT_GE(wins, 9);
}

// --- config and checkpoints --------------------------------------------------

TEST(Config, DefaultsParseAndMatchLibraryDefaults) {
  const ExperimentConfig c = parse_config(default_config_json());
  EXPECT_EQ(c.data.n_train, 2000u);
  EXPECT_EQ(c.train.model.dim, 32u);
  EXPECT_EQ(c.train.model.block, BlockKind::kSfa);
  EXPECT_EQ(c.train.precision, Precision::kF64);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2, 3, 4, 5}));
  EXPECT_DOUBLE_EQ(c.train.adam.lr, 1e-3);
}

TEST(Config, OverridesAreStrictAndLastOneWins) {
  Json doc = default_config_json();
  apply_override(doc, "model.D=64");
  apply_override(doc, "model.D=16");
  apply_override(doc, "model.block=fa");
  EXPECT_EQ(doc["model"]["D"], 16);
  EXPECT_EQ(parse_config(doc).train.model.block, BlockKind::kFa);
  EXPECT_THROW(apply_override(doc, "model.depth=3"), ConfigError);
  EXPECT_THROW(apply_override(doc, "model.D=\"wide\""), ConfigError);
  EXPECT_THROW(apply_override(doc, "model"), ConfigError);
  EXPECT_THROW(apply_override(doc, "model..D=3"), ConfigError);
  Json bad = default_config_json();
  apply_override(bad, "model.ablate.gmp=true");
  apply_override(bad, "model.ablate.gap=true");
  EXPECT_THROW(parse_config(bad), ConfigError);
}

TEST(Config, MissingFileNamesThePath) {
  try {
    load_config_json("/nonexistent/cfg.json", {});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/cfg.json"), std::string::npos);
  }
}

TEST(Config, HashIsStableAndSensitive) {
  Json a = default_config_json();
  Json b = default_config_json();
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  apply_override(b, "data.seed=2");
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Checkpoint, RoundTripRestoresEveryParameter) {
  MatcherConfig mc;
  auto a = SiameseModel<double>::init(mc, 1);
  auto b = SiameseModel<double>::init(mc, 2);
  load_checkpoint_json(b, checkpoint_json(a, {{"note", "x"}}));
  EXPECT_EQ(all_params(a), all_params(b));

  const auto path = std::filesystem::temp_directory_path() / "sfa_harness_ckpt.json";
  save_checkpoint(a, path.string());
  auto c = SiameseModel<double>::init(mc, 3);
  load_checkpoint(c, path.string());
  EXPECT_EQ(all_params(a), all_params(c));
  std::filesystem::remove(path);

  mc.dim = 16;
  auto wrong = SiameseModel<double>::init(mc, 1);
  EXPECT_THROW(load_checkpoint_json(wrong, checkpoint_json(a)), CheckpointError);
}

}  // namespace
}  // namespace sfa
