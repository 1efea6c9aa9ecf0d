// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. dispatch() is callable in-process; tools/sfa_cli.cpp
// is a thin main() around it.
//
// Exit codes: 0 success, 1 a check failed (gradient tolerance, bottleneck
// violation, diverged run), 2 usage or configuration error.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sfa/checkpoint.hpp"
#include "sfa/config.hpp"
#include "sfa/gradflow.hpp"
#include "sfa/matcher.hpp"
#include "sfa/train.hpp"

namespace sfa::cli {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsage = 2 };

inline constexpr const char* kOutputRootEnv = "SFA_OUTPUT_ROOT";

struct CommonArgs {
  std::string config;
  std::string out;
  std::vector<std::string> overrides;
  int verbosity = 0;
};

struct Io {
  std::ostream& out;
  std::ostream& err;
  int verbosity = 0;
};

inline std::string output_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return "runs";
}

/// <root>/<config hash>_<UTC timestamp>, suffixed _2, _3, ... on collision.
inline std::filesystem::path make_run_dir(const std::string& root, const Json& doc) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  std::ostringstream stamp;
  stamp << std::put_time(&utc, "%Y%m%dT%H%M%SZ");
  const std::string base = config_hash(doc) + "_" + stamp.str();
  std::filesystem::path dir = std::filesystem::path(root) / base;
  for (int k = 2; std::filesystem::exists(dir); ++k) {
    dir = std::filesystem::path(root) / (base + "_" + std::to_string(k));
  }
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << body;
}

inline Json to_json(const EvalStats& e) { return {{"loss", e.loss}, {"accuracy", e.accuracy}}; }

inline Json to_json(const BottleneckReport& b) {
  return {{"fa_dim", b.fa_dim},
          {"branch_dim", b.branch_dim},
          {"reduced_dim", b.reduced_dim},
          {"threshold", b.threshold},
          {"fa_pass", b.fa_pass},
          {"branch_pass", b.branch_pass},
          {"reduced_pass", b.reduced_pass},
          {"sfa_pass", b.sfa_pass()}};
}

inline Json to_json(const RunReport& r) {
  Json epochs = Json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"dev_loss", e.dev_loss},
                      {"dev_acc", e.dev_acc}});
  }
  return {{"epochs", epochs},
          {"best_epoch", r.best_epoch},
          {"init_dev", to_json(r.init_dev)},
          {"best_dev", to_json(r.best_dev)},
          {"test", to_json(r.test)},
          {"aborted", r.aborted},
          {"abort_reason", r.abort_reason},
          {"params", {{"base", r.base_params},
                      {"added_by_blocks", r.added_params},
                      {"added_percent", r.added_percent}}},
          {"bottleneck", to_json(r.bottleneck)},
          {"bottleneck_policy_applied", r.bottleneck_checked},
          {"latency", {{"median_ms", r.latency.median_ms},
                       {"mean_ms", r.latency.mean_ms},
                       {"pairs", r.latency.pairs},
                       {"repeats", r.latency.repeats},
                       {"hardware", r.latency.hardware}}},
          {"wall_seconds", r.wall_seconds}};
}

inline std::vector<std::size_t> parse_tokens(const std::string& s) {
  std::vector<std::size_t> out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(cur, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != cur.size()) throw ConfigError("token list entry '" + cur + "' is not an id");
    out.push_back(static_cast<std::size_t>(v));
    cur.clear();
  };
  for (char c : s) {
    if (c == ' ' || c == ',') flush();
    else cur.push_back(c);
  }
  flush();
  if (out.empty()) throw ConfigError("empty token list");
  return out;
}

/// Runs `fn` with the model type matching the configured precision.
template <typename Fn>
decltype(auto) with_precision(Precision p, Fn&& fn) {
  if (p == Precision::kF32) return fn(float{});
  return fn(double{});
}

// ---------------------------------------------------------------------------
// Subcommands

struct Loaded {
  Json doc;
  ExperimentConfig cfg;
};

inline Loaded load(const CommonArgs& a) {
  Json doc = load_config_json(a.config, a.overrides);
  return {doc, parse_config(doc)};
}

inline EpochCallback progress(const Io& io, const std::string& tag = "") {
  if (io.verbosity < 1) return {};
  return [&io, tag](const EpochMetrics& m) {
    io.err << tag << "epoch " << m.epoch << " train_loss " << m.train_loss << " dev_loss "
           << m.dev_loss << " dev_acc " << m.dev_acc << '\n';
  };
}

template <typename T>
Json trained_gradcheck_summary(const SiameseModel<T>& model, const Dataset& data) {
  if (model.config.block != BlockKind::kSfa) return {{"applicable", false}};
  Tensor<T> x;
  {
    NoGradGuard no_grad;
    x = forward_trace(data.dev.front(), model).x;
  }
  const GradFlowReport r = direct_coefficients(model.block_x.sfa, x);
  return {{"applicable", true},
          {"variant", r.variant},
          {"direct_path_max_error", r.max_error},
          {"coefficient_spread", r.spread},
          {"pass", r.pass}};
}

inline int cmd_train(const CommonArgs& a, Io& io) {
  const Loaded l = load(a);
  const auto dir = make_run_dir(output_root(a.out), l.doc);
  write_file(dir / "config.json", l.doc.dump(2) + "\n");
  const Dataset data = generate_dataset(l.cfg.data);
  return with_precision(l.cfg.train.precision, [&](auto tag) {
    using T = decltype(tag);
    auto result = train_model<T>(l.cfg.train, data, progress(io));
    Json report = to_json(result.report);
    report["config"] = l.doc;
    report["config_hash"] = config_hash(l.doc);
    report["seeds"] = {{"data", l.cfg.data.seed},
                       {"init", l.cfg.train.init_seed},
                       {"shuffle", l.cfg.train.shuffle_seed}};
    report["gradcheck"] = trained_gradcheck_summary(result.model, data);
    write_file(dir / "metrics.csv", metrics_csv(result.report));
    write_file(dir / "report.json", report.dump(2) + "\n");
    save_checkpoint(result.model, (dir / "checkpoint.json").string(), {{"config", l.doc}});
    io.out << dir.string() << '\n';
    io.err << "test accuracy " << result.report.test.accuracy << " (best epoch "
           << result.report.best_epoch << ")\n";
    if (result.report.aborted) {
      io.err << "run aborted: " << result.report.abort_reason << '\n';
      return int{kCheckFailed};
    }
    return int{kOk};
  });
}

inline int cmd_eval(const CommonArgs& a, const std::string& checkpoint, Io& io) {
  const Json ckpt = read_checkpoint(checkpoint);
  Json doc;
  if (a.config.empty() && ckpt.contains("meta") && ckpt["meta"].contains("config")) {
    doc = default_config_json();
    detail::merge_strict(doc, ckpt["meta"]["config"], "");
    for (const auto& o : a.overrides) apply_override(doc, o);
  } else {
    doc = load_config_json(a.config, a.overrides);
  }
  const ExperimentConfig cfg = parse_config(doc);
  const Dataset data = generate_dataset(cfg.data);
  return with_precision(cfg.train.precision, [&](auto tag) {
    using T = decltype(tag);
    MatcherConfig mc = cfg.train.model;
    mc.vocab = cfg.data.vocab_size;
    auto model = SiameseModel<T>::init(mc, cfg.train.init_seed);
    load_checkpoint_json(model, ckpt);
    const EvalStats dev = evaluate(model, data.dev);
    const EvalStats test = evaluate(model, data.test);
    const auto dir = make_run_dir(output_root(a.out), doc);
    const Json report{{"checkpoint", checkpoint}, {"dev", to_json(dev)}, {"test", to_json(test)},
                      {"config", doc}};
    write_file(dir / "report.json", report.dump(2) + "\n");
    io.out << dir.string() << '\n';
    io.err << "dev accuracy " << dev.accuracy << ", test accuracy " << test.accuracy << '\n';
    return int{kOk};
  });
}

inline int cmd_gradcheck(const CommonArgs& a, double tol_flag, Io& io) {
  const Loaded l = load(a);
  const double tol = tol_flag > 0 ? tol_flag : l.cfg.gradcheck_tol;
  const double eps = l.cfg.gradcheck_eps;
  const MatcherConfig& mc = l.cfg.train.model;
  const std::size_t len = l.cfg.data.max_len;
  const Tensor<double> x =
      Tensor<double>::uniform(Shape{len, mc.dim}, -1.0, 1.0, l.cfg.gradcheck_seed);
  std::mt19937_64 rng(l.cfg.gradcheck_seed);
  Json checks = Json::array();
  bool pass = true;
  auto record = [&](const GradFlowReport& r) {
    checks.push_back(r.to_json());
    pass = pass && r.pass;
    io.err << r.check << (r.variant.empty() ? "" : " (" + r.variant + ")") << ": "
           << (r.pass ? "pass" : "FAIL") << ", max error " << r.max_error << '\n';
  };
  if (mc.block == BlockKind::kSfa) {
    SfaConfig with = mc.sfa();
    with.flags.disable_selection = false;
    SfaConfig without = with;
    without.flags.disable_selection = true;
    const auto p_with = SfaParams<double>::init(with, rng);
    const auto p_without = SfaParams<double>::init(without, rng);
    auto fd_with = full_chain_fd_check(p_with, x, eps, tol);
    auto fd_without = full_chain_fd_check(p_without, x, eps, tol);
    record(fd_with);
    record(fd_without);
    record(direct_path_check(p_with, x));
    record(uniformity_contrast(p_with, p_without, x));
  } else if (mc.block == BlockKind::kFa) {
    record(full_chain_fd_check(FaParams<double>::init(mc.fa(), rng), x, eps, tol));
  }
  // Whole matcher on a tiny instance, every parameter.
  MatcherConfig tiny = mc;
  tiny.vocab = 10;
  tiny.dim = 8;
  tiny.hidden = 6;
  tiny.r = 2;
  tiny.r1 = 2;
  tiny.r2 = 2;
  auto model = SiameseModel<double>::init(tiny, l.cfg.gradcheck_seed);
  const ExamplePair pair{{1, 7, 3}, {9, 2, 5}, 1};
  GradFlowReport whole;
  whole.check = "matcher_parameters_fd";
  whole.variant = to_string(tiny.block);
  whole.tolerance = tol;
  whole.max_error = parameter_fd_error<double>(
      model, [&] { return loss(forward(pair, model), pair.label); }, eps);
  whole.pass = whole.max_error < tol;
  record(whole);

  const auto dir = make_run_dir(output_root(a.out), l.doc);
  const Json out{{"tolerance", tol}, {"eps", eps}, {"block", to_string(mc.block)},
                 {"checks", checks}, {"pass", pass}};
  write_file(dir / "gradcheck.json", out.dump(2) + "\n");
  io.out << dir.string() << '\n';
  return pass ? kOk : kCheckFailed;
}

inline Json ablation_summary(const std::vector<VariantResult>& results) {
  Json variants = Json::array();
  const double control = results.empty() ? 0.0 : results.front().mean_test_accuracy();
  for (const auto& v : results) {
    Json runs = Json::array();
    for (const auto& r : v.runs) {
      runs.push_back({{"seed", r.seed},
                      {"test_accuracy", r.report.test.accuracy},
                      {"best_epoch", r.report.best_epoch},
                      {"coefficient_spread", std::isnan(r.spread) ? Json() : Json(r.spread)}});
    }
    variants.push_back({{"name", v.name},
                        {"mean_test_accuracy", v.mean_test_accuracy()},
                        {"delta_vs_control", v.mean_test_accuracy() - control},
                        {"runs", runs}});
  }
  return variants;
}

inline int cmd_ablate(const CommonArgs& a, const std::string& components_flag, Io& io) {
  const Loaded l = load(a);
  std::vector<std::string> components = l.cfg.ablate;
  if (!components_flag.empty()) {
    components.clear();
    std::stringstream ss(components_flag);
    for (std::string item; std::getline(ss, item, ',');)
      if (!item.empty()) components.push_back(item);
  }
  const auto variants = ablation_variants(l.cfg.train, components);
  const auto dir = make_run_dir(output_root(a.out), l.doc);
  write_file(dir / "config.json", l.doc.dump(2) + "\n");
  const auto results = run_variants(l.cfg.data, variants, l.cfg.seeds,
                                    [&](const std::string& name, std::uint64_t seed, const RunReport& r) {
                                      if (io.verbosity >= 1) {
                                        io.err << name << " seed " << seed << ": test accuracy "
                                               << r.test.accuracy << '\n';
                                      }
                                    });
  write_file(dir / "ablation.csv", series_csv(results));
  const Json summary{{"components", components}, {"seeds", l.cfg.seeds},
                     {"variants", ablation_summary(results)}, {"config", l.doc}};
  write_file(dir / "ablation.json", summary.dump(2) + "\n");
  for (const auto& v : results) {
    io.err << v.name << ": mean test accuracy " << v.mean_test_accuracy() << '\n';
  }
  io.out << dir.string() << '\n';
  return kOk;
}

inline int cmd_heatmap(const CommonArgs& a, const std::string& checkpoint, const std::string& ta,
                       const std::string& tb, const std::string& id, Io& io) {
  const Loaded l = load(a);
  if (ta.empty() != tb.empty()) throw ConfigError("--a and --b must be given together");
  const Dataset data = generate_dataset(l.cfg.data);
  std::vector<std::pair<std::string, ExamplePair>> pairs;
  if (!ta.empty()) {
    pairs.emplace_back(id.empty() ? "pair" : id, ExamplePair{parse_tokens(ta), parse_tokens(tb), 0});
  } else {
    for (std::size_t i = 0; i < 2 && i < data.test.size(); ++i)
      pairs.emplace_back("test" + std::to_string(i), data.test[i]);
  }
  for (const auto& [name, p] : pairs) {
    for (std::size_t t : p.tokens_a)
      if (t >= l.cfg.data.vocab_size) throw ConfigError("token id " + std::to_string(t) + " >= V");
    for (std::size_t t : p.tokens_b)
      if (t >= l.cfg.data.vocab_size) throw ConfigError("token id " + std::to_string(t) + " >= V");
  }
  const auto dir = make_run_dir(output_root(a.out), l.doc);
  return with_precision(l.cfg.train.precision, [&](auto tag) {
    using T = decltype(tag);
    MatcherConfig mc = l.cfg.train.model;
    mc.vocab = l.cfg.data.vocab_size;
    SiameseModel<T> model = SiameseModel<T>::init(mc, l.cfg.train.init_seed);
    if (!checkpoint.empty()) {
      load_checkpoint(model, checkpoint);
    } else {
      io.err << "no checkpoint given, training per config first\n";
      model = train_model<T>(l.cfg.train, data, progress(io)).model;
    }
    for (const auto& [name, p] : pairs) {
      const Heatmap h = export_heatmap(model, p, l.cfg.data);
      const auto path = dir / ("heatmap_" + name + ".csv");
      write_file(path, heatmap_csv(h));
      io.out << path.string() << '\n';
    }
    return int{kOk};
  });
}

inline int cmd_bottleneck(std::size_t dim, std::size_t r, std::size_t r1, std::size_t r2,
                          std::size_t len, double log_base, bool override_flag,
                          const std::string& json_path, Io& io) {
  const BottleneckReport b = check_bottleneck(dim, r, r1, r2, len, log_base);
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "threshold 8.33*log(L) at L=" << len << ": " << b.threshold << '\n';
  auto line = [&](const char* name, double v, bool ok) {
    os << std::left << std::setw(12) << name << std::right << std::setw(10) << v << "  margin "
       << std::showpos << v - b.threshold << std::noshowpos << "  " << (ok ? "pass" : "FAIL")
       << '\n';
  };
  line("D/r", b.fa_dim, b.fa_pass);
  line("2D/r1", b.branch_dim, b.branch_pass);
  line("2D/(r1 r2)", b.reduced_dim, b.reduced_pass);
  os << "result: " << (b.all_pass() ? "pass" : (override_flag ? "FAIL (overridden)" : "FAIL"))
     << '\n';
  io.out << os.str();
  if (!json_path.empty()) {
    Json j = to_json(b);
    j["L"] = len;
    j["log_base"] = log_base;
    j["all_pass"] = b.all_pass();
    write_file(json_path, j.dump(2) + "\n");
  }
  return b.all_pass() || override_flag ? kOk : kCheckFailed;
}

inline int cmd_param_count(const CommonArgs& a, const std::string& json_path, Io& io) {
  const Loaded l = load(a);
  MatcherConfig mc = l.cfg.train.model;
  mc.vocab = l.cfg.data.vocab_size;
  const std::size_t base = SiameseModel<double>::base_count(mc);
  const std::size_t added = SiameseModel<double>::block_count(mc);
  const double pct = 100.0 * static_cast<double>(added) / static_cast<double>(base);
  Json breakdown = Json::object();
  if (mc.block == BlockKind::kFa) {
    for (const auto& [k, v] : count_params(mc.fa()).by_component) breakdown[k] = v;
  } else if (mc.block == BlockKind::kSfa) {
    for (const auto& [k, v] : count_params(mc.sfa()).by_component) breakdown[k] = v;
  }
  io.out << "block " << to_string(mc.block) << ": base " << base << ", added " << added << " ("
         << std::fixed << std::setprecision(2) << pct << "%), per side " << added / 2 << '\n';
  if (!json_path.empty()) {
    const Json j{{"block", to_string(mc.block)}, {"base", base},  {"added", added},
                 {"added_percent", pct},          {"per_block", breakdown}};
    write_file(json_path, j.dump(2) + "\n");
  }
  return kOk;
}

// ---------------------------------------------------------------------------

inline void add_common(CLI::App* sub, CommonArgs& a) {
  sub->add_option("-c,--config", a.config, "JSON config file (defaults apply when omitted)")
      ->check(CLI::ExistingFile);
  sub->add_option("-o,--out", a.out,
                  std::string("output root directory (default: $") + kOutputRootEnv +
                      " or ./runs)");
  sub->add_option("--set", a.overrides, "override a config value, e.g. --set model.D=64")
      ->take_all()
      ->allow_extra_args(false);
  sub->add_flag("-v,--verbose", "progress on standard error (repeatable)");
}

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Feature attention blocks for Siamese text matching: training, checks, exports",
               "sfa_cli"};
  app.require_subcommand(1);
  app.fallthrough(false);

  CommonArgs common;
  std::string checkpoint, components, tok_a, tok_b, pair_id, json_path;
  double tol = 0;
  std::size_t dim = 0, r = 1, r1 = 1, r2 = 1, len = 0;
  double log_base = std::numbers::e;
  bool override_flag = false;

  auto* train = app.add_subcommand("train", "train one model and write metrics, report, checkpoint");
  add_common(train, common);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the dev and test splits");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "checkpoint.json written by train")
      ->required()
      ->check(CLI::ExistingFile);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference and gradient-flow checks");
  add_common(grad, common);
  grad->add_option("--tol", tol, "relative error tolerance (default: gradcheck.tol)")
      ->check(CLI::PositiveNumber);

  auto* abl = app.add_subcommand("ablate", "full SFA plus single-component removals over seeds");
  add_common(abl, common);
  abl->add_option("--components", components,
                  "comma list from ae,gmp,gap,selection (default: experiment.ablate)");

  auto* heat = app.add_subcommand("heatmap", "export feature-averaged similarity matrices");
  add_common(heat, common);
  heat->add_option("--checkpoint", checkpoint, "model to load (trains per config when omitted)")
      ->check(CLI::ExistingFile);
  heat->add_option("--a", tok_a, "token ids of sentence a, space or comma separated");
  heat->add_option("--b", tok_b, "token ids of sentence b");
  heat->add_option("--id", pair_id, "name used in heatmap_<id>.csv (default: pair)");

  auto* bott = app.add_subcommand("bottleneck-check", "evaluate the bottleneck width constraint");
  bott->add_option("--D", dim, "embedding width D")->required()->check(CLI::PositiveNumber);
  bott->add_option("--r", r, "FA decay factor r (default 1)")->check(CLI::PositiveNumber);
  bott->add_option("--r1", r1, "auto-encoder reduction r1 (default 1)")->check(CLI::PositiveNumber);
  bott->add_option("--r2", r2, "excitation reduction r2 (default 1)")->check(CLI::PositiveNumber);
  bott->add_option("--L", len, "sequence length L")->required()->check(CLI::PositiveNumber);
  bott->add_option("--log-base", log_base, "logarithm base (default e)");
  bott->add_flag("--override", override_flag, "report a violation but exit 0");
  bott->add_option("--json", json_path, "also write the result as JSON to this path");

  auto* pc = app.add_subcommand("param-count", "parameter budget of the configured model");
  add_common(pc, common);
  pc->add_option("--json", json_path, "also write the result as JSON to this path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  for (CLI::App* sub : app.get_subcommands()) {
    if (CLI::Option* v = sub->get_option_no_throw("--verbose")) common.verbosity = static_cast<int>(v->count());
  }
  Io io{out, err, common.verbosity};
  try {
    if (*train) return cmd_train(common, io);
    if (*eval) return cmd_eval(common, checkpoint, io);
    if (*grad) return cmd_gradcheck(common, tol, io);
    if (*abl) return cmd_ablate(common, components, io);
    if (*heat) return cmd_heatmap(common, checkpoint, tok_a, tok_b, pair_id, io);
    if (*bott) {
      if (!(log_base > 1)) throw ConfigError("--log-base must be > 1");
      return cmd_bottleneck(dim, r, r1, r2, len, log_base, override_flag, json_path, io);
    }
    if (*pc) return cmd_param_count(common, json_path, io);
  } catch (const BottleneckViolation& e) {
    err << "error: " << e.what() << '\n';
    return kCheckFailed;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kUsage;
  } catch (const nlohmann::json::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

}  // namespace sfa::cli
