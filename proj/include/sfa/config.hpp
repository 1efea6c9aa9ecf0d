// SPDX-License-Identifier: Apache-2.0
//
// JSON experiment configuration. A user document is merged over the built-in
// defaults; every key must already exist in the defaults and keep its JSON
// type. `--set a.b=value` overrides follow the same rule and apply in order.

#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sfa/data.hpp"
#include "sfa/train.hpp"

namespace sfa {

using Json = nlohmann::json;

struct ExperimentConfig {
  GenConfig data;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<std::string> ablate{"ae", "gmp", "gap", "selection"};
  double gradcheck_tol = 1e-4;
  double gradcheck_eps = 1e-6;
  std::uint64_t gradcheck_seed = 1;
};

inline Json default_config_json() {
  return Json::parse(R"({
  "data": {
    "vocab_size": 100, "max_len": 12, "min_len": 6,
    "n_train": 2000, "n_dev": 500, "n_test": 500,
    "ngram": 3, "synonym_classes": 10, "synonyms_per_class": 2,
    "synonym_rate": 0.5, "distractor_rate": 0.5, "reorder_share": 0.0,
    "seed": 1
  },
  "model": {
    "D": 32, "hidden": 32, "classes": 2, "block": "sfa",
    "r": 2, "r1": 8, "r2": 2, "N": 2,
    "ablate": {"ae": false, "gmp": false, "gap": false, "selection": false}
  },
  "optim": {"lr": 0.001, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8},
  "train": {
    "batch_size": 32, "epochs": 30, "patience": 5,
    "init_seed": 1, "shuffle_seed": 1, "precision": "f64",
    "bottleneck_override": true, "log_base": 2.718281828459045,
    "latency_pairs": 50, "latency_repeats": 5
  },
  "experiment": {"seeds": [1, 2, 3, 4, 5], "ablate": ["ae", "gmp", "gap", "selection"]},
  "gradcheck": {"tol": 1e-4, "eps": 1e-6, "seed": 1}
})");
}

namespace detail {

inline const char* kind_name(const Json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

inline bool same_kind(const Json& a, const Json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

/// Recursively overwrites `base` with `patch`, rejecting unknown keys and
/// type changes.
inline void merge_strict(Json& base, const Json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    Json& slot = base[key];
    if (slot.is_object()) {
      merge_strict(slot, value, path);
    } else if (!same_kind(slot, value)) {
      throw ConfigError("config key '" + path + "' expects a " + kind_name(slot) + ", got " +
                        kind_name(value));
    } else {
      slot = value;
    }
  }
}

template <typename U>
U get(const Json& j, const char* key, const std::string& section) {
  try {
    return j.at(key).get<U>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + section + "." + key + "' has an invalid value");
  }
}

inline std::size_t get_count(const Json& j, const char* key, const std::string& section) {
  const Json& v = j.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw ConfigError("config key '" + section + "." + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace detail

/// Applies one "a.b.c=value" override. The value is parsed as JSON when
/// possible, otherwise taken as a string.
inline void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  Json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
    parts.push_back(rest.substr(0, pos));
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    if (it->empty()) throw ConfigError("override key '" + key + "' has an empty segment");
    patch = Json{{*it, patch}};
  }
  detail::merge_strict(doc, patch, "");
}

inline Json load_config_json(const std::string& path, const std::vector<std::string>& overrides) {
  Json doc = default_config_json();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    Json user;
    try {
      user = Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    detail::merge_strict(doc, user, "");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return doc;
}

inline ExperimentConfig parse_config(const Json& doc) {
  using detail::get;
  using detail::get_count;
  ExperimentConfig c;
  const Json& d = doc.at("data");
  c.data.vocab_size = get_count(d, "vocab_size", "data");
  c.data.max_len = get_count(d, "max_len", "data");
  c.data.min_len = get_count(d, "min_len", "data");
  c.data.n_train = get_count(d, "n_train", "data");
  c.data.n_dev = get_count(d, "n_dev", "data");
  c.data.n_test = get_count(d, "n_test", "data");
  c.data.ngram = get_count(d, "ngram", "data");
  c.data.synonym_classes = get_count(d, "synonym_classes", "data");
  c.data.synonyms_per_class = get_count(d, "synonyms_per_class", "data");
  c.data.synonym_rate = get<double>(d, "synonym_rate", "data");
  c.data.distractor_rate = get<double>(d, "distractor_rate", "data");
  c.data.reorder_share = get<double>(d, "reorder_share", "data");
  c.data.seed = get_count(d, "seed", "data");
  c.data.validate();

  const Json& m = doc.at("model");
  MatcherConfig& mc = c.train.model;
  mc.vocab = c.data.vocab_size;
  mc.dim = get_count(m, "D", "model");
  mc.hidden = get_count(m, "hidden", "model");
  mc.classes = get_count(m, "classes", "model");
  mc.block = parse_block_kind(get<std::string>(m, "block", "model"));
  mc.r = get_count(m, "r", "model");
  mc.r1 = get_count(m, "r1", "model");
  mc.r2 = get_count(m, "r2", "model");
  mc.branches = get_count(m, "N", "model");
  const Json& a = m.at("ablate");
  mc.flags.disable_ae = get<bool>(a, "ae", "model.ablate");
  mc.flags.disable_gmp = get<bool>(a, "gmp", "model.ablate");
  mc.flags.disable_gap = get<bool>(a, "gap", "model.ablate");
  mc.flags.disable_selection = get<bool>(a, "selection", "model.ablate");
  mc.validate();

  const Json& o = doc.at("optim");
  c.train.adam = {get<double>(o, "lr", "optim"), get<double>(o, "beta1", "optim"),
                  get<double>(o, "beta2", "optim"), get<double>(o, "epsilon", "optim")};
  if (c.train.adam.lr < 0) throw ConfigError("optim.lr must be >= 0");

  const Json& t = doc.at("train");
  c.train.batch_size = get_count(t, "batch_size", "train");
  c.train.epochs = get_count(t, "epochs", "train");
  c.train.patience = get_count(t, "patience", "train");
  c.train.init_seed = get_count(t, "init_seed", "train");
  c.train.shuffle_seed = get_count(t, "shuffle_seed", "train");
  c.train.precision = parse_precision(get<std::string>(t, "precision", "train"));
  c.train.bottleneck_override = get<bool>(t, "bottleneck_override", "train");
  c.train.log_base = get<double>(t, "log_base", "train");
  c.train.latency_pairs = get_count(t, "latency_pairs", "train");
  c.train.latency_repeats = get_count(t, "latency_repeats", "train");
  if (c.train.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(c.train.log_base > 1)) throw ConfigError("train.log_base must be > 1");

  const Json& e = doc.at("experiment");
  c.seeds.clear();
  for (const auto& s : e.at("seeds")) {
    if (!s.is_number_integer() || s.get<std::int64_t>() < 0) {
      throw ConfigError("experiment.seeds must hold non-negative integers");
    }
    c.seeds.push_back(s.get<std::uint64_t>());
  }
  if (c.seeds.empty()) throw ConfigError("experiment.seeds must not be empty");
  c.ablate.clear();
  for (const auto& s : e.at("ablate")) {
    if (!s.is_string()) throw ConfigError("experiment.ablate must hold component names");
    c.ablate.push_back(s.get<std::string>());
  }
  ablation_variants(c.train, c.ablate);  // validates names

  const Json& g = doc.at("gradcheck");
  c.gradcheck_tol = get<double>(g, "tol", "gradcheck");
  c.gradcheck_eps = get<double>(g, "eps", "gradcheck");
  c.gradcheck_seed = get_count(g, "seed", "gradcheck");
  if (!(c.gradcheck_eps > 0) || !(c.gradcheck_tol > 0)) {
    throw ConfigError("gradcheck.tol and gradcheck.eps must be positive");
  }
  return c;
}

/// 64-bit FNV-1a of the canonical (sorted-key, compact) dump, as 16 hex digits.
inline std::string config_hash(const Json& doc) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : doc.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace sfa
