// SPDX-License-Identifier: Apache-2.0
//
// JSON checkpoints: every parameter path maps to its shape and flat row-major
// values. Values round-trip exactly (shortest round-trip decimal form).

#pragma once

#include <fstream>
#include <set>
#include <type_traits>
#include <vector>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "sfa/tensor.hpp"

namespace sfa {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

template <typename Model>
nlohmann::json checkpoint_json(Model& model, const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json params = nlohmann::json::object();
  model.visit("", [&](const std::string& path, auto& t) {
    nlohmann::json entry;
    entry["shape"] = t.shape().extents();
    nlohmann::json data = nlohmann::json::array();
    for (auto v : t.data()) data.push_back(static_cast<double>(v));
    entry["data"] = std::move(data);
    params[path] = std::move(entry);
  });
  return {{"format", "sfa-checkpoint"},
          {"version", kCheckpointVersion},
          {"meta", meta},
          {"params", std::move(params)}};
}

/// Copies values into an already constructed model. Paths and shapes must
/// match exactly in both directions.
template <typename Model>
void load_checkpoint_json(Model& model, const nlohmann::json& doc) {
  if (doc.value("format", "") != "sfa-checkpoint") throw CheckpointError("not an sfa checkpoint");
  if (doc.value("version", 0) != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + doc.value("version", nlohmann::json()).dump());
  }
  const auto& params = doc.at("params");
  std::set<std::string> seen;
  model.visit("", [&](const std::string& path, auto& t) {
    using Elem = typename std::remove_reference_t<decltype(t)>::value_type;
    if (!params.contains(path)) throw CheckpointError("checkpoint lacks parameter " + path);
    const auto& entry = params.at(path);
    if (entry.at("shape").get<std::vector<std::size_t>>() != t.shape().extents()) {
      throw CheckpointError("shape mismatch for " + path + ": checkpoint " +
                            entry.at("shape").dump() + ", model " + t.shape().str());
    }
    const auto& data = entry.at("data");
    if (data.size() != t.numel()) throw CheckpointError("length mismatch for " + path);
    auto& dst = t.mutable_leaf_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Elem>(data[i].get<double>());
    seen.insert(path);
  });
  for (const auto& [path, _] : params.items()) {
    if (!seen.count(path)) throw CheckpointError("checkpoint has unknown parameter " + path);
  }
}

template <typename Model>
void save_checkpoint(Model& model, const std::string& path,
                     const nlohmann::json& meta = nlohmann::json::object()) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write " + path);
  out << checkpoint_json(model, meta).dump() << '\n';
}

inline nlohmann::json read_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot read checkpoint " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed checkpoint " + path + ": " + e.what());
  }
}

template <typename Model>
void load_checkpoint(Model& model, const std::string& path) {
  load_checkpoint_json(model, read_checkpoint(path));
}

}  // namespace sfa
