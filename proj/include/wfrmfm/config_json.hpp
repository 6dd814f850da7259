#pragma once

// Training presets and the JSON config schema. Every TrainConfig field has a
// key; a config file may set any subset and unknown keys are rejected.

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wfrmfm/trainer.hpp"

namespace wfrmfm {

inline std::vector<std::string> preset_names() { return {"gene", "dyngen", "gaussian", "perturb"}; }

inline TrainConfig preset(const std::string& name) {
  TrainConfig c;
  if (name == "gene") {
    c.delta = 1.5;
    c.p_diff = 0.6;
    c.lambda = 0.05;
  } else if (name == "dyngen") {
    c.delta = 1.5;
    c.p_diff = 0.5;
    c.lambda = 5.0;
  } else if (name == "gaussian") {
    c.delta = 1.4;
    c.p_diff = 0.05;
    c.lambda = 1.0;
  } else if (name == "perturb") {
    c.delta_mass_ratio = true;
    c.p_diff = 0.5;
    c.lambda = 0.1;
  } else {
    throw DomainError("unknown preset '" + name + "'");
  }
  return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"delta", c.delta},
          {"delta_mass_ratio", c.delta_mass_ratio},
          {"epsilon", c.epsilon},
          {"sigma", c.sigma},
          {"p_diff", c.p_diff},
          {"lambda", c.lambda},
          {"batch_size", c.batch_size},
          {"oet_batch", c.oet_batch},
          {"oet_pool", c.oet_pool},
          {"oet_max_iter", c.oet_max_iter},
          {"oet_tol", c.oet_tol},
          {"lr", c.adam.lr},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"eps_opt", c.adam.eps},
          {"steps", c.steps},
          {"seed", c.seed},
          {"depth", c.depth},
          {"width", c.width},
          {"condition_batch", c.condition_batch},
          {"checkpoint_every", c.checkpoint_every},
          {"segment_mode", c.segment_mode == SegmentMode::All ? "all" : "duration"},
          {"weight_mode", c.weight_mode == WeightMode::GeodesicMass ? "geodesic_mass" : "literal"},
          {"lr_schedule", c.lr_schedule == LrSchedule::Constant ? "constant" : "cosine"}};
}

/// Overwrites the fields present in j. Type errors and unknown keys throw
/// DomainError.
inline void apply_json(TrainConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw DomainError("config must be a JSON object");
  const auto known = to_json(TrainConfig{});
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "preset") continue;
    if (!known.contains(k)) throw DomainError("unknown config key '" + k + "'");
    try {
      const auto& v = it.value();
      if (k == "delta") c.delta = v.get<double>();
      else if (k == "delta_mass_ratio") c.delta_mass_ratio = v.get<bool>();
      else if (k == "epsilon") c.epsilon = v.get<double>();
      else if (k == "sigma") c.sigma = v.get<double>();
      else if (k == "p_diff") c.p_diff = v.get<double>();
      else if (k == "lambda") c.lambda = v.get<double>();
      else if (k == "batch_size") c.batch_size = v.get<int>();
      else if (k == "oet_batch") c.oet_batch = v.get<int>();
      else if (k == "oet_pool") c.oet_pool = v.get<int>();
      else if (k == "oet_max_iter") c.oet_max_iter = v.get<int>();
      else if (k == "oet_tol") c.oet_tol = v.get<double>();
      else if (k == "lr") c.adam.lr = v.get<double>();
      else if (k == "beta1") c.adam.beta1 = v.get<double>();
      else if (k == "beta2") c.adam.beta2 = v.get<double>();
      else if (k == "eps_opt") c.adam.eps = v.get<double>();
      else if (k == "steps") c.steps = v.get<int>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "depth") c.depth = v.get<int>();
      else if (k == "width") c.width = v.get<int>();
      else if (k == "condition_batch") c.condition_batch = v.get<int>();
      else if (k == "checkpoint_every") c.checkpoint_every = v.get<int>();
      else if (k == "segment_mode") {
        const auto s = v.get<std::string>();
        if (s != "all" && s != "duration") throw DomainError("segment_mode must be 'all' or 'duration'");
        c.segment_mode = s == "all" ? SegmentMode::All : SegmentMode::Duration;
      } else if (k == "weight_mode") {
        const auto s = v.get<std::string>();
        if (s != "geodesic_mass" && s != "literal") {
          throw DomainError("weight_mode must be 'geodesic_mass' or 'literal'");
        }
        c.weight_mode = s == "literal" ? WeightMode::Literal : WeightMode::GeodesicMass;
      } else if (k == "lr_schedule") {
        const auto s = v.get<std::string>();
        if (s != "constant" && s != "cosine") throw DomainError("lr_schedule must be 'constant' or 'cosine'");
        c.lr_schedule = s == "cosine" ? LrSchedule::Cosine : LrSchedule::Constant;
      }
    } catch (const nlohmann::json::exception& e) {
      throw DomainError("config key '" + k + "': " + e.what());
    }
  }
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace wfrmfm
