#pragma once

#include <filesystem>

#include "json.hpp"
#include "sael/moe.hpp"

namespace sael {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json config_to_json(const MoeConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
MoeConfig config_from_json(const nlohmann::json& j);

struct Checkpoint {
  MoeModel model;
  nlohmann::json metadata = nlohmann::json::object();
};

// {"format":"sael-moe","version":1,"config":{...},"prev_gate":[...],
//  "params":{"<name>":{"rows":r,"cols":c,"data":[...]}},"metadata":{...}}
nlohmann::json checkpoint_to_json(const MoeModel& model, const nlohmann::json& metadata = nlohmann::json::object());
// Throws DataError on version, name or shape mismatches.
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const MoeModel& model,
                     const nlohmann::json& metadata = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sael
