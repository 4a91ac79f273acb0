#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gebc/captioner.h"
#include "gebc/hash.h"
#include "gebc/language_model.h"
#include "gebc/model.h"
#include "gebc/trainer.h"

namespace gebc {

inline constexpr const char* kSplits[] = {"train", "val", "test"};

struct FeatureSettings {
  int steps = 0;  // L; 0 means unset
  int num_objects = 50;
  ResizeMode resize = ResizeMode::kLinear;
  bool zero_padded_rows = false;
  int frame_dim = 24;  // synthetic frame width
};

struct RunConfig {
  std::string profile = "desk";
  std::map<std::string, std::filesystem::path> annotations;  // split -> file
  std::filesystem::path cache_dir = "cache";
  std::vector<ExtractorSpec> extractors;
  FeatureSettings features;
  VideoAdapterConfig adapter;
  BoundaryEncoderConfig boundary;
  std::string lm_plugin = "stub";
  TinyLMConfig lm;
  DecodeOptions decode;
  TrainConfig train;
  uint64_t seed = 0;
  bool deterministic = true;
  std::filesystem::path output_dir = "runs/default";
};

// Synthetic extractors, tiny LM, L=8, d_0=32, q_0=q_1=4, vocab 128.
RunConfig desk_profile();
// Full-size dimensions; L must be supplied by the user.
RunConfig full_profile();
RunConfig profile_defaults(const std::string& name);

nlohmann::ordered_json to_json(const RunConfig& config);
// Strict: unknown keys and wrong types raise InvalidConfig.
RunConfig from_json(const nlohmann::json& j);

// Defaults of the named profile, overlaid with the document (JSON merge
// patch). Relative paths resolve against `base_dir`.
RunConfig merge_config(const nlohmann::json& document,
                       const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

void validate(const RunConfig& config);

ModelConfig model_config(const RunConfig& config);

// FNV-1a over the architecture-defining sections (extractors, features,
// adapter, boundary, lm). Checkpoints carry it.
uint64_t config_hash(const RunConfig& config);

}  // namespace gebc
