#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfr/feature_store.hpp"
#include "sfr/protocol.hpp"

namespace sfr {

inline constexpr int kConfigSchemaVersion = 1;

/// One experiment, as read from a run config document.
struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  std::filesystem::path dataset;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;
  int trials = 1;
  /// Defaults to true for DFCIL runs and false for FSCIL runs.
  std::optional<bool> permute_class_order;
  std::optional<int> shots;
  bool augment = false;
  std::optional<int> augment_target;
  int jobs = 1;
  std::vector<int> sweep_sizes{10, 20, 50, 100};
  /// Override the manifest's session layout.
  std::optional<std::vector<Label>> base_classes;
  std::optional<std::vector<std::vector<Label>>> increments;
  SamplerConfig sampler;
  TrainConfig train;
  PrototypeOptions prototype;
};

/// Relative dataset/output paths are resolved against `base_dir`.
RunConfig run_config_from_json(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_to_json(const RunConfig& cfg);

SessionPlan make_plan(const RunConfig& cfg, const DatasetManifest& manifest, bool few_shot);
RunOptions make_options(const RunConfig& cfg);

}  // namespace sfr
