#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "smk/dataset.hpp"
#include "smk/descriptors.hpp"
#include "smk/toy_model.hpp"
#include "smk/train.hpp"

#include <json.hpp>

namespace smk {

struct ExperimentPaths {
  std::filesystem::path train_dir;
  std::filesystem::path eval_dir;
  std::filesystem::path manifest;
  std::filesystem::path checkpoint;

  friend bool operator==(const ExperimentPaths&, const ExperimentPaths&) = default;
};

/// Everything a CLI run depends on besides its positional arguments. Every
/// section is optional in JSON; absent keys keep their defaults and unknown
/// keys are rejected.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  bool single_precision = false;  // train in f32, checkpoint still f64
  ModelShape model;
  InitConfig init;
  OptimizerConfig optim;
  DescriptorConfig descriptors;
  DescriptorMask descriptor_mask = kAllDescriptors;
  SynthConfig synth;
  ExperimentPaths paths;

  void validate() const;
  TrainConfig train_config(std::size_t threads = 1) const;

  nlohmann::json to_json() const;
  /// Relative paths are resolved against base_dir.
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);

  friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);
};

}  // namespace smk
