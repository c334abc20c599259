#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lapact/augment.hpp"
#include "lapact/dataset.hpp"
#include "lapact/network.hpp"
#include "lapact/trainer.hpp"

namespace lapact {

struct DatasetSection {
  std::vector<std::filesystem::path> manifests;
  std::set<std::string> train_videos;
  std::set<std::string> test_videos;
  ClipBounds bounds;
  double validation_fraction = 0.2;
  int frame_height = 224;
  int frame_width = 224;
};

// One serialized source of truth for an experiment. Relative paths are
// resolved against the config file's directory.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  std::vector<ActionLabel> actions;
  DatasetSection dataset;
  augment::AugmentationSpec augment;
  int sequence_length = 20;
  network::ModelConfig model;
  std::vector<network::HeadKind> heads;
  trainer::TrainConfig trainer;
  std::int64_t window_len = 50;
  std::int64_t stride = 25;
  std::vector<std::string> infer_videos; // defaults to the test videos
  std::vector<std::filesystem::path> report_inputs;

  nlohmann::json resolved; // the JSON after overrides

  // Seeds for independent pipeline stages, derived from `seed`.
  std::uint64_t stage_seed(std::string_view stage) const;
};

nlohmann::json load_config_json(const std::filesystem::path &path);

// Applies "a.b.c=value". The value is parsed as JSON when possible and taken
// as a string otherwise. Throws ConfigError for malformed assignments.
void apply_override(nlohmann::json &config, const std::string &assignment);

// Throws ConfigError whose message starts with the offending field path.
ExperimentConfig parse_experiment_config(const nlohmann::json &j,
                                         const std::filesystem::path &base_dir);

// Loads every manifest and checks the frame stores (existence and geometry).
std::vector<VideoManifest> load_manifests(const ExperimentConfig &config,
                                          bool check_frames = false);

} // namespace lapact
