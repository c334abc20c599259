#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace lapact {

enum class ActionLabel {
  abdominal_access,
  grasping_anatomy,
  knot_pushing,
  needle_pulling,
  needle_pushing,
  suction,
  other, // catch-all member of the "Rest" pool
};

inline constexpr std::array<ActionLabel, 7> kAllLabels = {
    ActionLabel::abdominal_access, ActionLabel::grasping_anatomy,
    ActionLabel::knot_pushing,     ActionLabel::needle_pulling,
    ActionLabel::needle_pushing,   ActionLabel::suction,
    ActionLabel::other};

// The six recognisable actions, in report column order.
inline constexpr std::array<ActionLabel, 6> kTargetActions = {
    ActionLabel::abdominal_access, ActionLabel::grasping_anatomy,
    ActionLabel::knot_pushing,     ActionLabel::needle_pulling,
    ActionLabel::needle_pushing,   ActionLabel::suction};

std::string_view to_string(ActionLabel label);
// Throws ParseError for names outside the enumeration.
ActionLabel parse_action_label(std::string_view name);
// "Abdominal Access" style title for rendered tables.
std::string display_name(ActionLabel label);

struct AnnotatedInterval {
  ActionLabel label;
  std::int64_t start_frame; // inclusive
  std::int64_t end_frame;   // exclusive

  std::int64_t length() const { return end_frame - start_frame; }
};

struct VideoManifest {
  std::string video_id;
  double fps = 25.0;
  std::int64_t frame_count = 0;
  std::filesystem::path frame_dir;
  std::vector<AnnotatedInterval> intervals;
};

// Throws ValidationError on the first violated invariant.
void validate_manifest(const VideoManifest &manifest);

VideoManifest manifest_from_json(const nlohmann::json &j);
nlohmann::json to_json(const VideoManifest &manifest);

// Parses and validates a manifest file. A relative frame_dir is resolved
// against the manifest's directory. Throws ParseError, ValidationError or
// IoError (unreadable file, missing frame_dir).
VideoManifest load_manifest(const std::filesystem::path &path);

// Checks the frame store layout: frame_%06d.png for every index in
// [0, frame_count). When expected_height/width are non-zero the first frame's
// geometry is checked as well.
void validate_frame_store(const VideoManifest &manifest, int expected_height = 0,
                          int expected_width = 0);

std::filesystem::path frame_path(const std::filesystem::path &dir, std::int64_t index);

enum class Technique {
  gamma_contrast,
  gaussian_blur,
  brightness,
  saturation,
  horizontal_flip,
};

std::string_view to_string(Technique technique);
Technique parse_technique(std::string_view name);

// Concrete parameters an augmented clip was produced with. Re-applying the
// record to the source frames reproduces the output pixels.
struct AugmentationRecord {
  Technique technique = Technique::gamma_contrast;
  double gamma = 0.0;
  double blur_sigma = 0.0;
  double brightness_delta = 0.0;
  double saturation_factor = 0.0;
  bool flip_applied = false;
  std::uint64_t rng_seed = 0;
  std::string source_clip_id;
  std::string output_clip_id;
};

nlohmann::json to_json(const AugmentationRecord &record);
AugmentationRecord record_from_json(const nlohmann::json &j);

struct Clip {
  std::string video_id;
  ActionLabel label = ActionLabel::other;
  std::int64_t start_frame = 0;
  std::int64_t length = 0;
  std::optional<AugmentationRecord> augmentation;

  // "<video>_<start>_<length>" for originals, the record's output id for
  // augmented clips.
  std::string id() const;
};

nlohmann::json to_json(const Clip &clip);
Clip clip_from_json(const nlohmann::json &j);

struct ClipBounds {
  std::int64_t clip_len = 50;
  std::int64_t min_clip_frames = 50;
  std::int64_t max_clip_frames = 75;
};

// Tiles every interval from its start with clip_len-frame clips; trailing
// remainders are dropped. Output is ordered by interval, then start frame.
std::vector<Clip> extract_clips(const VideoManifest &manifest, std::int64_t clip_len,
                                std::int64_t min_clip_frames,
                                std::int64_t max_clip_frames = 75);

enum class Split { train, validation, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct AssignedClip {
  Clip clip;
  Split split = Split::train;
};

struct ClipDataset {
  ActionLabel target_action = ActionLabel::abdominal_access;
  std::vector<AssignedClip> target_clips;
  std::vector<AssignedClip> rest_clips;

  std::vector<Clip> select(Split split, bool target) const;
  std::size_t count(Split split, bool target) const;
};

nlohmann::json to_json(const ClipDataset &dataset);
ClipDataset dataset_from_json(const nlohmann::json &j);

// One-vs-rest partition: clips of test videos form the test split, clips of
// train videos are split into train/validation stratified on the binary label
// using a seeded shuffle. Per class, round(validation_fraction * count) clips
// go to validation.
ClipDataset build_one_vs_rest(const std::vector<Clip> &clips, ActionLabel target,
                              const std::set<std::string> &train_videos,
                              const std::set<std::string> &test_videos,
                              double validation_fraction, std::uint64_t rng_seed);

} // namespace lapact
