#include "lapact/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "lapact/error.hpp"
#include "lapact/image.hpp"

namespace lapact {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char *kModule = "dataset_model";

template <typename T>
T required(const json &j, const char *field, const std::string &context) {
  if (!j.is_object() || !j.contains(field))
    throw ParseError(kModule, "malformed manifest: missing field '" + context + field + "'");
  try {
    return j.at(field).get<T>();
  } catch (const json::exception &) {
    throw ParseError(kModule, "malformed manifest: field '" + context + field +
                                  "' has the wrong type");
  }
}

} // namespace

std::string_view to_string(ActionLabel label) {
  switch (label) {
  case ActionLabel::abdominal_access: return "abdominal_access";
  case ActionLabel::grasping_anatomy: return "grasping_anatomy";
  case ActionLabel::knot_pushing: return "knot_pushing";
  case ActionLabel::needle_pulling: return "needle_pulling";
  case ActionLabel::needle_pushing: return "needle_pushing";
  case ActionLabel::suction: return "suction";
  case ActionLabel::other: return "other";
  }
  return "other";
}

ActionLabel parse_action_label(std::string_view name) {
  for (auto label : kAllLabels)
    if (to_string(label) == name) return label;
  throw ParseError(kModule, "unknown action label '" + std::string(name) + "'");
}

std::string display_name(ActionLabel label) {
  std::string out(to_string(label));
  bool upper = true;
  for (auto &c : out) {
    if (c == '_') {
      c = ' ';
      upper = true;
    } else if (upper) {
      c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      upper = false;
    }
  }
  return out;
}

void validate_manifest(const VideoManifest &m) {
  if (m.video_id.empty()) throw ValidationError(kModule, "manifest: empty video_id");
  if (!(m.fps > 0)) throw ValidationError(kModule, "manifest " + m.video_id + ": fps must be > 0");
  if (m.frame_count < 0)
    throw ValidationError(kModule, "manifest " + m.video_id + ": negative frame_count");
  for (std::size_t i = 0; i < m.intervals.size(); ++i) {
    const auto &iv = m.intervals[i];
    if (iv.start_frame < 0 || iv.end_frame > m.frame_count || iv.start_frame >= iv.end_frame)
      throw ValidationError(kModule, "manifest " + m.video_id + ": interval " +
                                         std::to_string(i) + " [" +
                                         std::to_string(iv.start_frame) + ", " +
                                         std::to_string(iv.end_frame) +
                                         ") violates 0 <= start < end <= frame_count (" +
                                         std::to_string(m.frame_count) + ")");
    if (i == 0) continue;
    const auto &prev = m.intervals[i - 1];
    if (iv.start_frame < prev.start_frame)
      throw ValidationError(kModule, "manifest " + m.video_id + ": intervals " +
                                         std::to_string(i - 1) + " and " + std::to_string(i) +
                                         " are not sorted by start_frame");
    if (iv.start_frame < prev.end_frame)
      throw ValidationError(
          kModule, "manifest " + m.video_id + ": intervals " + std::to_string(i - 1) + " (" +
                       std::string(to_string(prev.label)) + ") and " + std::to_string(i) + " (" +
                       std::string(to_string(iv.label)) + ") overlap on frames " +
                       std::to_string(iv.start_frame) + "-" +
                       std::to_string(std::min(prev.end_frame, iv.end_frame)));
  }
}

VideoManifest manifest_from_json(const json &j) {
  VideoManifest m;
  m.video_id = required<std::string>(j, "video_id", "");
  m.fps = required<double>(j, "fps", "");
  m.frame_count = required<std::int64_t>(j, "frame_count", "");
  m.frame_dir = required<std::string>(j, "frame_dir", "");
  const auto intervals = required<json>(j, "intervals", "");
  if (!intervals.is_array())
    throw ParseError(kModule, "malformed manifest: field 'intervals' must be an array");
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    const std::string ctx = "intervals[" + std::to_string(i) + "].";
    AnnotatedInterval iv;
    const auto label = required<std::string>(intervals[i], "label", ctx);
    try {
      iv.label = parse_action_label(label);
    } catch (const ParseError &) {
      throw ParseError(kModule, "malformed manifest: field '" + ctx + "label' has unknown value '" +
                                    label + "'");
    }
    iv.start_frame = required<std::int64_t>(intervals[i], "start_frame", ctx);
    iv.end_frame = required<std::int64_t>(intervals[i], "end_frame", ctx);
    m.intervals.push_back(iv);
  }
  return m;
}

json to_json(const VideoManifest &m) {
  json intervals = json::array();
  for (const auto &iv : m.intervals)
    intervals.push_back({{"label", to_string(iv.label)},
                         {"start_frame", iv.start_frame},
                         {"end_frame", iv.end_frame}});
  return {{"video_id", m.video_id},
          {"fps", m.fps},
          {"frame_count", m.frame_count},
          {"frame_dir", m.frame_dir.string()},
          {"intervals", intervals}};
}

VideoManifest load_manifest(const fs::path &path) {
  std::ifstream in(path);
  if (!in) throw IoError(kModule, "cannot read manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error &e) {
    throw ParseError(kModule, "malformed manifest " + path.string() + ": " + e.what());
  }
  auto m = manifest_from_json(j);
  if (m.frame_dir.is_relative()) m.frame_dir = path.parent_path() / m.frame_dir;
  validate_manifest(m);
  if (!fs::is_directory(m.frame_dir))
    throw IoError(kModule, "frame_dir not found for video " + m.video_id + ": " +
                               m.frame_dir.string());
  return m;
}

fs::path frame_path(const fs::path &dir, std::int64_t index) {
  char name[32];
  std::snprintf(name, sizeof(name), "frame_%06lld.png", static_cast<long long>(index));
  return dir / name;
}

void validate_frame_store(const VideoManifest &m, int expected_height, int expected_width) {
  if (!fs::is_directory(m.frame_dir))
    throw IoError(kModule, "frame_dir not found for video " + m.video_id + ": " +
                               m.frame_dir.string());
  for (std::int64_t i = 0; i < m.frame_count; ++i)
    if (!fs::is_regular_file(frame_path(m.frame_dir, i)))
      throw IoError(kModule, "video " + m.video_id + ": missing frame " +
                                 frame_path(m.frame_dir, i).string());
  if (m.frame_count > 0 && expected_height > 0 && expected_width > 0) {
    const auto frame = read_png(frame_path(m.frame_dir, 0));
    if (frame.height != expected_height || frame.width != expected_width)
      throw ValidationError(kModule, "video " + m.video_id + ": frames are " +
                                         std::to_string(frame.height) + "x" +
                                         std::to_string(frame.width) + ", expected " +
                                         std::to_string(expected_height) + "x" +
                                         std::to_string(expected_width));
  }
}

std::string_view to_string(Technique t) {
  switch (t) {
  case Technique::gamma_contrast: return "gamma_contrast";
  case Technique::gaussian_blur: return "gaussian_blur";
  case Technique::brightness: return "brightness";
  case Technique::saturation: return "saturation";
  case Technique::horizontal_flip: return "horizontal_flip";
  }
  return "gamma_contrast";
}

Technique parse_technique(std::string_view name) {
  for (auto t : {Technique::gamma_contrast, Technique::gaussian_blur, Technique::brightness,
                 Technique::saturation, Technique::horizontal_flip})
    if (to_string(t) == name) return t;
  throw ParseError("augment", "unknown augmentation technique '" + std::string(name) + "'");
}

json to_json(const AugmentationRecord &r) {
  json params;
  switch (r.technique) {
  case Technique::gamma_contrast: params["gamma"] = r.gamma; break;
  case Technique::gaussian_blur: params["blur_sigma"] = r.blur_sigma; break;
  case Technique::brightness: params["brightness_delta"] = r.brightness_delta; break;
  case Technique::saturation: params["saturation_factor"] = r.saturation_factor; break;
  case Technique::horizontal_flip: params["flip_applied"] = r.flip_applied; break;
  }
  return {{"technique", to_string(r.technique)},
          {"resolved_parameters", params},
          {"rng_seed", r.rng_seed},
          {"source_clip_id", r.source_clip_id},
          {"output_clip_id", r.output_clip_id}};
}

AugmentationRecord record_from_json(const json &j) {
  AugmentationRecord r;
  try {
    r.technique = parse_technique(j.at("technique").get<std::string>());
    const auto &p = j.at("resolved_parameters");
    r.gamma = p.value("gamma", 0.0);
    r.blur_sigma = p.value("blur_sigma", 0.0);
    r.brightness_delta = p.value("brightness_delta", 0.0);
    r.saturation_factor = p.value("saturation_factor", 0.0);
    r.flip_applied = p.value("flip_applied", false);
    r.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    r.source_clip_id = j.at("source_clip_id").get<std::string>();
    r.output_clip_id = j.at("output_clip_id").get<std::string>();
  } catch (const json::exception &e) {
    throw ParseError("augment", std::string("malformed augmentation record: ") + e.what());
  }
  return r;
}

std::string Clip::id() const {
  if (augmentation) return augmentation->output_clip_id;
  return video_id + "_" + std::to_string(start_frame) + "_" + std::to_string(length);
}

json to_json(const Clip &c) {
  json j = {{"video_id", c.video_id},
            {"label", to_string(c.label)},
            {"start_frame", c.start_frame},
            {"length", c.length}};
  if (c.augmentation) j["augmentation"] = to_json(*c.augmentation);
  return j;
}

Clip clip_from_json(const json &j) {
  Clip c;
  c.video_id = required<std::string>(j, "video_id", "clip.");
  c.label = parse_action_label(required<std::string>(j, "label", "clip."));
  c.start_frame = required<std::int64_t>(j, "start_frame", "clip.");
  c.length = required<std::int64_t>(j, "length", "clip.");
  if (j.contains("augmentation")) c.augmentation = record_from_json(j.at("augmentation"));
  return c;
}

std::vector<Clip> extract_clips(const VideoManifest &manifest, std::int64_t clip_len,
                                std::int64_t min_clip_frames, std::int64_t max_clip_frames) {
  if (min_clip_frames < 1 || clip_len < min_clip_frames || clip_len > max_clip_frames)
    throw PreconditionError(kModule, "clip_len " + std::to_string(clip_len) + " outside [" +
                                         std::to_string(min_clip_frames) + ", " +
                                         std::to_string(max_clip_frames) + "]");
  std::vector<Clip> clips;
  for (const auto &iv : manifest.intervals) {
    for (auto start = iv.start_frame; start + clip_len <= iv.end_frame; start += clip_len)
      clips.push_back(Clip{manifest.video_id, iv.label, start, clip_len, std::nullopt});
  }
  return clips;
}

std::string_view to_string(Split split) {
  switch (split) {
  case Split::train: return "train";
  case Split::validation: return "validation";
  case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  for (auto s : {Split::train, Split::validation, Split::test})
    if (to_string(s) == name) return s;
  throw ParseError(kModule, "unknown split '" + std::string(name) + "'");
}

std::vector<Clip> ClipDataset::select(Split split, bool target) const {
  std::vector<Clip> out;
  for (const auto &a : target ? target_clips : rest_clips)
    if (a.split == split) out.push_back(a.clip);
  return out;
}

std::size_t ClipDataset::count(Split split, bool target) const {
  const auto &pool = target ? target_clips : rest_clips;
  return static_cast<std::size_t>(
      std::count_if(pool.begin(), pool.end(), [&](const auto &a) { return a.split == split; }));
}

json to_json(const ClipDataset &d) {
  auto encode = [](const std::vector<AssignedClip> &pool) {
    json arr = json::array();
    for (const auto &a : pool) {
      auto j = to_json(a.clip);
      j["split"] = to_string(a.split);
      arr.push_back(std::move(j));
    }
    return arr;
  };
  return {{"target_action", to_string(d.target_action)},
          {"target_clips", encode(d.target_clips)},
          {"rest_clips", encode(d.rest_clips)}};
}

ClipDataset dataset_from_json(const json &j) {
  ClipDataset d;
  d.target_action = parse_action_label(required<std::string>(j, "target_action", "dataset."));
  auto decode = [](const json &arr) {
    std::vector<AssignedClip> pool;
    for (const auto &e : arr)
      pool.push_back({clip_from_json(e), parse_split(required<std::string>(e, "split", "clip."))});
    return pool;
  };
  d.target_clips = decode(required<json>(j, "target_clips", "dataset."));
  d.rest_clips = decode(required<json>(j, "rest_clips", "dataset."));
  return d;
}

ClipDataset build_one_vs_rest(const std::vector<Clip> &clips, ActionLabel target,
                              const std::set<std::string> &train_videos,
                              const std::set<std::string> &test_videos,
                              double validation_fraction, std::uint64_t rng_seed) {
  if (target == ActionLabel::other)
    throw PreconditionError(kModule, "target action must not be 'other'");
  for (const auto &v : train_videos)
    if (test_videos.count(v))
      throw PreconditionError(kModule, "video " + v + " is in both train and test sets");
  if (!(validation_fraction > 0.0 && validation_fraction < 0.5))
    throw PreconditionError(kModule, "validation_fraction must lie in (0, 0.5)");

  ClipDataset d;
  d.target_action = target;
  std::vector<Clip> train_target, train_rest;
  for (const auto &c : clips) {
    const bool is_target = c.label == target;
    if (test_videos.count(c.video_id)) {
      (is_target ? d.target_clips : d.rest_clips).push_back({c, Split::test});
    } else if (train_videos.count(c.video_id)) {
      (is_target ? train_target : train_rest).push_back(c);
    } else {
      throw ValidationError(kModule, "clip " + c.id() + " comes from video " + c.video_id +
                                         " which is in neither the train nor the test set");
    }
  }
  if (train_target.empty())
    throw ValidationError(kModule, "empty class: no clips of target action " + std::string(to_string(target)) +
                                       " in the training videos");
  if (train_rest.empty())
    throw ValidationError(kModule, "empty class: no rest clips in the training videos");

  std::mt19937_64 rng(rng_seed);
  auto stratify = [&](std::vector<Clip> pool, std::vector<AssignedClip> &out) {
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto n_val = static_cast<std::size_t>(
        std::llround(validation_fraction * static_cast<double>(pool.size())));
    for (std::size_t i = 0; i < pool.size(); ++i)
      out.push_back({std::move(pool[i]), i < n_val ? Split::validation : Split::train});
  };
  stratify(std::move(train_target), d.target_clips);
  stratify(std::move(train_rest), d.rest_clips);
  return d;
}

} // namespace lapact
