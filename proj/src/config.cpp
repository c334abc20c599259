#include "lapact/config.hpp"

#include <fstream>

#include "lapact/error.hpp"
#include "lapact/seed.hpp"

namespace lapact {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char *kModule = "config";

[[noreturn]] void fail(const std::string &field, const std::string &what) {
  throw ConfigError(kModule, field + ": " + what);
}

const json &section(const json &j, const char *name) {
  static const json empty = json::object();
  if (!j.contains(name)) return empty;
  if (!j.at(name).is_object()) fail(name, "must be an object");
  return j.at(name);
}

template <typename T> T field(const json &obj, const std::string &path, const char *key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception &) {
    fail(path + "." + key, "has the wrong type");
  }
}

fs::path resolve(const fs::path &base, const fs::path &p) {
  return p.is_relative() ? (base / p).lexically_normal() : p;
}

std::vector<std::string> string_list(const json &obj, const std::string &path, const char *key) {
  if (!obj.contains(key)) return {};
  if (!obj.at(key).is_array()) fail(path + "." + key, "must be an array");
  std::vector<std::string> out;
  for (const auto &v : obj.at(key)) {
    if (!v.is_string()) fail(path + "." + key, "entries must be strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

} // namespace

std::uint64_t ExperimentConfig::stage_seed(std::string_view stage) const {
  return derive_seed(seed, fnv1a(stage));
}

json load_config_json(const fs::path &path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(kModule, "--config: cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error &e) {
    throw ConfigError(kModule, "--config: malformed JSON in " + path.string() + ": " + e.what());
  }
}

void apply_override(json &config, const std::string &assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError(kModule, "--set: expected key.path=value, got '" + assignment + "'");
  const auto key = assignment.substr(0, eq);
  const auto raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error &) {
    value = raw;
  }
  json *node = &config;
  std::size_t begin = 0;
  while (true) {
    const auto dot = key.find('.', begin);
    const auto part = key.substr(begin, dot == std::string::npos ? std::string::npos : dot - begin);
    if (part.empty()) throw ConfigError(kModule, "--set: empty path segment in '" + key + "'");
    if (!node->is_object()) throw ConfigError(kModule, "--set: '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    begin = dot + 1;
  }
}

ExperimentConfig parse_experiment_config(const json &j, const fs::path &base_dir) {
  if (!j.is_object()) fail("<root>", "config must be a JSON object");
  ExperimentConfig c;
  c.resolved = j;
  if (!j.contains("seed")) fail("seed", "required (no implicit entropy)");
  c.seed = field<std::uint64_t>(j, "", "seed", 0);
  c.output_dir = resolve(base_dir, field<std::string>(j, "", "output_dir", "out"));

  const auto actions = string_list(j, "", "actions");
  if (actions.empty()) fail("actions", "must list at least one target action");
  for (const auto &a : actions) {
    try {
      c.actions.push_back(parse_action_label(a));
    } catch (const Error &) {
      fail("actions", "unknown action '" + a + "'");
    }
    if (c.actions.back() == ActionLabel::other) fail("actions", "'other' cannot be a target");
  }

  const auto &ds = section(j, "dataset_model");
  for (const auto &m : string_list(ds, "dataset_model", "manifests"))
    c.dataset.manifests.push_back(resolve(base_dir, m));
  if (c.dataset.manifests.empty()) fail("dataset_model.manifests", "must list at least one manifest");
  for (const auto &v : string_list(ds, "dataset_model", "train_videos")) c.dataset.train_videos.insert(v);
  for (const auto &v : string_list(ds, "dataset_model", "test_videos")) c.dataset.test_videos.insert(v);
  if (c.dataset.train_videos.empty()) fail("dataset_model.train_videos", "must not be empty");
  for (const auto &v : c.dataset.train_videos)
    if (c.dataset.test_videos.count(v))
      fail("dataset_model.test_videos", "video " + v + " is also a training video");
  c.dataset.bounds.clip_len = field<std::int64_t>(ds, "dataset_model", "clip_len", 50);
  c.dataset.bounds.min_clip_frames = field<std::int64_t>(ds, "dataset_model", "min_clip_frames", 50);
  c.dataset.bounds.max_clip_frames = field<std::int64_t>(ds, "dataset_model", "max_clip_frames", 75);
  const auto &b = c.dataset.bounds;
  if (b.min_clip_frames < 1 || b.clip_len < b.min_clip_frames || b.clip_len > b.max_clip_frames)
    fail("dataset_model.clip_len", "must lie in [min_clip_frames, max_clip_frames]");
  c.dataset.validation_fraction = field<double>(ds, "dataset_model", "validation_fraction", 0.2);
  if (!(c.dataset.validation_fraction > 0 && c.dataset.validation_fraction < 0.5))
    fail("dataset_model.validation_fraction", "must lie in (0, 0.5)");
  c.dataset.frame_height = field<int>(ds, "dataset_model", "frame_height", 224);
  c.dataset.frame_width = field<int>(ds, "dataset_model", "frame_width", 224);
  if (c.dataset.frame_height < 1 || c.dataset.frame_width < 1)
    fail("dataset_model.frame_height", "frame geometry must be positive");

  try {
    c.augment = augment::spec_from_json(section(j, "augment"));
  } catch (const Error &e) {
    fail("augment", e.what());
  }

  c.sequence_length = field<int>(section(j, "sampler"), "sampler", "sequence_length", 20);
  if (c.sequence_length < 1) fail("sampler.sequence_length", "must be >= 1");
  if (c.sequence_length > c.dataset.bounds.clip_len)
    fail("sampler.sequence_length", "exceeds dataset_model.clip_len");

  const auto &net = section(j, "network");
  json model_json = {{"backbone", section(net, "backbone")}, {"head", section(net, "head")}};
  try {
    c.model = network::model_config_from_json(model_json);
  } catch (const Error &e) {
    fail("network", e.what());
  }
  c.model.init_seed = c.stage_seed("init");
  for (const auto &h : string_list(net, "network", "heads")) {
    try {
      c.heads.push_back(network::parse_head_kind(h));
    } catch (const Error &) {
      fail("network.heads", "unknown head '" + h + "'");
    }
  }
  if (c.heads.empty()) c.heads.push_back(c.model.head.kind);

  try {
    c.trainer = trainer::train_config_from_json(section(j, "trainer"));
  } catch (const Error &e) {
    fail("trainer", e.what());
  }
  c.trainer.sequence_length = c.sequence_length;
  c.trainer.rng_seed = c.stage_seed("train");

  const auto &ev = section(j, "evaluator");
  c.window_len = field<std::int64_t>(ev, "evaluator", "window_len", 50);
  c.stride = field<std::int64_t>(ev, "evaluator", "stride", 25);
  if (c.window_len < c.sequence_length) fail("evaluator.window_len", "shorter than the sequence length");
  if (c.stride < 1) fail("evaluator.stride", "must be >= 1");
  c.infer_videos = string_list(ev, "evaluator", "videos");
  if (c.infer_videos.empty())
    c.infer_videos.assign(c.dataset.test_videos.begin(), c.dataset.test_videos.end());

  for (const auto &p : string_list(section(j, "report"), "report", "inputs"))
    c.report_inputs.push_back(resolve(base_dir, p));
  return c;
}

std::vector<VideoManifest> load_manifests(const ExperimentConfig &c, bool check_frames) {
  std::vector<VideoManifest> out;
  for (std::size_t i = 0; i < c.dataset.manifests.size(); ++i) {
    const auto &path = c.dataset.manifests[i];
    const std::string field_path = "dataset_model.manifests[" + std::to_string(i) + "]";
    if (!fs::exists(path)) fail(field_path, "file not found: " + path.string());
    try {
      auto m = load_manifest(path);
      if (check_frames) validate_frame_store(m, c.dataset.frame_height, c.dataset.frame_width);
      out.push_back(std::move(m));
    } catch (const IoError &e) {
      fail("dataset_model.frame_dir", std::string(e.what()) + " (from " + path.string() + ")");
    } catch (const ValidationError &e) {
      fail(field_path, e.what());
    } catch (const ParseError &e) {
      fail(field_path, e.what());
    }
  }
  std::set<std::string> known;
  for (const auto &m : out)
    if (!known.insert(m.video_id).second) fail("dataset_model.manifests", "duplicate video " + m.video_id);
  for (const auto &v : c.dataset.train_videos)
    if (!known.count(v)) fail("dataset_model.train_videos", "no manifest for video " + v);
  for (const auto &v : c.dataset.test_videos)
    if (!known.count(v)) fail("dataset_model.test_videos", "no manifest for video " + v);
  return out;
}

} // namespace lapact
