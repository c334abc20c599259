#include "lapact/fixture.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "lapact/error.hpp"
#include "lapact/seed.hpp"

namespace lapact::fixture {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kSpeed = 0.3; // pixels per frame

int square_side(int width) { return std::max(4, width / 2); }

double wrap(double v, double span) {
  v = std::fmod(v, span);
  return v < 0 ? v + span : v;
}

double overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

} // namespace

Motion motion_of(ActionLabel label) {
  const double d = 1.0 / std::sqrt(2.0);
  switch (label) {
  case ActionLabel::abdominal_access: return {1.0, 0.0};
  case ActionLabel::grasping_anatomy: return {-1.0, 0.0};
  case ActionLabel::knot_pushing: return {0.0, 1.0};
  case ActionLabel::needle_pulling: return {0.0, -1.0};
  case ActionLabel::needle_pushing: return {d, d};
  case ActionLabel::suction: return {-d, -d};
  case ActionLabel::other: return {0.0, 0.0};
  }
  return {};
}

Image render_frame(Motion motion, double x0, double y0, std::int64_t t, int height, int width,
                   double noise, std::uint64_t noise_seed) {
  const int side = square_side(width);
  const double span_x = width - side, span_y = height - side;
  const double x = wrap(x0 + motion.dx * kSpeed * static_cast<double>(t), span_x);
  const double y = wrap(y0 + motion.dy * kSpeed * static_cast<double>(t), span_y);
  // The square's colour encodes its position, so pooled per-frame features
  // still see where it is.
  const double fg[3] = {0.1 + 0.8 * x / std::max(1.0, span_x), 0.1 + 0.8 * y / std::max(1.0, span_y),
                        0.95};
  Image img(height, width);
  std::mt19937_64 rng(noise_seed);
  std::uniform_real_distribution<double> jitter(-noise, noise);
  for (int py = 0; py < height; ++py) {
    const double cov_y = overlap(py, py + 1, y, y + side);
    for (int px = 0; px < width; ++px) {
      const double cov = cov_y * overlap(px, px + 1, x, x + side);
      const double bg[3] = {0.15 + 0.6 * px / std::max(1, width - 1),
                            0.15 + 0.6 * py / std::max(1, height - 1), 0.35};
      for (int c = 0; c < Image::channels; ++c) {
        double v = bg[c] * (1.0 - cov) + fg[c] * cov;
        if (noise > 0) v += jitter(rng);
        img.at(py, px, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return img;
}

fs::path write_video(const VideoSpec &spec, const fs::path &dir, int height, int width,
                     std::uint64_t seed) {
  const auto frames_dir = dir / "frames";
  fs::create_directories(frames_dir);
  std::mt19937_64 rng(seed);
  const int side = square_side(width);
  std::uniform_real_distribution<double> px(0.0, width - side), py(0.0, height - side);

  VideoManifest m;
  m.video_id = spec.video_id;
  m.fps = 25.0;
  m.frame_dir = "frames";
  std::int64_t frame = 0;
  for (const auto &[label, length] : spec.intervals) {
    m.intervals.push_back({label, frame, frame + length});
    const Motion motion = motion_of(label);
    const double x0 = px(rng), y0 = py(rng);
    for (std::int64_t t = 0; t < length; ++t, ++frame)
      write_png(frame_path(frames_dir, frame),
                render_frame(motion, x0, y0, t, height, width, 0.02,
                             derive_seed(seed, static_cast<std::uint64_t>(frame))));
  }
  m.frame_count = frame;
  const auto manifest_path = dir / "manifest.json";
  std::ofstream os(manifest_path);
  if (!os) throw IoError("fixture", "cannot write " + manifest_path.string());
  os << to_json(m).dump(2) << '\n';
  return manifest_path;
}

Fixture generate(const FixtureSpec &spec, const fs::path &root) {
  if (spec.videos < 2) throw PreconditionError("fixture", "need at least two videos");
  Fixture fx;
  std::mt19937_64 rng(spec.seed);
  for (int v = 0; v < spec.videos; ++v) {
    VideoSpec vs;
    vs.video_id = "video" + std::to_string(v);
    std::vector<ActionLabel> labels(kAllLabels.begin(), kAllLabels.end());
    std::shuffle(labels.begin(), labels.end(), rng);
    for (auto l : labels) vs.intervals.emplace_back(l, spec.interval_frames);
    fx.manifests.push_back(write_video(vs, root / vs.video_id, spec.height, spec.width,
                                       derive_seed(spec.seed, static_cast<std::uint64_t>(v))));
    (v + 1 < spec.videos ? fx.train_videos : fx.test_videos).push_back(vs.video_id);
  }

  json manifests = json::array();
  for (const auto &m : fx.manifests) manifests.push_back(fs::relative(m, root).string());
  json actions = json::array();
  for (auto a : kTargetActions) actions.push_back(to_string(a));
  const json config = {
      {"seed", spec.seed},
      {"output_dir", "out"},
      {"actions", actions},
      {"dataset_model",
       {{"manifests", manifests},
        {"train_videos", fx.train_videos},
        {"test_videos", fx.test_videos},
        {"clip_len", 50},
        {"min_clip_frames", 50},
        {"max_clip_frames", 75},
        {"validation_fraction", 0.2},
        {"frame_height", spec.height},
        {"frame_width", spec.width}}},
      {"augment",
       {{"gamma", 0.5},
        {"blur_sigma", 10.0},
        {"brightness_delta", 0.2},
        {"saturation_factor", 1.5},
        {"flip_probability", 0.5}}},
      {"sampler", {{"sequence_length", 20}}},
      {"network",
       {{"backbone",
         {{"kind", "small_conv"},
          {"feature_dim", 16},
          {"stages", json::array({json::array({8, 3, 2}), json::array({16, 3, 2})})}}},
        {"heads", json::array({"fully_connected", "lstm"})},
        {"head",
         {{"rnn_units_1", 16},
          {"rnn_units_2", 8},
          {"inter_layer_dropout", 0.5},
          {"fc_units_1", 32},
          {"fc_dropout", 0.5},
          {"fc_units_2", 16}}}}},
      {"trainer",
       {{"learning_rate", 0.001},
        {"batch_size", 8},
        {"max_epochs", 30},
        {"early_stop_patience", 20}}},
      {"evaluator", {{"window_len", 50}, {"stride", 25}}}};
  fx.config = root / "config.json";
  std::ofstream os(fx.config);
  if (!os) throw IoError("fixture", "cannot write " + fx.config.string());
  os << config.dump(2) << '\n';
  return fx;
}

std::pair<ClipDataset, FrameStore> motion_pair_dataset(const fs::path &root, int per_class,
                                                       int val_per_class, std::int64_t clip_len,
                                                       int height, int width,
                                                       std::uint64_t seed) {
  ClipDataset d;
  d.target_action = ActionLabel::abdominal_access;
  FrameStore store;
  std::mt19937_64 rng(seed);
  const int side = square_side(width);
  const double travel = kSpeed * static_cast<double>(clip_len - 1);
  const double span = width - side;
  if (travel >= span) throw PreconditionError("fixture", "frames too narrow for the clip length");
  std::uniform_real_distribution<double> start(0.0, span - travel), ystart(0.0, height - side);

  const int total = per_class + val_per_class;
  for (int k = 0; k < 2 * total; ++k) {
    const bool target = k % 2 == 0;
    const auto label = target ? ActionLabel::abdominal_access : ActionLabel::grasping_anatomy;
    const Motion motion = motion_of(label);
    const double x0 = target ? start(rng) : span - start(rng);
    const double y0 = ystart(rng);
    const std::string id = "pair" + std::to_string(k);
    const auto dir = root / id;
    fs::create_directories(dir);
    for (std::int64_t t = 0; t < clip_len; ++t)
      write_png(frame_path(dir, t),
                render_frame(motion, x0, y0, t, height, width, 0.02,
                             derive_seed(seed, static_cast<std::uint64_t>(k * clip_len + t))));
    store.add_video(id, dir);
    const Clip clip{id, label, 0, clip_len, std::nullopt};
    const Split split = (k / 2) < per_class ? Split::train : Split::validation;
    (target ? d.target_clips : d.rest_clips).push_back({clip, split});
  }
  return {d, store};
}

} // namespace lapact::fixture
