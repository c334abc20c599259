#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "lapact/dataset.hpp"
#include "lapact/frame_store.hpp"
#include "lapact/image.hpp"

// Synthetic moving-square videos with known action intervals, so the whole
// pipeline runs without the clinical recordings. Each label moves a square
// (half the frame wide) in its own direction over a background whose red
// channel ramps with x and green channel with y; the square's red and green
// encode its x and y. `other` keeps the square still.
namespace lapact::fixture {

struct Motion {
  double dx = 0.0;
  double dy = 0.0;
};

Motion motion_of(ActionLabel label);

// Frame `t` of a square moving with `motion` from (x0, y0); positions wrap
// inside the frame. Noise amplitude 0 gives a noise-free frame.
Image render_frame(Motion motion, double x0, double y0, std::int64_t t, int height, int width,
                   double noise = 0.0, std::uint64_t noise_seed = 0);

struct VideoSpec {
  std::string video_id;
  std::vector<std::pair<ActionLabel, std::int64_t>> intervals; // label, frame count
};

// Writes frames/ and manifest.json under `dir`; returns the manifest path.
std::filesystem::path write_video(const VideoSpec &spec, const std::filesystem::path &dir,
                                  int height, int width, std::uint64_t seed);

struct FixtureSpec {
  int videos = 4; // the last one is the test video
  std::int64_t interval_frames = 100;
  int height = 32;
  int width = 32;
  std::uint64_t seed = 1;
};

struct Fixture {
  std::vector<std::filesystem::path> manifests;
  std::vector<std::string> train_videos;
  std::vector<std::string> test_videos;
  std::filesystem::path config; // ready-to-run experiment config
};

// Every video holds one interval per label (shuffled order). Also writes
// <root>/config.json with a desk-scale model and trainer setup.
Fixture generate(const FixtureSpec &spec, const std::filesystem::path &root);

// Two-class motion set for overfitting checks: `per_class` rightward
// (target, abdominal_access) and `per_class` leftward (rest) training clips
// plus `val_per_class` of each for validation, every clip `clip_len` frames.
std::pair<ClipDataset, FrameStore> motion_pair_dataset(const std::filesystem::path &root,
                                                       int per_class, int val_per_class,
                                                       std::int64_t clip_len, int height,
                                                       int width, std::uint64_t seed);

} // namespace lapact::fixture
