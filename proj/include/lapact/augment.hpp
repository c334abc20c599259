#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lapact/dataset.hpp"
#include "lapact/frame_store.hpp"
#include "lapact/image.hpp"

namespace lapact::augment {

// Offline augmentation settings. Defaults are the training-set values:
// gamma 0.5, blur sigma 10, brightness +/-0.2, saturation 1.5, flip p=0.5.
struct AugmentationSpec {
  double gamma = 0.5;
  double blur_sigma = 10.0;
  double brightness_delta = 0.2; // magnitude; the sign is drawn per clip
  double saturation_factor = 1.5;
  double flip_probability = 0.5;

  void validate() const;
};

nlohmann::json to_json(const AugmentationSpec &spec);
AugmentationSpec spec_from_json(const nlohmann::json &j);

// Table order used when cycling techniques.
inline constexpr Technique kTechniqueOrder[] = {
    Technique::gamma_contrast, Technique::gaussian_blur, Technique::brightness,
    Technique::saturation, Technique::horizontal_flip};

using Frames = std::vector<Image>;

// out = in^gamma. Throws PreconditionError for gamma <= 0.
Frames apply_gamma(std::span<const Image> frames, double gamma);

// Normalized 1-D Gaussian of radius ceil(3*sigma).
std::vector<double> gaussian_kernel(double sigma);
// Separable blur (horizontal then vertical) with reflect padding
// (d c b | a b c d | c b a).
Frames apply_gaussian_blur(std::span<const Image> frames, double sigma);

// out = clamp(in + delta, 0, 1).
Frames apply_brightness(std::span<const Image> frames, double delta);

// BT.601 luma; out_c = clamp(gray + factor * (in_c - gray), 0, 1).
Frames apply_saturation(std::span<const Image> frames, double factor);

// Unconditional column reversal.
Frames apply_horizontal_flip(std::span<const Image> frames);

// Applies the record's resolved parameters to every frame.
Frames apply_record(std::span<const Image> frames, const AugmentationRecord &record);

struct PlanEntry {
  Clip source;
  AugmentationRecord record;
};

struct BalancePlan {
  std::vector<PlanEntry> entries;
  std::size_t target_count = 0; // original targets + entries
};

// Produces rest_count - |target_clips| entries. Sources are taken
// round-robin; the technique for the r-th reuse of source s is
// kTechniqueOrder[(s + r) % 5], so consecutive entries and repeated uses of one
// source both walk the table order. Brightness sign and flip are drawn from a
// per-entry generator whose seed is stored in the record.
BalancePlan plan_balance(std::span<const Clip> target_clips, std::size_t rest_count,
                         const AugmentationSpec &spec, std::uint64_t rng_seed);

// Writes augmented frames to <output_root>/<clip_id>/frame_%06d.png and returns
// the new clip records. Throws IoError naming the clip on read/write failure.
std::vector<Clip> materialize(const BalancePlan &plan, const FrameStore &source_store,
                              const std::filesystem::path &output_root);

// One AugmentationRecord per line.
void write_plan_jsonl(const BalancePlan &plan, const std::filesystem::path &path);
std::vector<AugmentationRecord> read_plan_jsonl(const std::filesystem::path &path);

} // namespace lapact::augment
