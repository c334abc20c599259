#include "lapact/augment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "lapact/error.hpp"
#include "lapact/seed.hpp"

namespace lapact::augment {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char *kModule = "augment";

template <typename Fn> Frames map_pixels(std::span<const Image> frames, Fn fn) {
  Frames out(frames.begin(), frames.end());
  for (auto &f : out)
    for (auto &v : f.data) v = fn(v);
  return out;
}

// Mirror index into [0, n) without repeating the edge sample; periodic with
// period 2(n-1) so radii larger than the image are handled.
int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Image blur_one(const Image &in, const std::vector<double> &kernel) {
  const int radius = static_cast<int>(kernel.size() / 2);
  Image tmp(in.height, in.width), out(in.height, in.width);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x)
      for (int c = 0; c < Image::channels; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k)
          acc += kernel[k + radius] * in.at(y, reflect(x + k, in.width), c);
        tmp.at(y, x, c) = acc;
      }
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x)
      for (int c = 0; c < Image::channels; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k)
          acc += kernel[k + radius] * tmp.at(reflect(y + k, in.height), x, c);
        out.at(y, x, c) = std::clamp(acc, 0.0, 1.0);
      }
  return out;
}

} // namespace

void AugmentationSpec::validate() const {
  if (!(gamma > 0)) throw PreconditionError(kModule, "gamma must be > 0");
  if (!(blur_sigma > 0)) throw PreconditionError(kModule, "blur_sigma must be > 0");
  if (!(flip_probability >= 0 && flip_probability <= 1))
    throw PreconditionError(kModule, "flip_probability must lie in [0, 1]");
  if (!(saturation_factor >= 0)) throw PreconditionError(kModule, "saturation_factor must be >= 0");
  if (!(std::abs(brightness_delta) <= 1))
    throw PreconditionError(kModule, "|brightness_delta| must be <= 1");
}

json to_json(const AugmentationSpec &s) {
  return {{"gamma", s.gamma},
          {"blur_sigma", s.blur_sigma},
          {"brightness_delta", s.brightness_delta},
          {"saturation_factor", s.saturation_factor},
          {"flip_probability", s.flip_probability}};
}

AugmentationSpec spec_from_json(const json &j) {
  AugmentationSpec s;
  s.gamma = j.value("gamma", s.gamma);
  s.blur_sigma = j.value("blur_sigma", s.blur_sigma);
  s.brightness_delta = j.value("brightness_delta", s.brightness_delta);
  s.saturation_factor = j.value("saturation_factor", s.saturation_factor);
  s.flip_probability = j.value("flip_probability", s.flip_probability);
  s.validate();
  return s;
}

Frames apply_gamma(std::span<const Image> frames, double gamma) {
  if (!(gamma > 0)) throw PreconditionError(kModule, "gamma must be > 0");
  return map_pixels(frames, [gamma](double v) { return std::pow(v, gamma); });
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0)) throw PreconditionError(kModule, "blur sigma must be > 0");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += k[i + radius];
  }
  for (auto &w : k) w /= sum;
  return k;
}

Frames apply_gaussian_blur(std::span<const Image> frames, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  Frames out;
  out.reserve(frames.size());
  for (const auto &f : frames) out.push_back(blur_one(f, kernel));
  return out;
}

Frames apply_brightness(std::span<const Image> frames, double delta) {
  if (!(std::abs(delta) <= 1)) throw PreconditionError(kModule, "|brightness delta| must be <= 1");
  return map_pixels(frames, [delta](double v) { return std::clamp(v + delta, 0.0, 1.0); });
}

Frames apply_saturation(std::span<const Image> frames, double factor) {
  if (!(factor >= 0)) throw PreconditionError(kModule, "saturation factor must be >= 0");
  Frames out(frames.begin(), frames.end());
  for (auto &f : out) {
    for (std::size_t p = 0; p < f.data.size(); p += Image::channels) {
      double *px = &f.data[p];
      // The weights sum to 1, so an achromatic pixel is its own luma; taking
      // it directly keeps gray pixels bit-exact.
      const bool achromatic = px[0] == px[1] && px[1] == px[2];
      const double gray = achromatic ? px[0] : 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
      for (int c = 0; c < Image::channels; ++c)
        px[c] = std::clamp(gray + factor * (px[c] - gray), 0.0, 1.0);
    }
  }
  return out;
}

Frames apply_horizontal_flip(std::span<const Image> frames) {
  Frames out(frames.begin(), frames.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto &src = frames[i];
    auto &dst = out[i];
    for (int y = 0; y < src.height; ++y)
      for (int x = 0; x < src.width; ++x)
        for (int c = 0; c < Image::channels; ++c)
          dst.at(y, x, c) = src.at(y, src.width - 1 - x, c);
  }
  return out;
}

Frames apply_record(std::span<const Image> frames, const AugmentationRecord &r) {
  switch (r.technique) {
  case Technique::gamma_contrast: return apply_gamma(frames, r.gamma);
  case Technique::gaussian_blur: return apply_gaussian_blur(frames, r.blur_sigma);
  case Technique::brightness: return apply_brightness(frames, r.brightness_delta);
  case Technique::saturation: return apply_saturation(frames, r.saturation_factor);
  case Technique::horizontal_flip:
    return r.flip_applied ? apply_horizontal_flip(frames) : Frames(frames.begin(), frames.end());
  }
  return Frames(frames.begin(), frames.end());
}

BalancePlan plan_balance(std::span<const Clip> target_clips, std::size_t rest_count,
                         const AugmentationSpec &spec, std::uint64_t rng_seed) {
  spec.validate();
  if (target_clips.empty()) throw PreconditionError(kModule, "no target clips to augment");
  if (rest_count < target_clips.size())
    throw PreconditionError(kModule, "inverted imbalance: " + std::to_string(target_clips.size()) +
                                         " target clips exceed " + std::to_string(rest_count) +
                                         " rest clips; refusing to augment the majority class");
  const std::size_t n = target_clips.size();
  const std::size_t deficit = rest_count - n;
  BalancePlan plan;
  plan.entries.reserve(deficit);
  for (std::size_t k = 0; k < deficit; ++k) {
    const std::size_t source = k % n;
    const std::size_t round = k / n;
    AugmentationRecord r;
    r.technique = kTechniqueOrder[(source + round) % 5];
    r.rng_seed = derive_seed(rng_seed, k);
    std::mt19937_64 rng(r.rng_seed);
    switch (r.technique) {
    case Technique::gamma_contrast: r.gamma = spec.gamma; break;
    case Technique::gaussian_blur: r.blur_sigma = spec.blur_sigma; break;
    case Technique::brightness:
      r.brightness_delta = std::bernoulli_distribution(0.5)(rng) ? std::abs(spec.brightness_delta)
                                                                 : -std::abs(spec.brightness_delta);
      break;
    case Technique::saturation: r.saturation_factor = spec.saturation_factor; break;
    case Technique::horizontal_flip:
      r.flip_applied = std::bernoulli_distribution(spec.flip_probability)(rng);
      break;
    }
    const auto &clip = target_clips[source];
    r.source_clip_id = clip.id();
    r.output_clip_id = clip.id() + "_aug" + std::to_string(k);
    plan.entries.push_back({clip, std::move(r)});
  }
  plan.target_count = n + deficit;
  return plan;
}

std::vector<Clip> materialize(const BalancePlan &plan, const FrameStore &source_store,
                              const fs::path &output_root) {
  std::vector<Clip> out;
  out.reserve(plan.entries.size());
  for (const auto &entry : plan.entries) {
    Frames frames;
    frames.reserve(static_cast<std::size_t>(entry.source.length));
    for (std::int64_t i = 0; i < entry.source.length; ++i)
      frames.push_back(source_store.load(entry.source, i));
    const auto augmented = apply_record(frames, entry.record);
    const auto dir = output_root / entry.record.output_clip_id;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
      throw IoError(kModule, "cannot create " + dir.string() + " for clip " +
                                 entry.record.output_clip_id + ": " + ec.message());
    for (std::size_t i = 0; i < augmented.size(); ++i) {
      try {
        write_png(frame_path(dir, static_cast<std::int64_t>(i)), augmented[i]);
      } catch (const IoError &e) {
        throw IoError(kModule, "clip " + entry.record.output_clip_id + ": " + e.what());
      }
    }
    Clip clip = entry.source;
    clip.augmentation = entry.record;
    out.push_back(std::move(clip));
  }
  return out;
}

void write_plan_jsonl(const BalancePlan &plan, const fs::path &path) {
  std::ofstream os(path);
  if (!os) throw IoError(kModule, "cannot write plan " + path.string());
  for (const auto &e : plan.entries) os << to_json(e.record).dump() << '\n';
}

std::vector<AugmentationRecord> read_plan_jsonl(const fs::path &path) {
  std::ifstream in(path);
  if (!in) throw IoError(kModule, "cannot read plan " + path.string());
  std::vector<AugmentationRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(json::parse(line)));
    } catch (const json::parse_error &e) {
      throw ParseError(kModule, "malformed plan line in " + path.string() + ": " + e.what());
    }
  }
  return records;
}

} // namespace lapact::augment
