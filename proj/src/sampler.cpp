#include "lapact/sampler.hpp"

#include <random>

#include "lapact/error.hpp"

namespace lapact::sampler {

std::pair<std::int64_t, std::int64_t> segment_bounds(std::int64_t n, int s, int i) {
  return {i * n / s, (i + 1) * n / s};
}

std::vector<std::int64_t> sample_indices(std::int64_t clip_length, const SamplerConfig &config) {
  const int s = config.sequence_length;
  if (s < 1) throw PreconditionError("sampler", "sequence_length must be >= 1");
  if (clip_length < s)
    throw PreconditionError("sampler", "clip too short: " + std::to_string(clip_length) +
                                           " frames < sequence length " + std::to_string(s));
  std::vector<std::int64_t> indices(static_cast<std::size_t>(s));
  std::mt19937_64 rng(config.rng_seed);
  for (int i = 0; i < s; ++i) {
    const auto [lo, hi] = segment_bounds(clip_length, s, i);
    if (config.mode == Mode::center) {
      indices[i] = (lo + hi - 1) / 2;
    } else {
      indices[i] = std::uniform_int_distribution<std::int64_t>(lo, hi - 1)(rng);
    }
  }
  return indices;
}

FrameSequence load_sequence(const Clip &clip, const std::vector<std::int64_t> &indices,
                            const FrameStore &store) {
  FrameSequence seq;
  seq.clip_id = clip.id();
  seq.source_indices = indices;
  seq.frames.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (i > 0 && indices[i] <= indices[i - 1])
      throw PreconditionError("sampler", "indices must be strictly increasing");
    seq.frames.push_back(store.load(clip, indices[i]));
  }
  return seq;
}

} // namespace lapact::sampler
