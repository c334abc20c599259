#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "lapact/dataset.hpp"
#include "lapact/frame_store.hpp"
#include "lapact/image.hpp"

namespace lapact::sampler {

enum class Mode { random, center };

struct SamplerConfig {
  int sequence_length = 20;
  Mode mode = Mode::random;
  std::uint64_t rng_seed = 0; // random mode only
};

// Model input: sequence_length frames in temporal order.
struct FrameSequence {
  std::vector<Image> frames;
  std::vector<std::int64_t> source_indices; // clip-relative, strictly increasing
  std::string clip_id;
};

// Segment i spans [floor(i*N/S), floor((i+1)*N/S)).
std::pair<std::int64_t, std::int64_t> segment_bounds(std::int64_t clip_length,
                                                     int sequence_length, int segment);

// One index per segment: uniform within the segment in random mode, the
// midpoint floor((lo + hi - 1) / 2) in center mode. Throws PreconditionError
// when the clip is shorter than the sequence.
std::vector<std::int64_t> sample_indices(std::int64_t clip_length, const SamplerConfig &config);

// Loads the indexed frames of `clip`. Throws PreconditionError for indices
// outside the clip, IoError naming the index for missing files.
FrameSequence load_sequence(const Clip &clip, const std::vector<std::int64_t> &indices,
                            const FrameStore &store);

} // namespace lapact::sampler
