#include "lapact/frame_store.hpp"

#include "lapact/error.hpp"

namespace lapact {

std::filesystem::path FrameStore::path_of(const Clip &clip, std::int64_t index) const {
  if (clip.augmentation) {
    if (augmented_root_.empty())
      throw IoError("frame_store", "no augmented frame store configured for clip " + clip.id());
    return frame_path(augmented_root_ / clip.id(), index);
  }
  const auto it = video_dirs_.find(clip.video_id);
  if (it == video_dirs_.end())
    throw IoError("frame_store", "unknown video " + clip.video_id + " for clip " + clip.id());
  return frame_path(it->second, clip.start_frame + index);
}

Image FrameStore::load(const Clip &clip, std::int64_t index) const {
  if (index < 0 || index >= clip.length)
    throw PreconditionError("frame_store", "frame index " + std::to_string(index) +
                                               " outside clip " + clip.id() + " of length " +
                                               std::to_string(clip.length));
  const auto path = path_of(clip, index);
  try {
    return read_png(path);
  } catch (const IoError &e) {
    throw IoError("frame_store",
                  "clip " + clip.id() + " frame " + std::to_string(index) + ": " + e.what());
  }
}

} // namespace lapact
