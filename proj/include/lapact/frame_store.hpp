#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "lapact/dataset.hpp"
#include "lapact/image.hpp"

namespace lapact {

// Resolves clip-relative frame indices to files. Original clips read from
// their video's frame_dir at start_frame + index; augmented clips read from
// <augmented_root>/<clip_id>/frame_%06d.png at index.
class FrameStore {
public:
  FrameStore() = default;
  explicit FrameStore(std::map<std::string, std::filesystem::path> video_dirs,
                      std::filesystem::path augmented_root = {})
      : video_dirs_(std::move(video_dirs)), augmented_root_(std::move(augmented_root)) {}

  void add_video(const std::string &video_id, std::filesystem::path frame_dir) {
    video_dirs_[video_id] = std::move(frame_dir);
  }
  void set_augmented_root(std::filesystem::path root) { augmented_root_ = std::move(root); }
  const std::filesystem::path &augmented_root() const { return augmented_root_; }

  std::filesystem::path path_of(const Clip &clip, std::int64_t index) const;
  // Throws PreconditionError for an index outside [0, clip.length) and
  // IoError naming clip and index for unreadable files.
  Image load(const Clip &clip, std::int64_t index) const;

private:
  std::map<std::string, std::filesystem::path> video_dirs_;
  std::filesystem::path augmented_root_;
};

} // namespace lapact
