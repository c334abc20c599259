#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lapact/dataset.hpp"
#include "lapact/frame_store.hpp"
#include "lapact/network.hpp"
#include "lapact/trainer.hpp"

namespace lapact::evaluator {

// Positive class = target action.
struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts &) const = default;
};

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// 0/0 sub-expressions evaluate to 0. Throws PreconditionError when total = 0.
Metrics compute_metrics(const ConfusionCounts &counts);

// Accumulates (predicted, truth) pairs; 1 = target.
ConfusionCounts count_predictions(std::span<const int> predicted, std::span<const int> truth);

// Center-samples each clip, runs the model with dropout off and takes the
// argmax class.
ConfusionCounts evaluate_clips(const network::Model &model,
                               std::span<const trainer::LabeledClip> test_clips,
                               const FrameStore &store, int sequence_length = 20);

// Arithmetic mean of exactly six per-action accuracies.
double average_accuracy(std::span<const double> per_action);

struct TimelineEntry {
  std::int64_t start_frame = 0;
  std::int64_t end_frame = 0;
  double probability = 0.0; // P(target action)
};

struct ActionTimeline {
  std::string video_id;
  ActionLabel action;
  std::vector<TimelineEntry> windows;
};

// Window starts 0, stride, 2*stride, ... while start + window_len <= N.
std::vector<std::int64_t> window_starts(std::int64_t frame_count, std::int64_t window_len,
                                        std::int64_t stride);

std::vector<ActionTimeline>
sliding_window_infer(const VideoManifest &video,
                     const std::map<ActionLabel, const network::Model *> &models,
                     std::int64_t window_len = 50, std::int64_t stride = 25,
                     int sequence_length = 20);

void write_timelines_csv(const std::vector<ActionTimeline> &timelines,
                         const std::filesystem::path &path, bool append = false);

// One evaluated (backbone, head, action) cell.
struct ReportRow {
  std::string backbone;
  std::string head;
  ActionLabel action;
  Metrics metrics;
};

struct MetricsReport {
  std::vector<ReportRow> rows;
};

void write_metrics_csv(const MetricsReport &report, const std::filesystem::path &path);
MetricsReport read_metrics_csv(const std::filesystem::path &path);

struct RenderedReport {
  std::string table_csv;   // backbone,head,<actions...>,average (percent)
  std::string table_text;  // aligned, best per column marked '*'
  std::string f1_csv;      // per-action F1 bar data
  std::string metrics_csv; // long-form rows plus average rows
};

// Groups rows by backbone, orders heads (Fully Connected, LSTM, GRU, BiLSTM,
// BiGRU) and adds an Average column. Throws ValidationError when rows are
// empty or architectures cover different action sets.
RenderedReport render_report(const MetricsReport &report);
void write_report(const RenderedReport &rendered, const std::filesystem::path &dir);

} // namespace lapact::evaluator
