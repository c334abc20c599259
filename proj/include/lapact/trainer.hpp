#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lapact/dataset.hpp"
#include "lapact/frame_store.hpp"
#include "lapact/network.hpp"

namespace lapact::trainer {

struct TrainConfig {
  double learning_rate = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int batch_size = 8;
  int max_epochs = 100;
  int early_stop_patience = 20;
  int sequence_length = 20;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig &config);
TrainConfig train_config_from_json(const nlohmann::json &j);

inline constexpr double kProbabilityClamp = 1e-7;

// -ln(p[true_class]) with p clamped to [1e-7, 1 - 1e-7].
double bce_loss(const Eigen::VectorXd &probabilities, int true_class);
// dLoss/dProbabilities; zero where the clamp is active.
Eigen::VectorXd bce_gradient(const Eigen::VectorXd &probabilities, int true_class);

struct AdamMoments {
  network::Parameters first;
  network::Parameters second;
};

AdamMoments zero_moments(const network::Parameters &like);

// Bias-corrected Adam update at step t >= 1.
void adam_step(network::Parameters &params, const network::Parameters &grads,
               AdamMoments &moments, std::int64_t t, const TrainConfig &config);

// Tracks validation loss; improvement means strictly lower than the best so
// far.
class EarlyStopping {
public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  // Returns true when training should stop after this epoch.
  bool update(int epoch, double val_loss);
  bool last_improved() const { return last_improved_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }
  int epochs_since_improvement() const { return since_; }

private:
  int patience_;
  int best_epoch_ = 0;
  double best_loss_ = 0.0;
  int since_ = 0;
  bool has_best_ = false;
  bool last_improved_ = false;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  std::size_t target_seen = 0;
  std::size_t rest_seen = 0;
};

struct TrainResult {
  network::Model best_model;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<EpochRecord> history;
};

struct LabeledClip {
  Clip clip;
  int label = 0; // 1 = target action
};

std::vector<LabeledClip> labeled_split(const ClipDataset &dataset, Split split);

struct SplitScore {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Center-sampled, dropout-off loss/accuracy over clips.
SplitScore score_clips(const network::Model &model, std::span<const LabeledClip> clips,
                       const FrameStore &store, int sequence_length);

// Trains one binary classifier. Requires an exactly balanced train split and a
// non-empty validation split; returns the best-validation-loss parameters.
TrainResult train_binary(const ClipDataset &dataset, const FrameStore &store,
                         const network::ModelConfig &model_config, const TrainConfig &config);

void write_history_csv(const std::vector<EpochRecord> &history, const std::filesystem::path &path);

struct ActionRun {
  ActionLabel action;
  std::filesystem::path checkpoint;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::string error; // non-empty when this action failed
};

// Trains each action independently with per-action derived seeds, writing
// <output_dir>/<action>/{checkpoint.bin,checkpoint.json,history.csv} and
// <output_dir>/summary.json. A failing action is recorded and skipped.
std::vector<ActionRun> train_all(std::span<const ActionLabel> actions,
                                 const std::function<ClipDataset(ActionLabel)> &make_dataset,
                                 const FrameStore &store, const network::ModelConfig &model_config,
                                 const TrainConfig &config, const std::filesystem::path &output_dir);

} // namespace lapact::trainer
