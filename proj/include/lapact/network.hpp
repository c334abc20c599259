#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lapact/image.hpp"
#include "lapact/recurrent.hpp"
#include "lapact/sampler.hpp"
#include "lapact/tensor.hpp"

namespace lapact::network {

enum class BackboneKind { small_conv, vgg16, resnet50, efficientnet_b2, densenet121 };

struct ConvStage {
  int channels = 16;
  int kernel = 3;
  int downsample = 2; // stride
};

struct BackboneConfig {
  BackboneKind kind = BackboneKind::small_conv;
  int feature_dim = 128;
  std::vector<ConvStage> stages = {{16, 3, 2}, {32, 3, 2}, {64, 3, 2}, {128, 3, 2}};
  // Required frame geometry; 0 accepts any size.
  int input_height = 0;
  int input_width = 0;
};

enum class HeadKind { fully_connected, lstm, gru, bilstm, bigru };
enum class Readout { last, mean };

struct HeadConfig {
  HeadKind kind = HeadKind::bilstm;
  int rnn_units_1 = 128; // per direction
  int rnn_units_2 = 64;
  double inter_layer_dropout = 0.5;
  int fc_units_1 = 256;
  double fc_dropout = 0.5;
  int fc_units_2 = 64;
  int num_classes = 2;
  Readout readout = Readout::last;
};

struct ModelConfig {
  BackboneConfig backbone;
  HeadConfig head;
  std::uint64_t init_seed = 0;
};

std::string_view to_string(BackboneKind kind);
std::string_view to_string(HeadKind kind);
BackboneKind parse_backbone_kind(std::string_view name);
HeadKind parse_head_kind(std::string_view name);
// "Fully Connected", "LSTM", ... as used in report tables.
std::string display_name(HeadKind kind);
std::string display_name(BackboneKind kind);
bool is_recurrent(HeadKind kind);
bool is_bidirectional(HeadKind kind);

void validate(const ModelConfig &config);
nlohmann::json to_json(const ModelConfig &config);
ModelConfig model_config_from_json(const nlohmann::json &j);

// Frozen feature extractor for the pretrained backbones, which are not
// bundled. Receives frames, returns T x feature_dim.
class FeatureExtractor {
public:
  virtual ~FeatureExtractor() = default;
  virtual Eigen::MatrixXd extract(std::span<const Image> frames) const = 0;
};

// Activations recorded by a forward pass for backward().
struct ForwardTrace {
  const void *owner = nullptr;
  std::uint64_t generation = 0;
  bool training = false;
  int frames = 0;

  struct StageCache {
    int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
    Eigen::MatrixXd cols;   // im2col patches
    Eigen::MatrixXd output; // post-ReLU, channels x (T*out_h*out_w)
  };
  std::vector<StageCache> stages;
  Eigen::MatrixXd features; // D x T

  // Recurrent head.
  std::vector<CellTrace> layer1, layer2; // one per direction
  Eigen::MatrixXd layer1_out, dropout_mask, layer2_in, layer2_out;
  Eigen::VectorXd readout;

  // Static head (columns are frames).
  Eigen::MatrixXd fc1_out, fc_mask, fc1_dropped, fc2_out, frame_probs;
  Eigen::VectorXd mean_probs;

  Eigen::VectorXd probabilities;
};

// CNN backbone + average pooling + static or stacked-recurrent head.
class Model {
public:
  // Initializes parameters from config.init_seed. Named pretrained backbones
  // need `external`; without it they raise ConfigError (unavailable backbone).
  explicit Model(ModelConfig config, std::shared_ptr<const FeatureExtractor> external = nullptr);

  const ModelConfig &config() const { return config_; }
  const Parameters &parameters() const { return params_; }
  // Mutable access invalidates outstanding traces.
  Parameters &mutable_parameters() {
    ++generation_;
    return params_;
  }
  void set_parameters(Parameters params);

  // Per-frame features, T x D.
  Eigen::MatrixXd backbone_forward(std::span<const Image> frames) const;

  // features: T x D. Returns the 2-class probability vector.
  Eigen::VectorXd recurrent_head_forward(const Eigen::MatrixXd &features, bool training,
                                         std::uint64_t dropout_seed = 0,
                                         ForwardTrace *trace = nullptr) const;
  // Single frame feature (D) -> probabilities.
  Eigen::VectorXd static_head_forward(const Eigen::VectorXd &feature, bool training,
                                      std::uint64_t dropout_seed = 0) const;

  // Full clip forward. The static head averages per-frame probabilities over
  // the sequence and renormalizes. Dropout masks are drawn from dropout_seed,
  // so a fixed seed reproduces the same masks.
  Eigen::VectorXd forward(std::span<const Image> frames, bool training,
                          std::uint64_t dropout_seed = 0, ForwardTrace *trace = nullptr) const;
  Eigen::VectorXd forward(const sampler::FrameSequence &sequence, bool training,
                          std::uint64_t dropout_seed = 0, ForwardTrace *trace = nullptr) const {
    return forward(sequence.frames, training, dropout_seed, trace);
  }

  // Gradients of every parameter given dLoss/dProbabilities. Throws
  // PreconditionError (stale activation) when the trace belongs to another
  // model or predates a parameter update.
  Parameters backward(const ForwardTrace &trace, const Eigen::VectorXd &loss_grad) const;

private:
  Eigen::MatrixXd conv_features(std::span<const Image> frames, ForwardTrace *trace) const;
  Eigen::VectorXd head_forward(const Eigen::MatrixXd &features_dt, bool training,
                               std::uint64_t dropout_seed, ForwardTrace *trace) const;
  CellWeights cell(const std::string &prefix) const;

  ModelConfig config_;
  Parameters params_;
  std::shared_ptr<const FeatureExtractor> external_;
  std::uint64_t generation_ = 0;
};

// Checkpoint: binary container of named float64 tensors plus the model
// config as JSON next to it (same stem, .json extension).
void save_checkpoint(const Model &model, const std::filesystem::path &path);
// Throws ConfigError when the stored tensors do not match the layout implied
// by `config` (incompatible checkpoint).
Model load_checkpoint(const std::filesystem::path &path);
Parameters read_parameters(const std::filesystem::path &path);
void write_parameters(const Parameters &params, const std::filesystem::path &path);

} // namespace lapact::network
