#include "lapact/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "lapact/error.hpp"
#include "lapact/seed.hpp"

namespace lapact::network {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char *kModule = "network";

Eigen::MatrixXd uniform(int rows, int cols, double limit, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
  return m;
}

Eigen::MatrixXd orthogonal(int n, std::mt19937_64 &rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) a(i, j) = dist(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

Eigen::VectorXd softmax(const Eigen::VectorXd &z) {
  const Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp().matrix();
  return e / e.sum();
}

// dz for p = softmax(z) given dp.
Eigen::VectorXd softmax_backward(const Eigen::VectorXd &p, const Eigen::VectorXd &dp) {
  return p.cwiseProduct(dp - Eigen::VectorXd::Constant(p.size(), dp.dot(p)));
}

Eigen::MatrixXd relu(const Eigen::MatrixXd &m) { return m.cwiseMax(0.0); }

Eigen::MatrixXd relu_mask(const Eigen::MatrixXd &activated) {
  return (activated.array() > 0.0).cast<double>().matrix();
}

// Inverted-dropout mask: kept units scaled by 1/(1-rate).
Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate,
                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - rate);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  return m;
}

struct ConvGeometry {
  int k, stride, pad, in_h, in_w, out_h, out_w;
};

ConvGeometry geometry(const ConvStage &s, int in_h, int in_w) {
  ConvGeometry g{s.kernel, s.downsample, s.kernel / 2, in_h, in_w, 0, 0};
  g.out_h = (in_h + 2 * g.pad - g.k) / g.stride + 1;
  g.out_w = (in_w + 2 * g.pad - g.k) / g.stride + 1;
  return g;
}

Eigen::MatrixXd im2col(const Eigen::MatrixXd &in, int frames, const ConvGeometry &g) {
  const auto c_in = in.rows();
  const int out_hw = g.out_h * g.out_w;
  Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(g.k * g.k * c_in, frames * out_hw);
  for (int t = 0; t < frames; ++t)
    for (int oy = 0; oy < g.out_h; ++oy)
      for (int ox = 0; ox < g.out_w; ++ox) {
        const auto col = static_cast<Eigen::Index>(t) * out_hw + oy * g.out_w + ox;
        for (int ky = 0; ky < g.k; ++ky) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.in_h) continue;
          for (int kx = 0; kx < g.k; ++kx) {
            const int ix = ox * g.stride + kx - g.pad;
            if (ix < 0 || ix >= g.in_w) continue;
            cols.block((ky * g.k + kx) * c_in, col, c_in, 1) =
                in.col(static_cast<Eigen::Index>(t) * g.in_h * g.in_w + iy * g.in_w + ix);
          }
        }
      }
  return cols;
}

Eigen::MatrixXd col2im(const Eigen::MatrixXd &cols, Eigen::Index c_in, int frames,
                       const ConvGeometry &g) {
  const int out_hw = g.out_h * g.out_w;
  Eigen::MatrixXd in = Eigen::MatrixXd::Zero(c_in, static_cast<Eigen::Index>(frames) * g.in_h * g.in_w);
  for (int t = 0; t < frames; ++t)
    for (int oy = 0; oy < g.out_h; ++oy)
      for (int ox = 0; ox < g.out_w; ++ox) {
        const auto col = static_cast<Eigen::Index>(t) * out_hw + oy * g.out_w + ox;
        for (int ky = 0; ky < g.k; ++ky) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.in_h) continue;
          for (int kx = 0; kx < g.k; ++kx) {
            const int ix = ox * g.stride + kx - g.pad;
            if (ix < 0 || ix >= g.in_w) continue;
            in.col(static_cast<Eigen::Index>(t) * g.in_h * g.in_w + iy * g.in_w + ix) +=
                cols.block((ky * g.k + kx) * c_in, col, c_in, 1);
          }
        }
      }
  return in;
}

std::string conv_name(std::size_t i) { return "backbone.conv" + std::to_string(i); }

} // namespace

std::string_view to_string(BackboneKind kind) {
  switch (kind) {
  case BackboneKind::small_conv: return "small_conv";
  case BackboneKind::vgg16: return "vgg16";
  case BackboneKind::resnet50: return "resnet50";
  case BackboneKind::efficientnet_b2: return "efficientnet_b2";
  case BackboneKind::densenet121: return "densenet121";
  }
  return "small_conv";
}

std::string_view to_string(HeadKind kind) {
  switch (kind) {
  case HeadKind::fully_connected: return "fully_connected";
  case HeadKind::lstm: return "lstm";
  case HeadKind::gru: return "gru";
  case HeadKind::bilstm: return "bilstm";
  case HeadKind::bigru: return "bigru";
  }
  return "lstm";
}

BackboneKind parse_backbone_kind(std::string_view name) {
  for (auto k : {BackboneKind::small_conv, BackboneKind::vgg16, BackboneKind::resnet50,
                 BackboneKind::efficientnet_b2, BackboneKind::densenet121})
    if (to_string(k) == name) return k;
  throw ConfigError(kModule, "unknown backbone '" + std::string(name) + "'");
}

HeadKind parse_head_kind(std::string_view name) {
  for (auto k : {HeadKind::fully_connected, HeadKind::lstm, HeadKind::gru, HeadKind::bilstm,
                 HeadKind::bigru})
    if (to_string(k) == name) return k;
  throw ConfigError(kModule, "unknown head '" + std::string(name) + "'");
}

std::string display_name(HeadKind kind) {
  switch (kind) {
  case HeadKind::fully_connected: return "Fully Connected";
  case HeadKind::lstm: return "LSTM";
  case HeadKind::gru: return "GRU";
  case HeadKind::bilstm: return "BiLSTM";
  case HeadKind::bigru: return "BiGRU";
  }
  return "";
}

std::string display_name(BackboneKind kind) {
  switch (kind) {
  case BackboneKind::small_conv: return "SmallConv";
  case BackboneKind::vgg16: return "VGG16";
  case BackboneKind::resnet50: return "ResNet50";
  case BackboneKind::efficientnet_b2: return "EfficientNetB2";
  case BackboneKind::densenet121: return "DenseNet121";
  }
  return "";
}

bool is_recurrent(HeadKind kind) { return kind != HeadKind::fully_connected; }

bool is_bidirectional(HeadKind kind) {
  return kind == HeadKind::bilstm || kind == HeadKind::bigru;
}

void validate(const ModelConfig &c) {
  const auto &b = c.backbone;
  if (b.feature_dim <= 0) throw ConfigError(kModule, "backbone.feature_dim must be > 0");
  if (b.kind == BackboneKind::small_conv) {
    if (b.stages.empty()) throw ConfigError(kModule, "backbone.stages must not be empty");
    for (const auto &s : b.stages)
      if (s.channels <= 0 || s.kernel <= 0 || s.kernel % 2 == 0 || s.downsample <= 0)
        throw ConfigError(kModule, "backbone.stages: channels > 0, odd kernel, downsample > 0");
    if (b.stages.back().channels != b.feature_dim)
      throw ConfigError(kModule, "backbone.feature_dim must equal the last stage's channels");
  }
  const auto &h = c.head;
  if (h.rnn_units_1 <= 0 || h.rnn_units_2 <= 0 || h.fc_units_1 <= 0 || h.fc_units_2 <= 0)
    throw ConfigError(kModule, "head unit counts must be > 0");
  if (!(h.inter_layer_dropout >= 0 && h.inter_layer_dropout < 1) ||
      !(h.fc_dropout >= 0 && h.fc_dropout < 1))
    throw ConfigError(kModule, "head dropout rates must lie in [0, 1)");
  if (h.num_classes != 2) throw ConfigError(kModule, "head.num_classes must be 2 (one-vs-rest)");
}

json to_json(const ModelConfig &c) {
  json stages = json::array();
  for (const auto &s : c.backbone.stages)
    stages.push_back({{"channels", s.channels}, {"kernel", s.kernel}, {"downsample", s.downsample}});
  return {{"backbone",
           {{"kind", to_string(c.backbone.kind)},
            {"feature_dim", c.backbone.feature_dim},
            {"stages", stages},
            {"input_height", c.backbone.input_height},
            {"input_width", c.backbone.input_width}}},
          {"head",
           {{"kind", to_string(c.head.kind)},
            {"rnn_units_1", c.head.rnn_units_1},
            {"rnn_units_2", c.head.rnn_units_2},
            {"inter_layer_dropout", c.head.inter_layer_dropout},
            {"fc_units_1", c.head.fc_units_1},
            {"fc_dropout", c.head.fc_dropout},
            {"fc_units_2", c.head.fc_units_2},
            {"num_classes", c.head.num_classes},
            {"readout", c.head.readout == Readout::last ? "last" : "mean"}}},
          {"init_seed", c.init_seed}};
}

ModelConfig model_config_from_json(const json &j) {
  ModelConfig c;
  try {
    if (j.contains("backbone")) {
      const auto &b = j.at("backbone");
      if (b.contains("kind")) c.backbone.kind = parse_backbone_kind(b.at("kind").get<std::string>());
      c.backbone.feature_dim = b.value("feature_dim", c.backbone.feature_dim);
      if (b.contains("stages")) {
        c.backbone.stages.clear();
        for (const auto &s : b.at("stages")) {
          if (s.is_array())
            c.backbone.stages.push_back({s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()});
          else
            c.backbone.stages.push_back({s.at("channels").get<int>(), s.at("kernel").get<int>(),
                                         s.at("downsample").get<int>()});
        }
      }
      c.backbone.input_height = b.value("input_height", 0);
      c.backbone.input_width = b.value("input_width", 0);
    }
    if (j.contains("head")) {
      const auto &h = j.at("head");
      if (h.contains("kind")) c.head.kind = parse_head_kind(h.at("kind").get<std::string>());
      c.head.rnn_units_1 = h.value("rnn_units_1", c.head.rnn_units_1);
      c.head.rnn_units_2 = h.value("rnn_units_2", c.head.rnn_units_2);
      c.head.inter_layer_dropout = h.value("inter_layer_dropout", c.head.inter_layer_dropout);
      c.head.fc_units_1 = h.value("fc_units_1", c.head.fc_units_1);
      c.head.fc_dropout = h.value("fc_dropout", c.head.fc_dropout);
      c.head.fc_units_2 = h.value("fc_units_2", c.head.fc_units_2);
      c.head.num_classes = h.value("num_classes", c.head.num_classes);
      const auto readout = h.value("readout", std::string("last"));
      if (readout != "last" && readout != "mean")
        throw ConfigError(kModule, "head.readout must be 'last' or 'mean'");
      c.head.readout = readout == "last" ? Readout::last : Readout::mean;
    }
    c.init_seed = j.value("init_seed", c.init_seed);
  } catch (const json::exception &e) {
    throw ConfigError(kModule, std::string("malformed model config: ") + e.what());
  }
  validate(c);
  return c;
}

Model::Model(ModelConfig config, std::shared_ptr<const FeatureExtractor> external)
    : config_(std::move(config)), external_(std::move(external)) {
  validate(config_);
  if (config_.backbone.kind != BackboneKind::small_conv && !external_)
    throw ConfigError(kModule, "unavailable backbone: " +
                                   std::string(to_string(config_.backbone.kind)) +
                                   " needs externally supplied pretrained weights");
  std::mt19937_64 rng(config_.init_seed);

  if (config_.backbone.kind == BackboneKind::small_conv) {
    int c_in = Image::channels;
    for (std::size_t i = 0; i < config_.backbone.stages.size(); ++i) {
      const auto &s = config_.backbone.stages[i];
      const int fan_in = s.kernel * s.kernel * c_in;
      params_.add(conv_name(i) + ".weight", uniform(s.channels, fan_in, std::sqrt(6.0 / fan_in), rng));
      params_.add(conv_name(i) + ".bias", Tensor::Zero(s.channels, 1));
      c_in = s.channels;
    }
  }

  const int d = config_.backbone.feature_dim;
  const auto &h = config_.head;
  if (is_recurrent(h.kind)) {
    const auto kind = (h.kind == HeadKind::lstm || h.kind == HeadKind::bilstm) ? CellKind::lstm
                                                                               : CellKind::gru;
    const int gates = gate_count(kind);
    const int dirs = is_bidirectional(h.kind) ? 2 : 1;
    auto add_cell = [&](const std::string &prefix, int in, int units) {
      params_.add(prefix + ".w_input",
                  uniform(gates * units, in, std::sqrt(6.0 / (in + gates * units)), rng));
      Tensor rec(gates * units, units);
      for (int g = 0; g < gates; ++g) rec.middleRows(g * units, units) = orthogonal(units, rng);
      params_.add(prefix + ".w_recurrent", std::move(rec));
      Tensor bias = Tensor::Zero(gates * units, 1);
      if (kind == CellKind::lstm) bias.middleRows(units, units).setOnes(); // forget gate
      params_.add(prefix + ".bias", std::move(bias));
    };
    add_cell("head.rnn1.fwd", d, h.rnn_units_1);
    if (dirs == 2) add_cell("head.rnn1.bwd", d, h.rnn_units_1);
    add_cell("head.rnn2.fwd", dirs * h.rnn_units_1, h.rnn_units_2);
    if (dirs == 2) add_cell("head.rnn2.bwd", dirs * h.rnn_units_1, h.rnn_units_2);
    const int r = dirs * h.rnn_units_2;
    params_.add("head.out.weight", uniform(h.num_classes, r, std::sqrt(6.0 / (r + h.num_classes)), rng));
    params_.add("head.out.bias", Tensor::Zero(h.num_classes, 1));
  } else {
    params_.add("head.fc1.weight", uniform(h.fc_units_1, d, std::sqrt(6.0 / d), rng));
    params_.add("head.fc1.bias", Tensor::Zero(h.fc_units_1, 1));
    params_.add("head.fc2.weight",
                uniform(h.fc_units_2, h.fc_units_1, std::sqrt(6.0 / h.fc_units_1), rng));
    params_.add("head.fc2.bias", Tensor::Zero(h.fc_units_2, 1));
    params_.add("head.out.weight",
                uniform(h.num_classes, h.fc_units_2,
                        std::sqrt(6.0 / (h.fc_units_2 + h.num_classes)), rng));
    params_.add("head.out.bias", Tensor::Zero(h.num_classes, 1));
  }
}

void Model::set_parameters(Parameters params) {
  if (!params.same_layout(params_))
    throw ConfigError(kModule, "incompatible parameters: layout differs from the model config");
  params_ = std::move(params);
  ++generation_;
}

CellWeights Model::cell(const std::string &prefix) const {
  return {params_[prefix + ".w_input"], params_[prefix + ".w_recurrent"], params_[prefix + ".bias"]};
}

Eigen::MatrixXd Model::conv_features(std::span<const Image> frames, ForwardTrace *trace) const {
  const int T = static_cast<int>(frames.size());
  if (T == 0) throw PreconditionError(kModule, "geometry error: empty frame sequence");
  const int H = frames[0].height, W = frames[0].width;
  for (const auto &f : frames)
    if (f.height != H || f.width != W ||
        f.data.size() != static_cast<std::size_t>(H) * W * Image::channels)
      throw PreconditionError(kModule, "geometry error: frames in a sequence differ in shape");
  const auto &b = config_.backbone;
  if ((b.input_height > 0 && H != b.input_height) || (b.input_width > 0 && W != b.input_width))
    throw PreconditionError(kModule, "geometry error: frames are " + std::to_string(H) + "x" +
                                         std::to_string(W) + ", backbone expects " +
                                         std::to_string(b.input_height) + "x" +
                                         std::to_string(b.input_width));

  if (external_) {
    Eigen::MatrixXd f = external_->extract(frames);
    if (f.rows() != T || f.cols() != b.feature_dim)
      throw PreconditionError(kModule, "geometry error: external backbone returned wrong shape");
    return f.transpose();
  }

  Eigen::MatrixXd x(Image::channels, static_cast<Eigen::Index>(T) * H * W);
  for (int t = 0; t < T; ++t)
    x.middleCols(static_cast<Eigen::Index>(t) * H * W, static_cast<Eigen::Index>(H) * W) =
        Eigen::Map<const Eigen::MatrixXd>(frames[t].data.data(), Image::channels,
                                          static_cast<Eigen::Index>(H) * W);
  int h = H, w = W;
  for (std::size_t i = 0; i < b.stages.size(); ++i) {
    const auto g = geometry(b.stages[i], h, w);
    if (g.out_h < 1 || g.out_w < 1)
      throw PreconditionError(kModule, "geometry error: frames too small for the backbone");
    Eigen::MatrixXd cols = im2col(x, T, g);
    // One product per frame keeps each frame's features independent of its
    // position in the sequence, bit for bit.
    const Eigen::Index ohw = static_cast<Eigen::Index>(g.out_h) * g.out_w;
    const auto &weight = params_[conv_name(i) + ".weight"];
    Eigen::MatrixXd out(weight.rows(), cols.cols());
    for (int t = 0; t < T; ++t)
      out.middleCols(t * ohw, ohw).noalias() = weight * cols.middleCols(t * ohw, ohw);
    out.colwise() += params_[conv_name(i) + ".bias"].col(0);
    out = relu(out);
    if (trace) trace->stages.push_back({h, w, g.out_h, g.out_w, std::move(cols), out});
    x = std::move(out);
    h = g.out_h;
    w = g.out_w;
  }
  const int hw = h * w;
  Eigen::MatrixXd features(x.rows(), T);
  for (int t = 0; t < T; ++t)
    features.col(t) = x.middleCols(static_cast<Eigen::Index>(t) * hw, hw).rowwise().mean();
  return features;
}

Eigen::MatrixXd Model::backbone_forward(std::span<const Image> frames) const {
  return conv_features(frames, nullptr).transpose();
}

Eigen::VectorXd Model::head_forward(const Eigen::MatrixXd &f, bool training,
                                    std::uint64_t dropout_seed, ForwardTrace *trace) const {
  const auto &h = config_.head;
  if (f.rows() != config_.backbone.feature_dim || f.cols() < 1)
    throw PreconditionError(kModule, "geometry error: head expects " +
                                         std::to_string(config_.backbone.feature_dim) +
                                         "-dim features over >= 1 step");
  const auto T = f.cols();
  if (is_recurrent(h.kind)) {
    const auto kind = (h.kind == HeadKind::lstm || h.kind == HeadKind::bilstm) ? CellKind::lstm
                                                                               : CellKind::gru;
    const bool bidir = is_bidirectional(h.kind);
    auto run_layer = [&](const std::string &prefix, const Eigen::MatrixXd &in,
                         std::vector<CellTrace> *traces) {
      CellTrace fwd_trace, bwd_trace;
      Eigen::MatrixXd fwd = run_cell(kind, cell(prefix + ".fwd"), in, false,
                                     traces ? &fwd_trace : nullptr);
      if (!bidir) {
        if (traces) traces->push_back(std::move(fwd_trace));
        return fwd;
      }
      Eigen::MatrixXd bwd = run_cell(kind, cell(prefix + ".bwd"), in, true,
                                     traces ? &bwd_trace : nullptr);
      if (traces) {
        traces->push_back(std::move(fwd_trace));
        traces->push_back(std::move(bwd_trace));
      }
      Eigen::MatrixXd out(fwd.rows() + bwd.rows(), T);
      out << fwd, bwd;
      return out;
    };
    Eigen::MatrixXd out1 = run_layer("head.rnn1", f, trace ? &trace->layer1 : nullptr);
    Eigen::MatrixXd in2 = out1;
    Eigen::MatrixXd mask;
    if (training && h.inter_layer_dropout > 0) {
      mask = dropout_mask(out1.rows(), T, h.inter_layer_dropout, derive_seed(dropout_seed, 1));
      in2 = out1.cwiseProduct(mask);
    }
    Eigen::MatrixXd out2 = run_layer("head.rnn2", in2, trace ? &trace->layer2 : nullptr);
    const int u2 = h.rnn_units_2;
    Eigen::VectorXd readout(out2.rows());
    if (h.readout == Readout::mean) {
      readout = out2.rowwise().mean();
    } else {
      readout.head(u2) = out2.topRows(u2).col(T - 1);
      if (bidir) readout.tail(u2) = out2.bottomRows(u2).col(0);
    }
    Eigen::VectorXd p = softmax(params_["head.out.weight"] * readout + params_["head.out.bias"].col(0));
    if (trace) {
      trace->layer1_out = std::move(out1);
      trace->dropout_mask = std::move(mask);
      trace->layer2_in = std::move(in2);
      trace->layer2_out = std::move(out2);
      trace->readout = std::move(readout);
    }
    return p;
  }

  // Column-at-a-time products, as in the backbone.
  const auto per_frame = [T](const Tensor &weight, const Eigen::MatrixXd &in) {
    Eigen::MatrixXd out(weight.rows(), T);
    for (Eigen::Index t = 0; t < T; ++t) out.col(t).noalias() = weight * in.col(t);
    return out;
  };
  Eigen::MatrixXd fc1 = per_frame(params_["head.fc1.weight"], f);
  fc1.colwise() += params_["head.fc1.bias"].col(0);
  fc1 = relu(fc1);
  Eigen::MatrixXd mask, fc1d = fc1;
  if (training && h.fc_dropout > 0) {
    mask = dropout_mask(fc1.rows(), T, h.fc_dropout, derive_seed(dropout_seed, 2));
    fc1d = fc1.cwiseProduct(mask);
  }
  Eigen::MatrixXd fc2 = per_frame(params_["head.fc2.weight"], fc1d);
  fc2.colwise() += params_["head.fc2.bias"].col(0);
  fc2 = relu(fc2);
  Eigen::MatrixXd z = per_frame(params_["head.out.weight"], fc2);
  z.colwise() += params_["head.out.bias"].col(0);
  Eigen::MatrixXd probs(z.rows(), T);
  for (Eigen::Index t = 0; t < T; ++t) probs.col(t) = softmax(z.col(t));
  // Summing each class in sorted order makes the clip decision exactly
  // invariant to frame order.
  Eigen::VectorXd mean(probs.rows());
  for (Eigen::Index c = 0; c < probs.rows(); ++c) {
    std::vector<double> v(static_cast<std::size_t>(T));
    for (Eigen::Index t = 0; t < T; ++t) v[t] = probs(c, t);
    std::sort(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += x;
    mean(c) = sum / static_cast<double>(T);
  }
  Eigen::VectorXd p = mean / mean.sum();
  if (trace) {
    trace->fc1_out = std::move(fc1);
    trace->fc_mask = std::move(mask);
    trace->fc1_dropped = std::move(fc1d);
    trace->fc2_out = std::move(fc2);
    trace->frame_probs = std::move(probs);
    trace->mean_probs = std::move(mean);
  }
  return p;
}

Eigen::VectorXd Model::recurrent_head_forward(const Eigen::MatrixXd &features, bool training,
                                              std::uint64_t dropout_seed,
                                              ForwardTrace *trace) const {
  if (!is_recurrent(config_.head.kind))
    throw ConfigError(kModule, "recurrent_head_forward called on a fully_connected head");
  return head_forward(features.transpose(), training, dropout_seed, trace);
}

Eigen::VectorXd Model::static_head_forward(const Eigen::VectorXd &feature, bool training,
                                           std::uint64_t dropout_seed) const {
  if (is_recurrent(config_.head.kind))
    throw ConfigError(kModule, "static_head_forward called on a recurrent head");
  return head_forward(feature, training, dropout_seed, nullptr);
}

Eigen::VectorXd Model::forward(std::span<const Image> frames, bool training,
                               std::uint64_t dropout_seed, ForwardTrace *trace) const {
  if (trace) {
    *trace = ForwardTrace{};
    trace->owner = this;
    trace->generation = generation_;
    trace->training = training;
    trace->frames = static_cast<int>(frames.size());
  }
  Eigen::MatrixXd features = conv_features(frames, trace);
  Eigen::VectorXd p = head_forward(features, training, dropout_seed, trace);
  if (trace) {
    trace->features = std::move(features);
    trace->probabilities = p;
  }
  return p;
}

Parameters Model::backward(const ForwardTrace &trace, const Eigen::VectorXd &loss_grad) const {
  if (trace.owner != this || trace.generation != generation_ || trace.probabilities.size() == 0)
    throw PreconditionError(kModule, "stale activation: trace was not recorded by this model's "
                                     "current parameters");
  if (loss_grad.size() != trace.probabilities.size())
    throw PreconditionError(kModule, "loss gradient must have one entry per class");
  Parameters grads = params_.zeros_like();
  const auto &h = config_.head;
  const auto &p = trace.probabilities;
  const auto T = trace.features.cols();
  Eigen::MatrixXd d_features;

  if (is_recurrent(h.kind)) {
    const auto kind = (h.kind == HeadKind::lstm || h.kind == HeadKind::bilstm) ? CellKind::lstm
                                                                               : CellKind::gru;
    const bool bidir = is_bidirectional(h.kind);
    const Eigen::VectorXd dz = softmax_backward(p, loss_grad);
    grads["head.out.weight"] += dz * trace.readout.transpose();
    grads["head.out.bias"] += dz;
    const Eigen::VectorXd d_readout = params_["head.out.weight"].transpose() * dz;
    const int u2 = h.rnn_units_2;
    Eigen::MatrixXd d_out2 = Eigen::MatrixXd::Zero(trace.layer2_out.rows(), T);
    if (h.readout == Readout::mean) {
      d_out2.colwise() += d_readout / static_cast<double>(T);
    } else {
      d_out2.topRows(u2).col(T - 1) += d_readout.head(u2);
      if (bidir) d_out2.bottomRows(u2).col(0) += d_readout.tail(u2);
    }
    auto layer_backward = [&](const std::string &prefix, const Eigen::MatrixXd &in,
                              const std::vector<CellTrace> &traces, const Eigen::MatrixXd &d_out,
                              int units) {
      Eigen::MatrixXd d_in = Eigen::MatrixXd::Zero(in.rows(), T);
      const char *dirs[] = {".fwd", ".bwd"};
      for (std::size_t d = 0; d < traces.size(); ++d) {
        const auto name = prefix + dirs[d];
        CellWeights g = {grads[name + ".w_input"], grads[name + ".w_recurrent"], grads[name + ".bias"]};
        d_in += backward_cell(kind, cell(name), in, traces[d],
                              d_out.middleRows(static_cast<Eigen::Index>(d) * units, units), g);
        grads[name + ".w_input"] = std::move(g.w_input);
        grads[name + ".w_recurrent"] = std::move(g.w_recurrent);
        grads[name + ".bias"] = std::move(g.bias);
      }
      return d_in;
    };
    Eigen::MatrixXd d_in2 = layer_backward("head.rnn2", trace.layer2_in, trace.layer2, d_out2, u2);
    if (trace.dropout_mask.size() > 0) d_in2 = d_in2.cwiseProduct(trace.dropout_mask);
    d_features = layer_backward("head.rnn1", trace.features, trace.layer1, d_in2, h.rnn_units_1);
  } else {
    const auto &mean = trace.mean_probs;
    const double s = mean.sum();
    const Eigen::VectorXd d_mean =
        (loss_grad - Eigen::VectorXd::Constant(p.size(), loss_grad.dot(p))) / s;
    Eigen::MatrixXd dz(trace.frame_probs.rows(), T);
    for (Eigen::Index t = 0; t < T; ++t)
      dz.col(t) = softmax_backward(trace.frame_probs.col(t), d_mean / static_cast<double>(T));
    grads["head.out.weight"] += dz * trace.fc2_out.transpose();
    grads["head.out.bias"] += dz.rowwise().sum();
    const Eigen::MatrixXd d_fc2 = (params_["head.out.weight"].transpose() * dz)
                                      .cwiseProduct(relu_mask(trace.fc2_out));
    grads["head.fc2.weight"] += d_fc2 * trace.fc1_dropped.transpose();
    grads["head.fc2.bias"] += d_fc2.rowwise().sum();
    Eigen::MatrixXd d_fc1 = params_["head.fc2.weight"].transpose() * d_fc2;
    if (trace.fc_mask.size() > 0) d_fc1 = d_fc1.cwiseProduct(trace.fc_mask);
    d_fc1 = d_fc1.cwiseProduct(relu_mask(trace.fc1_out));
    grads["head.fc1.weight"] += d_fc1 * trace.features.transpose();
    grads["head.fc1.bias"] += d_fc1.rowwise().sum();
    d_features = params_["head.fc1.weight"].transpose() * d_fc1;
  }

  if (external_) return grads; // frozen pretrained backbone

  const auto &stages = trace.stages;
  const auto &last = stages.back();
  const int hw = last.out_h * last.out_w;
  Eigen::MatrixXd d_out(last.output.rows(), last.output.cols());
  for (Eigen::Index t = 0; t < T; ++t)
    d_out.middleCols(t * hw, hw).colwise() = d_features.col(t) / static_cast<double>(hw);
  for (std::size_t i = stages.size(); i-- > 0;) {
    const auto &st = stages[i];
    const Eigen::MatrixXd d_pre = d_out.cwiseProduct(relu_mask(st.output));
    grads[conv_name(i) + ".weight"] += d_pre * st.cols.transpose();
    grads[conv_name(i) + ".bias"] += d_pre.rowwise().sum();
    if (i == 0) break;
    const Eigen::MatrixXd d_cols = params_[conv_name(i) + ".weight"].transpose() * d_pre;
    const auto g = geometry(config_.backbone.stages[i], st.in_h, st.in_w);
    d_out = col2im(d_cols, stages[i - 1].output.rows(), static_cast<int>(T), g);
  }
  return grads;
}

// Binary layout: "LAPACTCK", u32 version, u32 count, then per tensor
// u32 name length, name, u8 dtype (1 = float64), u8 rank (2), u64 rows,
// u64 cols, column-major little-endian payload.
namespace {
constexpr char kMagic[8] = {'L', 'A', 'P', 'A', 'C', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T> void put(std::ostream &os, T v) {
  os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}
template <typename T> T get(std::istream &is, const fs::path &path) {
  T v{};
  if (!is.read(reinterpret_cast<char *>(&v), sizeof(T)))
    throw IoError(kModule, "truncated checkpoint " + path.string());
  return v;
}
} // namespace

void write_parameters(const Parameters &params, const fs::path &path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(kModule, "cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto &name = params.name(i);
    const auto &v = params.value(i);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(os, 1);
    put<std::uint8_t>(os, 2);
    put<std::uint64_t>(os, static_cast<std::uint64_t>(v.rows()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(v.cols()));
    os.write(reinterpret_cast<const char *>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!os) throw IoError(kModule, "failed writing checkpoint " + path.string());
}

Parameters read_parameters(const fs::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(kModule, "cannot read checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ParseError(kModule, "not a checkpoint file: " + path.string());
  const auto version = get<std::uint32_t>(is, path);
  if (version != kVersion)
    throw ParseError(kModule, "unsupported checkpoint version " + std::to_string(version));
  const auto count = get<std::uint32_t>(is, path);
  Parameters params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(is, path);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw IoError(kModule, "truncated checkpoint " + path.string());
    const auto dtype = get<std::uint8_t>(is, path);
    const auto rank = get<std::uint8_t>(is, path);
    if (dtype != 1 || rank != 2)
      throw ParseError(kModule, "unsupported tensor encoding for " + name);
    const auto rows = get<std::uint64_t>(is, path);
    const auto cols = get<std::uint64_t>(is, path);
    Tensor v(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!is.read(reinterpret_cast<char *>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(double))))
      throw IoError(kModule, "truncated checkpoint " + path.string());
    params.add(name, std::move(v));
  }
  return params;
}

void save_checkpoint(const Model &model, const fs::path &path) {
  write_parameters(model.parameters(), path);
  auto config_path = path;
  config_path.replace_extension(".json");
  std::ofstream os(config_path);
  if (!os) throw IoError(kModule, "cannot write " + config_path.string());
  os << to_json(model.config()).dump(2) << '\n';
}

Model load_checkpoint(const fs::path &path) {
  auto config_path = path;
  config_path.replace_extension(".json");
  std::ifstream is(config_path);
  if (!is) throw IoError(kModule, "cannot read checkpoint config " + config_path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error &e) {
    throw ParseError(kModule, "malformed checkpoint config " + config_path.string() + ": " + e.what());
  }
  Model model(model_config_from_json(j));
  auto params = read_parameters(path);
  if (!params.same_layout(model.parameters()))
    throw ConfigError(kModule, "incompatible checkpoint " + path.string() +
                                   ": tensors do not match the stored model config");
  model.set_parameters(std::move(params));
  return model;
}

} // namespace lapact::network
