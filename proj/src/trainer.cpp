#include "lapact/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "lapact/error.hpp"
#include "lapact/sampler.hpp"
#include "lapact/seed.hpp"

namespace lapact::trainer {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr const char *kModule = "trainer";

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t file_hash(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a(bytes);
}
} // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError(kModule, "trainer.learning_rate must be > 0");
  if (early_stop_patience < 1) throw ConfigError(kModule, "trainer.early_stop_patience must be >= 1");
  if (batch_size < 1) throw ConfigError(kModule, "trainer.batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError(kModule, "trainer.max_epochs must be >= 1");
  if (sequence_length < 1) throw ConfigError(kModule, "trainer.sequence_length must be >= 1");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
    throw ConfigError(kModule, "Adam betas must lie in [0, 1)");
}

json to_json(const TrainConfig &c) {
  return {{"learning_rate", c.learning_rate}, {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},       {"adam_epsilon", c.adam_epsilon},
          {"batch_size", c.batch_size},       {"max_epochs", c.max_epochs},
          {"early_stop_patience", c.early_stop_patience},
          {"sequence_length", c.sequence_length},
          {"rng_seed", c.rng_seed}};
}

TrainConfig train_config_from_json(const json &j) {
  TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.sequence_length = j.value("sequence_length", c.sequence_length);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
  } catch (const json::exception &e) {
    throw ConfigError(kModule, std::string("malformed trainer config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {
void check_probabilities(const Eigen::VectorXd &p, int true_class) {
  if (p.size() != 2 || (p.array() < 0).any() || std::abs(p.sum() - 1.0) > 1e-6)
    throw PreconditionError(kModule, "invalid probability vector");
  if (true_class != 0 && true_class != 1)
    throw PreconditionError(kModule, "true_class must be 0 or 1");
}
} // namespace

double bce_loss(const Eigen::VectorXd &p, int true_class) {
  check_probabilities(p, true_class);
  return -std::log(std::clamp(p[true_class], kProbabilityClamp, 1.0 - kProbabilityClamp));
}

Eigen::VectorXd bce_gradient(const Eigen::VectorXd &p, int true_class) {
  check_probabilities(p, true_class);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(p.size());
  const double q = p[true_class];
  if (q > kProbabilityClamp && q < 1.0 - kProbabilityClamp) g[true_class] = -1.0 / q;
  return g;
}

AdamMoments zero_moments(const network::Parameters &like) {
  return {like.zeros_like(), like.zeros_like()};
}

void adam_step(network::Parameters &params, const network::Parameters &grads,
               AdamMoments &moments, std::int64_t t, const TrainConfig &c) {
  if (t < 1) throw PreconditionError(kModule, "Adam step index must be >= 1");
  if (!params.same_layout(grads) || !params.same_layout(moments.first) ||
      !params.same_layout(moments.second))
    throw PreconditionError(kModule, "Adam: parameter/gradient/moment shapes differ");
  const double c1 = 1.0 - std::pow(c.adam_beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(c.adam_beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto &m = moments.first.value(i);
    auto &v = moments.second.value(i);
    const auto &g = grads.value(i);
    m = c.adam_beta1 * m + (1.0 - c.adam_beta1) * g;
    v = c.adam_beta2 * v + (1.0 - c.adam_beta2) * g.cwiseProduct(g);
    params.value(i).array() -=
        c.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + c.adam_epsilon);
  }
}

bool EarlyStopping::update(int epoch, double val_loss) {
  last_improved_ = !has_best_ || val_loss < best_loss_;
  if (last_improved_) {
    has_best_ = true;
    best_loss_ = val_loss;
    best_epoch_ = epoch;
    since_ = 0;
  } else {
    ++since_;
  }
  return since_ >= patience_;
}

std::vector<LabeledClip> labeled_split(const ClipDataset &d, Split split) {
  std::vector<LabeledClip> out;
  for (const auto &c : d.select(split, true)) out.push_back({c, 1});
  for (const auto &c : d.select(split, false)) out.push_back({c, 0});
  return out;
}

SplitScore score_clips(const network::Model &model, std::span<const LabeledClip> clips,
                       const FrameStore &store, int sequence_length) {
  if (clips.empty()) throw PreconditionError(kModule, "cannot score an empty clip set");
  const sampler::SamplerConfig center{sequence_length, sampler::Mode::center, 0};
  double loss = 0.0;
  std::size_t correct = 0;
  for (const auto &lc : clips) {
    const auto seq = sampler::load_sequence(
        lc.clip, sampler::sample_indices(lc.clip.length, center), store);
    const auto p = model.forward(seq, false);
    loss += bce_loss(p, lc.label);
    const int predicted = p[1] > p[0] ? 1 : 0;
    correct += predicted == lc.label;
  }
  const auto n = static_cast<double>(clips.size());
  return {loss / n, static_cast<double>(correct) / n};
}

TrainResult train_binary(const ClipDataset &dataset, const FrameStore &store,
                         const network::ModelConfig &model_config, const TrainConfig &config) {
  config.validate();
  const auto n_target = dataset.count(Split::train, true);
  const auto n_rest = dataset.count(Split::train, false);
  if (n_target != n_rest)
    throw PreconditionError(kModule, "unbalanced training split (" + std::to_string(n_target) +
                                         " target vs " + std::to_string(n_rest) +
                                         " rest); run plan_balance/materialize first");
  const auto train = labeled_split(dataset, Split::train);
  const auto validation = labeled_split(dataset, Split::validation);
  if (train.empty()) throw PreconditionError(kModule, "empty training split");
  if (validation.empty()) throw PreconditionError(kModule, "empty validation split");

  network::Model model(model_config);
  auto moments = zero_moments(model.parameters());
  std::int64_t step = 0;
  EarlyStopping stopper(config.early_stop_patience);
  TrainResult result{model, 0, 0.0, {}};

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 order_rng(derive_seed(config.rng_seed, fnv1a("batch-order")));
  const auto sample_seed = derive_seed(config.rng_seed, fnv1a("sampling"));
  const auto dropout_seed = derive_seed(config.rng_seed, fnv1a("dropout"));

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const auto end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      network::Parameters grads = model.parameters().zeros_like();
      for (auto k = begin; k < end; ++k) {
        const auto &lc = train[order[k]];
        const auto id = lc.clip.id();
        const sampler::SamplerConfig sc{config.sequence_length, sampler::Mode::random,
                                        derive_seed(sample_seed, id, epoch)};
        const auto seq =
            sampler::load_sequence(lc.clip, sampler::sample_indices(lc.clip.length, sc), store);
        network::ForwardTrace trace;
        const auto p = model.forward(seq, true, derive_seed(dropout_seed, id, epoch), &trace);
        loss_sum += bce_loss(p, lc.label);
        grads.add_scaled(model.backward(trace, bce_gradient(p, lc.label)), 1.0);
        (lc.label == 1 ? rec.target_seen : rec.rest_seen)++;
      }
      for (std::size_t i = 0; i < grads.size(); ++i)
        grads.value(i) /= static_cast<double>(end - begin);
      adam_step(model.mutable_parameters(), grads, moments, ++step, config);
    }
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    const auto val = score_clips(model, validation, store, config.sequence_length);
    rec.val_loss = val.loss;
    rec.val_accuracy = val.accuracy;
    result.history.push_back(rec);

    const bool stop = stopper.update(epoch, val.loss);
    if (stopper.last_improved()) {
      result.best_model.set_parameters(model.parameters());
      result.best_epoch = epoch;
      result.best_val_loss = val.loss;
    }
    if (stop) break;
  }
  return result;
}

void write_history_csv(const std::vector<EpochRecord> &history, const fs::path &path) {
  std::ofstream os(path);
  if (!os) throw IoError(kModule, "cannot write " + path.string());
  os << "epoch,train_loss,val_loss,val_accuracy\n";
  char line[128];
  for (const auto &r : history) {
    std::snprintf(line, sizeof(line), "%d,%.9f,%.9f,%.6f\n", r.epoch, r.train_loss, r.val_loss,
                  r.val_accuracy);
    os << line;
  }
}

std::vector<ActionRun> train_all(std::span<const ActionLabel> actions,
                                 const std::function<ClipDataset(ActionLabel)> &make_dataset,
                                 const FrameStore &store, const network::ModelConfig &model_config,
                                 const TrainConfig &config, const fs::path &output_dir) {
  std::vector<ActionRun> runs;
  json summary = json::object();
  for (const auto action : actions) {
    ActionRun run{action, {}, 0, 0.0, {}};
    const std::string name(to_string(action));
    try {
      auto mc = model_config;
      mc.init_seed = derive_seed(model_config.init_seed, fnv1a(name));
      auto tc = config;
      tc.rng_seed = derive_seed(config.rng_seed, fnv1a(name));
      const auto dataset = make_dataset(action);
      auto result = train_binary(dataset, store, mc, tc);
      const auto dir = output_dir / name;
      fs::create_directories(dir);
      run.checkpoint = dir / "checkpoint.bin";
      network::save_checkpoint(result.best_model, run.checkpoint);
      write_history_csv(result.history, dir / "history.csv");
      run.best_epoch = result.best_epoch;
      run.best_val_loss = result.best_val_loss;
      summary[name] = {{"checkpoint_path", run.checkpoint.string()},
                       {"best_epoch", run.best_epoch},
                       {"best_val_loss", run.best_val_loss},
                       {"checkpoint_fnv1a", hex64(file_hash(run.checkpoint))}};
    } catch (const std::exception &e) {
      run.error = e.what();
      summary[name] = {{"error", run.error}};
    }
    runs.push_back(std::move(run));
  }
  fs::create_directories(output_dir);
  std::ofstream os(output_dir / "summary.json");
  if (!os) throw IoError(kModule, "cannot write " + (output_dir / "summary.json").string());
  os << summary.dump(2) << '\n';
  return runs;
}

} // namespace lapact::trainer
