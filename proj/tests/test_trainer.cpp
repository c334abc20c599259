#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "lapact/error.hpp"
#include "lapact/fixture.hpp"
#include "lapact/trainer.hpp"
#include "overfit.hpp"
#include "support.hpp"

using namespace lapact;
using namespace lapact::trainer;

namespace {

Eigen::VectorXd probs(double p0, double p1) { return Eigen::Vector2d(p0, p1); }

network::ModelConfig small_model(network::HeadKind head = network::HeadKind::lstm) {
  network::ModelConfig mc;
  mc.backbone.stages = {{4, 3, 2}, {8, 3, 2}};
  mc.backbone.feature_dim = 8;
  mc.head.kind = head;
  mc.head.rnn_units_1 = 8;
  mc.head.rnn_units_2 = 4;
  mc.head.fc_units_1 = 8;
  mc.head.fc_units_2 = 4;
  mc.init_seed = 11;
  return mc;
}

TrainConfig short_run(int epochs) {
  TrainConfig tc;
  tc.batch_size = 2;
  tc.max_epochs = epochs;
  tc.early_stop_patience = epochs;
  tc.rng_seed = 5;
  return tc;
}

network::Parameters single(double value) {
  network::Parameters p;
  p.add("w", network::Tensor::Constant(1, 1, value));
  return p;
}

} // namespace

TEST_CASE("bce loss examples") {
  CHECK(bce_loss(probs(0.5, 0.5), 1) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(bce_loss(probs(0.9, 0.1), 1) == doctest::Approx(2.302585).epsilon(1e-6));
  CHECK(bce_loss(probs(0.9, 0.1), 0) == doctest::Approx(-std::log(0.9)));
  // p = 1 is clamped to 1 - 1e-7.
  CHECK(bce_loss(probs(0.0, 1.0), 1) == doctest::Approx(1e-7).epsilon(1e-3));
  CHECK(bce_loss(probs(1.0, 0.0), 1) == doctest::Approx(-std::log(1e-7)));
}

TEST_CASE("bce gradient") {
  const auto g = bce_gradient(probs(0.25, 0.75), 1);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == doctest::Approx(-1.0 / 0.75));
  CHECK(bce_gradient(probs(1.0, 0.0), 1).isZero());
}

TEST_CASE("bce rejects invalid inputs") {
  CHECK_THROWS_AS(bce_loss(probs(0.6, 0.6), 1), PreconditionError);
  CHECK_THROWS_AS(bce_loss(probs(-0.1, 1.1), 1), PreconditionError);
  CHECK_THROWS_AS(bce_loss(Eigen::Vector3d(0.2, 0.3, 0.5), 1), PreconditionError);
  CHECK_THROWS_AS(bce_loss(probs(0.5, 0.5), 2), PreconditionError);
}

TEST_CASE("adam first step against hand-derived update") {
  TrainConfig c;
  for (double g : {0.3, -2.0, 1e-3}) {
    auto p = single(1.0);
    auto m = zero_moments(p);
    adam_step(p, single(g), m, 1, c);
    // m_hat = g, v_hat = g^2.
    const double expected = 1.0 - 0.001 * g / (std::abs(g) + 1e-8);
    CHECK(p.value(0)(0, 0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::abs(p.value(0)(0, 0) - 1.0) == doctest::Approx(0.001).epsilon(1e-4));
  }
}

TEST_CASE("adam second step matches recurrence") {
  TrainConfig c;
  auto p = single(0.0);
  auto m = zero_moments(p);
  adam_step(p, single(1.0), m, 1, c);
  adam_step(p, single(-0.5), m, 2, c);
  const double m2 = 0.9 * 0.1 * 1.0 + 0.1 * -0.5;
  const double v2 = 0.999 * 0.001 * 1.0 + 0.001 * 0.25;
  const double mh = m2 / (1 - 0.81), vh = v2 / (1 - 0.999 * 0.999);
  const double step1 = -0.001 * 1.0 / (1.0 + 1e-8);
  CHECK(p.value(0)(0, 0) == doctest::Approx(step1 - 0.001 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam zero gradient and determinism") {
  TrainConfig c;
  auto p = single(3.0);
  auto m = zero_moments(p);
  for (int t = 1; t <= 5; ++t) adam_step(p, single(0.0), m, t, c);
  CHECK(p.value(0)(0, 0) == 3.0);

  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> gs(50);
  for (auto &g : gs) g = n(rng);
  const auto trajectory = [&] {
    auto q = single(0.5);
    auto mm = zero_moments(q);
    for (std::size_t t = 0; t < gs.size(); ++t) adam_step(q, single(gs[t]), mm, t + 1, c);
    return q;
  };
  CHECK(trajectory() == trajectory());

  CHECK_THROWS_AS(adam_step(p, single(1.0), m, 0, c), PreconditionError);
  network::Parameters other;
  other.add("w", network::Tensor::Zero(2, 1));
  CHECK_THROWS_AS(adam_step(p, other, m, 1, c), PreconditionError);
}

TEST_CASE("early stopping on scripted losses") {
  EarlyStopping s(3);
  const std::vector<double> seq{1.0, 0.9, 0.95, 0.95, 0.91, 0.5};
  int stopped = 0;
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (s.update(static_cast<int>(i) + 1, seq[i])) {
      stopped = static_cast<int>(i) + 1;
      break;
    }
  CHECK(stopped == 5);
  CHECK(s.best_epoch() == 2);
  CHECK(s.best_loss() == 0.9);

  EarlyStopping mono(3);
  int last = 0;
  for (int e = 1; e <= 100; ++e) {
    last = e;
    if (mono.update(e, 1.0 / e)) break;
  }
  CHECK(last == 100);
  CHECK(mono.best_epoch() == 100);

  // Ties are not improvements.
  EarlyStopping ties(2);
  CHECK_FALSE(ties.update(1, 0.5));
  CHECK_FALSE(ties.update(2, 0.5));
  CHECK(ties.update(3, 0.5));
  CHECK(ties.best_epoch() == 1);
}

TEST_CASE("train config validation and json") {
  TrainConfig c;
  c.validate();
  CHECK(train_config_from_json(to_json(c)).batch_size == 8);
  auto bad = c;
  bad.learning_rate = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.early_stop_patience = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.adam_beta2 = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("train_binary preconditions") {
  testing::TempDir dir("trainer_pre");
  auto [ds, store] = fixture::motion_pair_dataset(dir.path(), 2, 1, 50, 32, 32, 3);
  auto unbalanced = ds;
  unbalanced.rest_clips.erase(unbalanced.rest_clips.begin());
  try {
    train_binary(unbalanced, store, small_model(), short_run(1));
    FAIL("expected unbalanced split to be rejected");
  } catch (const PreconditionError &e) {
    CHECK(std::string(e.what()).find("unbalanced") != std::string::npos);
  }
  auto no_val = ds;
  std::erase_if(no_val.target_clips, [](const AssignedClip &a) { return a.split == Split::validation; });
  std::erase_if(no_val.rest_clips, [](const AssignedClip &a) { return a.split == Split::validation; });
  CHECK_THROWS_AS(train_binary(no_val, store, small_model(), short_run(1)), PreconditionError);
}

TEST_CASE("train_binary restores the argmin epoch and is deterministic") {
  testing::TempDir dir("trainer_run");
  auto [ds, store] = fixture::motion_pair_dataset(dir.path(), 2, 1, 50, 32, 32, 4);
  const auto a = train_binary(ds, store, small_model(), short_run(8));
  REQUIRE(a.history.size() == 8);

  std::size_t argmin = 0;
  for (std::size_t i = 1; i < a.history.size(); ++i)
    if (a.history[i].val_loss < a.history[argmin].val_loss) argmin = i;
  CHECK(a.best_epoch == a.history[argmin].epoch);
  CHECK(a.best_val_loss == a.history[argmin].val_loss);
  const auto val = labeled_split(ds, Split::validation);
  CHECK(score_clips(a.best_model, val, store, 20).loss == a.best_val_loss);

  for (const auto &r : a.history) {
    CHECK(r.target_seen == r.rest_seen);
    CHECK(r.target_seen == 2);
    CHECK(std::isfinite(r.train_loss));
  }

  const auto b = train_binary(ds, store, small_model(), short_run(8));
  REQUIRE(b.history.size() == a.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].val_loss == b.history[i].val_loss);
  }
  CHECK(a.best_model.parameters() == b.best_model.parameters());
}

TEST_CASE("patience cuts training short") {
  testing::TempDir dir("trainer_patience");
  auto [ds, store] = fixture::motion_pair_dataset(dir.path(), 2, 1, 50, 32, 32, 4);
  auto tc = short_run(30);
  tc.early_stop_patience = 1;
  tc.learning_rate = 0.5; // unstable on purpose
  const auto r = train_binary(ds, store, small_model(), tc);
  REQUIRE(r.history.size() < 30);
  CHECK(r.history.back().epoch == r.best_epoch + 1);
}

TEST_CASE("history csv") {
  testing::TempDir dir("trainer_csv");
  std::vector<EpochRecord> h{{1, 0.5, 0.25, 0.75, 4, 4}, {2, 0.125, 0.0625, 1.0, 4, 4}};
  write_history_csv(h, dir / "history.csv");
  CHECK(testing::slurp(dir / "history.csv") ==
        "epoch,train_loss,val_loss,val_accuracy\n"
        "1,0.500000000,0.250000000,0.750000\n"
        "2,0.125000000,0.062500000,1.000000\n");
}

TEST_CASE("train_all isolates failing actions and reruns identically") {
  testing::TempDir dir("trainer_all");
  auto [ds, store] = fixture::motion_pair_dataset(dir / "data", 2, 1, 50, 32, 32, 6);
  const auto make = [&](ActionLabel a) {
    if (a == ActionLabel::suction) return ClipDataset{a, {}, {}};
    auto d = ds;
    d.target_action = a;
    return d;
  };
  const std::vector<ActionLabel> actions(kTargetActions.begin(), kTargetActions.end());
  const auto runs = train_all(actions, make, store, small_model(), short_run(2), dir / "a");
  REQUIRE(runs.size() == 6);
  int ok = 0;
  for (const auto &r : runs) {
    if (r.action == ActionLabel::suction) {
      CHECK_FALSE(r.error.empty());
      CHECK_FALSE(std::filesystem::exists(dir / "a" / "suction"));
    } else {
      CHECK(r.error.empty());
      CHECK(std::filesystem::exists(r.checkpoint));
      CHECK(std::filesystem::exists(r.checkpoint.parent_path() / "history.csv"));
      ++ok;
    }
  }
  CHECK(ok == 5);

  const auto summary = nlohmann::json::parse(testing::slurp(dir / "a" / "summary.json"));
  CHECK(summary["suction"].contains("error"));
  CHECK(summary["knot_pushing"].contains("checkpoint_fnv1a"));

  // Per-action seeds differ, so models differ across actions.
  CHECK(testing::slurp(runs[0].checkpoint) != testing::slurp(runs[1].checkpoint));

  train_all(actions, make, store, small_model(), short_run(2), dir / "b");
  const auto again = nlohmann::json::parse(testing::slurp(dir / "b" / "summary.json"));
  for (const auto &[name, entry] : summary.items()) {
    if (entry.contains("error")) continue;
    CHECK(entry["checkpoint_fnv1a"] == again[name]["checkpoint_fnv1a"]);
  }
}

TEST_CASE("overfit sanity on the synthetic motion pair" * doctest::timeout(300)) {
  testing::TempDir dir("trainer_overfit");
  const auto out = testing::run_overfit(dir.path(), 1);
  CHECK(out.train_score.accuracy == 1.0);
  CHECK(out.train_score.loss < 0.05);
  CHECK(out.min_train_loss < 0.05);
  CHECK(out.result.history.size() <= 100);
}
