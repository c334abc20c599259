#include <doctest.h>

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "gradcheck.hpp"
#include "lapact/error.hpp"
#include "lapact/network.hpp"
#include "support.hpp"

using namespace lapact;
using namespace lapact::network;

namespace {

constexpr HeadKind kAllHeads[] = {HeadKind::fully_connected, HeadKind::lstm, HeadKind::gru,
                                  HeadKind::bilstm, HeadKind::bigru};

Eigen::VectorXd softmax(const Eigen::VectorXd &z) {
  const Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp().matrix();
  return e / e.sum();
}

CellWeights cell_of(const Parameters &p, const std::string &prefix) {
  return {p[prefix + ".w_input"], p[prefix + ".w_recurrent"], p[prefix + ".bias"]};
}

Eigen::MatrixXd random_features(int t, int d, std::mt19937_64 &rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd f(t, d);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = n(rng);
  return f;
}

// Maps a frame to a fixed feature: mean pixel on axis 0, its complement on axis 1.
class MeanPixelExtractor : public FeatureExtractor {
public:
  explicit MeanPixelExtractor(int d) : d_(d) {}
  Eigen::MatrixXd extract(std::span<const Image> frames) const override {
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(frames.size()), d_);
    for (std::size_t t = 0; t < frames.size(); ++t) {
      double m = 0;
      for (double v : frames[t].data) m += v;
      m /= static_cast<double>(frames[t].data.size());
      f(static_cast<Eigen::Index>(t), 0) = m;
      f(static_cast<Eigen::Index>(t), 1) = 1.0 - m;
    }
    return f;
  }

private:
  int d_;
};

} // namespace

TEST_CASE("config names and validation") {
  for (auto h : kAllHeads) CHECK(parse_head_kind(to_string(h)) == h);
  CHECK(display_name(HeadKind::bilstm) == "BiLSTM");
  CHECK(display_name(HeadKind::fully_connected) == "Fully Connected");
  CHECK(parse_backbone_kind("resnet50") == BackboneKind::resnet50);
  CHECK_THROWS_AS(parse_head_kind("transformer"), ConfigError);

  ModelConfig c;
  CHECK_NOTHROW(validate(c));
  CHECK(c.head.rnn_units_1 == 128);
  CHECK(c.head.rnn_units_2 == 64);
  CHECK(c.head.fc_units_1 == 256);
  CHECK(c.head.fc_units_2 == 64);
  CHECK(c.head.fc_dropout == 0.5);
  CHECK(c.head.inter_layer_dropout == 0.5);
  CHECK(c.backbone.feature_dim == 128);
  c.backbone.feature_dim = 64;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.head.num_classes = 3;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.head.fc_dropout = 1.0;
  CHECK_THROWS_AS(validate(c), ConfigError);

  ModelConfig t = testing::tiny_config(HeadKind::bigru, 9);
  t.head.readout = Readout::mean;
  const auto back = model_config_from_json(to_json(t));
  CHECK(to_json(back) == to_json(t));
  CHECK(back.head.readout == Readout::mean);
  CHECK(back.backbone.stages.size() == 2);
}

TEST_CASE("backbone shape contract at full geometry") {
  ModelConfig c;
  c.head.kind = HeadKind::lstm;
  Model m(c);
  std::mt19937_64 rng(1);
  auto frames = testing::random_frames(20, 224, 224, rng);
  const auto f = m.backbone_forward(frames);
  CHECK(f.rows() == 20);
  CHECK(f.cols() == 128);
  const auto p = m.forward(frames, false);
  REQUIRE(p.size() == 2);
  CHECK(std::abs(p.sum() - 1.0) < 1e-6);
}

TEST_CASE("backbone is stateless across time") {
  Model m(testing::tiny_config(HeadKind::lstm, 3));
  std::mt19937_64 rng(2);
  auto frames = testing::random_frames(6, 8, 8, rng);
  frames[4] = frames[1];
  const auto f = m.backbone_forward(frames);
  CHECK(f.row(4) == f.row(1));
  const auto alone = m.backbone_forward(std::vector<Image>{frames[1]});
  CHECK(alone.row(0) == f.row(1));
}

TEST_CASE("geometry and availability errors") {
  std::mt19937_64 rng(3);
  auto cfg = testing::tiny_config(HeadKind::gru, 1);
  cfg.backbone.input_height = 8;
  cfg.backbone.input_width = 8;
  Model m(cfg);
  CHECK_THROWS_AS(m.backbone_forward(testing::random_frames(2, 9, 8, rng)), PreconditionError);
  auto mixed = testing::random_frames(2, 8, 8, rng);
  mixed[1] = Image(8, 7);
  CHECK_THROWS_AS(m.backbone_forward(mixed), PreconditionError);
  CHECK_THROWS_AS(m.backbone_forward(std::vector<Image>{}), PreconditionError);

  ModelConfig named;
  named.backbone.kind = BackboneKind::resnet50;
  try {
    Model r(named);
    FAIL("expected unavailable backbone");
  } catch (const ConfigError &e) {
    CHECK(std::string(e.what()).find("unavailable backbone") != std::string::npos);
  }
  named.backbone.feature_dim = 2;
  named.head.kind = HeadKind::lstm;
  Model ext(named, std::make_shared<MeanPixelExtractor>(2));
  const auto p = ext.forward(testing::random_frames(3, 5, 5, rng), false);
  CHECK(std::abs(p.sum() - 1.0) < 1e-12);
}

TEST_CASE("head dispatch is checked") {
  Model rec(testing::tiny_config(HeadKind::lstm, 1));
  Model stat(testing::tiny_config(HeadKind::fully_connected, 1));
  CHECK_THROWS_AS(rec.static_head_forward(Eigen::VectorXd::Zero(8), false), ConfigError);
  CHECK_THROWS_AS(stat.recurrent_head_forward(Eigen::MatrixXd::Zero(4, 8), false), ConfigError);
  CHECK_THROWS_AS(rec.recurrent_head_forward(Eigen::MatrixXd::Zero(4, 7), false), PreconditionError);
}

TEST_CASE("softmax outputs are probability vectors for every head") {
  std::mt19937_64 rng(4);
  for (auto head : kAllHeads)
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Model m(testing::tiny_config(head, seed));
      const auto frames = testing::random_frames(4, 8, 8, rng);
      for (bool training : {false, true}) {
        const auto p = m.forward(frames, training, seed);
        REQUIRE(p.size() == 2);
        CHECK(p.minCoeff() >= 0.0);
        CHECK(std::abs(p.sum() - 1.0) < 1e-6);
      }
    }
}

TEST_CASE("recurrent head at full width") {
  ModelConfig c;
  c.head.kind = HeadKind::lstm;
  Model m(c);
  std::mt19937_64 rng(5);
  const auto p = m.recurrent_head_forward(random_features(20, 128, rng), false);
  REQUIRE(p.size() == 2);
  CHECK(std::abs(p.sum() - 1.0) < 1e-6);
  CHECK(m.parameters()["head.rnn1.fwd.w_recurrent"].cols() == 128);
  CHECK(m.parameters()["head.rnn2.fwd.w_recurrent"].cols() == 64);

  c.head.kind = HeadKind::bilstm;
  Model b(c);
  CHECK(b.parameters()["head.rnn1.bwd.w_recurrent"].cols() == 128);
  CHECK(b.parameters()["head.rnn2.fwd.w_input"].cols() == 256);
  CHECK(b.parameters()["head.out.weight"].cols() == 128);
}

TEST_CASE("zero parameters give (0.5, 0.5)") {
  std::mt19937_64 rng(6);
  const auto frames = testing::random_frames(4, 8, 8, rng);
  for (auto head : kAllHeads) {
    Model m(testing::tiny_config(head, 2));
    auto zero = m.parameters().zeros_like();
    m.set_parameters(zero);
    const auto p = m.forward(frames, false);
    CHECK(p(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(p(1) == doctest::Approx(0.5).epsilon(1e-15));
    if (head == HeadKind::fully_connected) {
      const auto s = m.static_head_forward(Eigen::VectorXd::Random(8), false);
      CHECK(s(0) == doctest::Approx(0.5).epsilon(1e-15));
    } else {
      const auto r = m.recurrent_head_forward(random_features(4, 8, rng), false);
      CHECK(r(1) == doctest::Approx(0.5).epsilon(1e-15));
    }
  }
}

TEST_CASE("bidirectional layers decompose into independent runs") {
  std::mt19937_64 rng(7);
  for (auto head : {HeadKind::bilstm, HeadKind::bigru}) {
    const auto kind = head == HeadKind::bilstm ? CellKind::lstm : CellKind::gru;
    Model m(testing::tiny_config(head, 11));
    const auto &P = m.parameters();
    const Eigen::MatrixXd x = random_features(4, 8, rng).transpose(); // D x T

    // Backward direction = forward run over reversed input, re-reversed.
    const auto bwd1 = run_cell(kind, cell_of(P, "head.rnn1.bwd"), x, true);
    const auto bwd1_rev = reverse_columns(run_cell(kind, cell_of(P, "head.rnn1.bwd"), reverse_columns(x), false));
    CHECK(bwd1 == bwd1_rev);

    const auto fwd1 = run_cell(kind, cell_of(P, "head.rnn1.fwd"), x, false);
    Eigen::MatrixXd layer1(fwd1.rows() + bwd1.rows(), x.cols());
    layer1 << fwd1, bwd1_rev;
    const auto fwd2 = run_cell(kind, cell_of(P, "head.rnn2.fwd"), layer1, false);
    const auto bwd2 = reverse_columns(
        run_cell(kind, cell_of(P, "head.rnn2.bwd"), reverse_columns(layer1), false));

    ForwardTrace trace;
    const auto p = m.recurrent_head_forward(x.transpose(), false, 0, &trace);
    Eigen::MatrixXd layer2(fwd2.rows() + bwd2.rows(), x.cols());
    layer2 << fwd2, bwd2;
    CHECK(trace.layer1_out == layer1);
    CHECK(trace.layer2_out == layer2);

    Eigen::VectorXd readout(fwd2.rows() * 2);
    readout << fwd2.col(x.cols() - 1), bwd2.col(0);
    const Eigen::VectorXd expect =
        softmax(P["head.out.weight"] * readout + P["head.out.bias"].col(0));
    CHECK(p == expect);
  }
}

TEST_CASE("static clip decision averages frame probabilities") {
  ModelConfig c = testing::tiny_config(HeadKind::fully_connected, 1);
  c.backbone.kind = BackboneKind::resnet50;
  c.backbone.feature_dim = 2;
  c.head.fc_units_1 = 2;
  c.head.fc_units_2 = 2;
  Model m(c, std::make_shared<MeanPixelExtractor>(2));
  auto P = m.parameters().zeros_like();

  SUBCASE("identical frames") {
    P["head.out.bias"](0, 0) = std::log(0.9);
    P["head.out.bias"](1, 0) = std::log(0.1);
    m.set_parameters(P);
    const auto p = m.forward(std::vector<Image>(5, Image(3, 3, 0.4)), false);
    CHECK(p(0) == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(p(1) == doctest::Approx(0.1).epsilon(1e-12));
  }
  SUBCASE("opposite frames cancel") {
    // Identity dense layers; logits +-40 depending on which feature is on.
    P["head.fc1.weight"] = Eigen::MatrixXd::Identity(2, 2);
    P["head.fc2.weight"] = Eigen::MatrixXd::Identity(2, 2);
    P["head.out.weight"] << 40, -40, -40, 40;
    m.set_parameters(P);
    std::vector<Image> frames;
    for (int i = 0; i < 4; ++i) frames.push_back(Image(3, 3, i % 2 == 0 ? 1.0 : 0.0));
    const auto p = m.forward(frames, false);
    CHECK(p(0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p(1) == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("inference is deterministic; training dropout follows its seed") {
  std::mt19937_64 rng(8);
  const auto frames = testing::random_frames(4, 8, 8, rng);
  for (auto head : kAllHeads) {
    Model m(testing::tiny_config(head, 5));
    CHECK(m.forward(frames, false) == m.forward(frames, false));
    CHECK(m.forward(frames, true, 3) == m.forward(frames, true, 3));
    CHECK(m.forward(frames, true, 3) != m.forward(frames, true, 4));
    if (head == HeadKind::fully_connected) {
      const Eigen::VectorXd f = Eigen::VectorXd::Random(8);
      CHECK(m.static_head_forward(f, false) == m.static_head_forward(f, false));
    }
  }
}

TEST_CASE("frame order matters to unidirectional heads, not to the static baseline") {
  std::mt19937_64 rng(9);
  for (auto head : kAllHeads) {
    Model m(testing::tiny_config(head, 13));
    const auto frames = testing::random_frames(4, 8, 8, rng);
    const std::vector<Image> reversed(frames.rbegin(), frames.rend());
    const auto a = m.forward(frames, false), b = m.forward(reversed, false);
    if (head == HeadKind::fully_connected) {
      CHECK(a == b);
      std::vector<Image> shuffled = frames;
      std::swap(shuffled[0], shuffled[2]);
      CHECK(m.forward(shuffled, false) == a);
    } else if (head == HeadKind::lstm || head == HeadKind::gru) {
      CHECK((a - b).cwiseAbs().maxCoeff() > 1e-8);
    }
  }
}

TEST_CASE("backward contract") {
  std::mt19937_64 rng(10);
  const auto frames = testing::random_frames(4, 8, 8, rng);
  for (auto head : kAllHeads) {
    Model m(testing::tiny_config(head, 3));
    ForwardTrace trace;
    m.forward(frames, true, 1, &trace);
    const auto zero = m.backward(trace, Eigen::VectorXd::Zero(2));
    CHECK(zero.same_layout(m.parameters()));
    for (std::size_t i = 0; i < zero.size(); ++i) CHECK(zero.value(i).isZero(0.0));

    const auto g = m.backward(trace, Eigen::Vector2d(1.0, -1.0));
    CHECK(g.same_layout(m.parameters()));
    CHECK_THROWS_AS(m.backward(trace, Eigen::VectorXd::Zero(3)), PreconditionError);

    Model other(testing::tiny_config(head, 3));
    CHECK_THROWS_AS(other.backward(trace, Eigen::Vector2d(1.0, 0.0)), PreconditionError);
    m.mutable_parameters();
    CHECK_THROWS_AS(m.backward(trace, Eigen::Vector2d(1.0, 0.0)), PreconditionError);
  }
}

TEST_CASE("analytic gradients match central differences") {
  // Draws where a perturbation flips a ReLU are not valid finite-difference
  // references; the first kink-free draw per head is checked.
  for (auto head : kAllHeads) {
    bool checked = false;
    for (std::uint64_t seed = 1; seed <= 10 && !checked; ++seed) {
      Model m(testing::tiny_config(head, seed));
      std::mt19937_64 rng(seed * 31);
      const auto frames = testing::random_frames(4, 8, 8, rng);
      const auto r = testing::gradient_check(m, frames, Eigen::Vector2d(1.3, -0.7), 77 + seed);
      CHECK(r.shapes_ok);
      if (r.kink_crossings > 0) continue;
      INFO(to_string(head), " worst ", r.worst);
      CHECK(r.max_rel_error < 1e-4);
      CHECK(r.checked == m.parameters().scalar_count());
      checked = true;
    }
    CHECK(checked);
  }
}

TEST_CASE("mean readout gradients") {
  for (auto head : {HeadKind::lstm, HeadKind::bigru}) {
    auto c = testing::tiny_config(head, 2);
    c.head.readout = Readout::mean;
    Model m(c);
    std::mt19937_64 rng(62);
    const auto frames = testing::random_frames(4, 8, 8, rng);
    const auto r = testing::gradient_check(m, frames, Eigen::Vector2d(0.4, 1.1), 5);
    REQUIRE(r.kink_crossings == 0);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  testing::TempDir dir("net_ckpt");
  std::mt19937_64 rng(11);
  const auto frames = testing::random_frames(4, 8, 8, rng);
  for (auto head : kAllHeads) {
    Model m(testing::tiny_config(head, 21));
    const auto path = dir / (std::string(to_string(head)) + ".bin");
    save_checkpoint(m, path);
    CHECK(std::filesystem::exists(dir / (std::string(to_string(head)) + ".json")));
    const auto loaded = load_checkpoint(path);
    CHECK(loaded.parameters() == m.parameters());
    CHECK(loaded.forward(frames, false) == m.forward(frames, false));
    CHECK(to_json(loaded.config()) == to_json(m.config()));
  }

  write_parameters(Model(testing::tiny_config(HeadKind::gru, 1)).parameters(), dir / "gru_params.bin");
  CHECK(read_parameters(dir / "gru_params.bin") == Model(testing::tiny_config(HeadKind::gru, 1)).parameters());

  // Config says LSTM, tensors are GRU-shaped.
  std::filesystem::copy_file(dir / "lstm.json", dir / "mixed.json");
  std::filesystem::copy_file(dir / "gru_params.bin", dir / "mixed.bin");
  try {
    load_checkpoint(dir / "mixed.bin");
    FAIL("expected incompatible checkpoint");
  } catch (const ConfigError &e) {
    CHECK(std::string(e.what()).find("incompatible checkpoint") != std::string::npos);
  }
  testing::spit(dir / "junk.bin", "not a checkpoint at all");
  CHECK_THROWS_AS(read_parameters(dir / "junk.bin"), ParseError);
  CHECK_THROWS_AS(read_parameters(dir / "absent.bin"), IoError);
}

TEST_CASE("initialization is seeded") {
  const auto a = Model(testing::tiny_config(HeadKind::bilstm, 1)).parameters();
  const auto b = Model(testing::tiny_config(HeadKind::bilstm, 1)).parameters();
  const auto c = Model(testing::tiny_config(HeadKind::bilstm, 2)).parameters();
  CHECK(a == b);
  CHECK_FALSE(a == c);
  // Orthogonal recurrent blocks.
  const auto &u = a["head.rnn1.fwd.w_recurrent"];
  for (int g = 0; g < 4; ++g) {
    const Eigen::MatrixXd block = u.middleRows(g * 8, 8);
    CHECK((block.transpose() * block - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK(a["head.rnn1.fwd.bias"](8, 0) == 1.0); // forget gate
  CHECK(a["head.rnn1.fwd.bias"](0, 0) == 0.0);
}
