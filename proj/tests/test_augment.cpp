#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include <nlohmann/json.hpp>

#include "lapact/augment.hpp"
#include "lapact/error.hpp"
#include "support.hpp"

using namespace lapact;
using namespace lapact::augment;

namespace {

Frames one(const Image &img) { return {img}; }

std::vector<Clip> target_clips(int n) {
  std::vector<Clip> out;
  for (int i = 0; i < n; ++i) out.push_back({"v", ActionLabel::suction, 50 * i, 50, std::nullopt});
  return out;
}

// Independent Gaussian: weights exp(-k^2 / 2 sigma^2) on [-ceil(3 sigma), ceil(3 sigma)].
std::vector<double> oracle_kernel(double sigma) {
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> w;
  double sum = 0;
  for (int k = -r; k <= r; ++k) {
    w.push_back(std::exp(-(k * k) / (2 * sigma * sigma)));
    sum += w.back();
  }
  for (auto &v : w) v /= sum;
  return w;
}

} // namespace

TEST_CASE("gamma") {
  Image img(1, 3);
  img.data = {0.25, 0.25, 0.25, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0};
  const auto out = apply_gamma(one(img), 0.5)[0];
  CHECK(out.at(0, 0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(out.at(0, 1, 2) == 1.0);
  CHECK(out.at(0, 2, 1) == 0.0);
  CHECK(apply_gamma(one(img), 3.0)[0].at(0, 1, 0) == 1.0);
  CHECK_THROWS_AS(apply_gamma(one(img), 0.0), PreconditionError);
  CHECK_THROWS_AS(apply_gamma(one(img), -1.0), PreconditionError);
}

TEST_CASE("gaussian kernel matches the direct construction") {
  for (double sigma : {0.5, 1.0, 2.5, 10.0}) {
    const auto k = gaussian_kernel(sigma);
    const auto o = oracle_kernel(sigma);
    REQUIRE(k.size() == o.size());
    double sum = 0;
    for (std::size_t i = 0; i < k.size(); ++i) {
      CHECK(k[i] == doctest::Approx(o[i]).epsilon(1e-12));
      sum += k[i];
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
  CHECK(gaussian_kernel(10.0).size() == 61);
}

TEST_CASE("blur keeps constant frames and spreads an impulse by the kernel peak") {
  const auto flat = apply_gaussian_blur(one(Image(40, 30, 0.7)), 10.0)[0];
  for (double v : flat.data) CHECK(std::abs(v - 0.7) < 1e-6);

  Image impulse(224, 224, 0.0);
  for (int c = 0; c < 3; ++c) impulse.at(112, 112, c) = 1.0;
  const auto out = apply_gaussian_blur(one(impulse), 10.0)[0];
  const auto k = oracle_kernel(10.0);
  const double peak = k[k.size() / 2] * k[k.size() / 2];
  for (int c = 0; c < 3; ++c) CHECK(out.at(112, 112, c) == doctest::Approx(peak).epsilon(1e-12));
}

TEST_CASE("blur reflect padding is mirror without edge repeat") {
  // Row [0, 1, 0, 0] with a 3-tap kernel: x=0 sees (1, 0, 1) under reflect.
  Image img(1, 4, 0.0);
  for (int c = 0; c < 3; ++c) img.at(0, 1, c) = 1.0;
  const double sigma = 0.3; // radius 1
  const auto k = gaussian_kernel(sigma);
  REQUIRE(k.size() == 3);
  const auto out = apply_gaussian_blur(one(img), sigma)[0];
  CHECK(out.at(0, 0, 0) == doctest::Approx(k[0] + k[2]).epsilon(1e-12));
  CHECK(out.at(0, 1, 0) == doctest::Approx(k[1]).epsilon(1e-12));
  CHECK(out.at(0, 2, 0) == doctest::Approx(k[0]).epsilon(1e-12));
  CHECK(out.at(0, 3, 0) == doctest::Approx(0.0));
}

TEST_CASE("brightness clamps") {
  Image img(1, 2);
  img.data = {0.5, 0.9, 0.1, 0.5, 0.9, 0.1};
  const auto up = apply_brightness(one(img), 0.2)[0];
  CHECK(up.data[0] == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(up.data[1] == 1.0);
  const auto down = apply_brightness(one(img), -0.2)[0];
  CHECK(down.data[2] == 0.0);
  CHECK(down.data[0] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK_THROWS_AS(apply_brightness(one(img), 1.5), PreconditionError);
}

TEST_CASE("saturation") {
  Image gray(1, 1);
  gray.data = {0.4, 0.4, 0.4};
  CHECK(apply_saturation(one(gray), 1.5)[0] == gray);
  // Random gray levels, including ones whose weighted luma would not round back.
  std::mt19937_64 gray_rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const double v = u(gray_rng);
    gray.data = {v, v, v};
    for (double f : {0.0, 0.5, 1.5, 3.0}) CHECK(apply_saturation(one(gray), f)[0] == gray);
  }

  Image red(1, 1);
  red.data = {1.0, 0.0, 0.0};
  const auto sat = apply_saturation(one(red), 1.5)[0];
  // Hand oracle: gray 0.299; R = 0.299 + 1.5*0.701 > 1, G = B = 0.299 - 1.5*0.299 < 0.
  CHECK(sat.data[0] == 1.0);
  CHECK(sat.data[1] == 0.0);
  CHECK(sat.data[2] == 0.0);

  std::mt19937_64 rng(4);
  const auto img = testing::random_image(3, 3, rng);
  const auto flat = apply_saturation(one(img), 0.0)[0];
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) {
      const double g = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
      for (int c = 0; c < 3; ++c) CHECK(flat.at(y, x, c) == doctest::Approx(g).epsilon(1e-14));
    }
  CHECK_THROWS_AS(apply_saturation(one(img), -0.1), PreconditionError);
}

TEST_CASE("horizontal flip") {
  Image row(1, 3);
  row.data = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  const auto f = apply_horizontal_flip(one(row))[0];
  CHECK(f.data == std::vector<double>{0.7, 0.8, 0.9, 0.4, 0.5, 0.6, 0.1, 0.2, 0.3});

  std::mt19937_64 rng(9);
  const auto img = testing::random_image(7, 6, rng);
  CHECK(apply_horizontal_flip(apply_horizontal_flip(one(img)))[0] == img);

  Image sym(2, 4);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) sym.at(y, x, c) = 0.1 * (std::min(x, 3 - x) + y + c);
  CHECK(apply_horizontal_flip(one(sym))[0] == sym);
}

TEST_CASE("every transform maps [0,1] into [0,1]") {
  std::mt19937_64 rng(21);
  Frames frames;
  for (int i = 0; i < 3; ++i) frames.push_back(testing::random_image(12, 10, rng));
  const std::vector<Frames> outputs = {
      apply_gamma(frames, 0.5),           apply_gamma(frames, 2.0),
      apply_gaussian_blur(frames, 10.0),  apply_gaussian_blur(frames, 1.0),
      apply_brightness(frames, 0.2),      apply_brightness(frames, -0.2),
      apply_saturation(frames, 1.5),      apply_saturation(frames, 3.0),
      apply_horizontal_flip(frames)};
  for (const auto &out : outputs)
    for (const auto &f : out)
      for (double v : f.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
}

TEST_CASE("records apply identical parameters to every frame") {
  // Constant-per-frame patterns: every frame gets the same parameters, so equal
  // inputs give equal outputs regardless of position in the clip.
  std::mt19937_64 rng(2);
  const auto base = testing::random_image(9, 9, rng);
  const Frames frames(5, base);
  for (auto t : kTechniqueOrder) {
    AugmentationRecord r;
    r.technique = t;
    r.gamma = 0.5;
    r.blur_sigma = 2.0;
    r.brightness_delta = -0.2;
    r.saturation_factor = 1.5;
    r.flip_applied = true;
    const auto out = apply_record(frames, r);
    REQUIRE(out.size() == 5);
    for (const auto &f : out) CHECK(f == out[0]);
    CHECK(apply_record(frames, r)[3] == out[3]);
  }
  AugmentationRecord identity;
  identity.technique = Technique::horizontal_flip;
  identity.flip_applied = false;
  CHECK(apply_record(frames, identity)[0] == base);
}

TEST_CASE("plan_balance sizes and multiplicities") {
  const AugmentationSpec spec;
  const auto targets = target_clips(30);
  const auto plan = plan_balance(targets, 190, spec, 17);
  CHECK(plan.entries.size() == 160);
  CHECK(plan.target_count == 190);
  std::map<std::string, int> uses;
  for (const auto &e : plan.entries) ++uses[e.source.id()];
  CHECK(uses.size() == 30);
  for (const auto &[id, n] : uses) CHECK((n == 5 || n == 6));

  CHECK(plan_balance(target_clips(50), 50, spec, 1).entries.empty());
  CHECK_THROWS_AS(plan_balance(target_clips(50), 30, spec, 1), PreconditionError);
  CHECK_THROWS_AS(plan_balance({}, 30, spec, 1), PreconditionError);
}

TEST_CASE("plan_balance resolves parameters deterministically") {
  const AugmentationSpec spec;
  const auto targets = target_clips(7);
  const auto a = plan_balance(targets, 60, spec, 5);
  const auto b = plan_balance(targets, 60, spec, 5);
  const auto c = plan_balance(targets, 60, spec, 6);
  REQUIRE(a.entries.size() == 53);
  bool differs = false;
  std::map<Technique, int> techniques;
  std::set<std::string> outputs;
  for (std::size_t k = 0; k < a.entries.size(); ++k) {
    const auto &ra = a.entries[k].record;
    const auto &rb = b.entries[k].record;
    CHECK(to_json(ra) == to_json(rb));
    differs |= to_json(ra) != to_json(c.entries[k].record);
    // Round-robin sources.
    CHECK(a.entries[k].source.id() == targets[k % targets.size()].id());
    CHECK(ra.source_clip_id == a.entries[k].source.id());
    ++techniques[ra.technique];
    outputs.insert(ra.output_clip_id);
    if (ra.technique == Technique::brightness) CHECK(std::abs(ra.brightness_delta) == 0.2);
    if (ra.technique == Technique::gamma_contrast) CHECK(ra.gamma == 0.5);
    if (ra.technique == Technique::gaussian_blur) CHECK(ra.blur_sigma == 10.0);
    if (ra.technique == Technique::saturation) CHECK(ra.saturation_factor == 1.5);
  }
  CHECK(differs);
  CHECK(techniques.size() == 5);
  CHECK(outputs.size() == a.entries.size());
  // First lap walks the table order.
  for (std::size_t k = 0; k < 5; ++k) CHECK(a.entries[k].record.technique == kTechniqueOrder[k]);
}

TEST_CASE("plan JSON lines round-trip") {
  testing::TempDir dir("aug_jsonl");
  const auto plan = plan_balance(target_clips(3), 20, AugmentationSpec{}, 8);
  write_plan_jsonl(plan, dir / "plan.jsonl");
  const auto back = read_plan_jsonl(dir / "plan.jsonl");
  REQUIRE(back.size() == plan.entries.size());
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(to_json(back[i]) == to_json(plan.entries[i].record));
}

TEST_CASE("materialize writes reproducible augmented clips") {
  testing::TempDir dir("aug_mat");
  const auto frames = dir / "frames";
  std::filesystem::create_directories(frames);
  std::mt19937_64 rng(12);
  for (int i = 0; i < 12; ++i) write_png(frame_path(frames, i), testing::random_image(16, 16, rng));
  FrameStore store;
  store.add_video("v", frames);
  store.set_augmented_root(dir / "aug");

  const std::vector<Clip> targets = {{"v", ActionLabel::suction, 0, 6, std::nullopt},
                                     {"v", ActionLabel::suction, 6, 6, std::nullopt}};
  const auto plan = plan_balance(targets, 9, AugmentationSpec{}, 3);
  const auto clips = materialize(plan, store, dir / "aug");
  REQUIRE(clips.size() == 7);
  CHECK(targets.size() + clips.size() == 9);

  std::map<std::string, std::string> first;
  for (const auto &c : clips) {
    REQUIRE(c.augmentation.has_value());
    CHECK(c.length == 6);
    CHECK(c.label == ActionLabel::suction);
    for (int t = 0; t < 6; ++t) first[c.id() + std::to_string(t)] = testing::slurp(store.path_of(c, t));
  }
  // Re-applying the record to the source reproduces the stored pixels (to 8-bit).
  for (std::size_t k = 0; k < clips.size(); ++k) {
    Frames src;
    for (int t = 0; t < 6; ++t) src.push_back(store.load(plan.entries[k].source, t));
    const auto expect = apply_record(src, plan.entries[k].record);
    for (int t = 0; t < 6; ++t) {
      const auto got = store.load(clips[k], t);
      for (std::size_t i = 0; i < got.data.size(); ++i)
        REQUIRE(std::abs(got.data[i] - expect[t].data[i]) <= 0.5 / 255.0 + 1e-12);
    }
  }

  const auto again = materialize(plan, store, dir / "aug");
  for (const auto &c : again)
    for (int t = 0; t < 6; ++t) CHECK(testing::slurp(store.path_of(c, t)) == first[c.id() + std::to_string(t)]);

  const auto none = materialize(BalancePlan{}, store, dir / "empty");
  CHECK(none.empty());
  CHECK_FALSE(std::filesystem::exists(dir / "empty"));
}

TEST_CASE("materialize names the clip when a source frame is missing") {
  testing::TempDir dir("aug_missing");
  FrameStore store;
  store.add_video("v", dir / "nothing");
  const std::vector<Clip> targets = {{"v", ActionLabel::suction, 0, 3, std::nullopt}};
  const auto plan = plan_balance(targets, 2, AugmentationSpec{}, 3);
  try {
    materialize(plan, store, dir / "aug");
    FAIL("expected an I/O error");
  } catch (const IoError &e) {
    CHECK(std::string(e.what()).find("v_0_3") != std::string::npos);
  }
}

TEST_CASE("augmentation spec validation") {
  AugmentationSpec s;
  CHECK_NOTHROW(s.validate());
  s.gamma = 0;
  CHECK_THROWS_AS(s.validate(), PreconditionError);
  s = {};
  s.flip_probability = 1.5;
  CHECK_THROWS_AS(s.validate(), PreconditionError);
  s = {};
  s.saturation_factor = -1;
  CHECK_THROWS_AS(s.validate(), PreconditionError);
  const AugmentationSpec d;
  const auto back = spec_from_json(to_json(d));
  CHECK(back.gamma == 0.5);
  CHECK(back.blur_sigma == 10.0);
  CHECK(back.brightness_delta == 0.2);
  CHECK(back.saturation_factor == 1.5);
  CHECK(back.flip_probability == 0.5);
}
