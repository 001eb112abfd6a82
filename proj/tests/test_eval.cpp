#include "eradiff/checkpoint.hpp"
#include "eradiff/eval.hpp"

#include <doctest.h>

#include <filesystem>

using namespace eradiff;
namespace fs = std::filesystem;

namespace {

const ScenePair& pair0() {
  static const ScenePair p = held_out_scenes(0, 1, SceneConfig{}).front().pair;
  return p;
}

DenoiserConfig tiny_model() {
  DenoiserConfig mc;
  mc.widths = {4, 8, 8};
  mc.attention_dim = 8;
  mc.time_dim = 8;
  return mc;
}

}  // namespace

TEST_CASE("elimination score endpoints") {
  const ScenePair& p = pair0();
  CHECK(elimination_score(p.x0_ori, p) == 1.0);
  CHECK(elimination_score(p.x0_obj, p) == 0.0);
  const HoleErrors e = hole_errors(p.x0_ori, p);
  CHECK(e.to_background == 0.0);
  CHECK(e.to_object > 0.0);
  CHECK(elimination_rate({p.x0_ori, p.x0_obj}, {&p, &p}) == 0.5);
  CHECK_THROWS_AS(elimination_rate({}, {}), std::invalid_argument);
}

TEST_CASE("elimination score ignores pixels outside the mask") {
  const auto scenes = held_out_scenes(0, 50, SceneConfig{});
  Rng rng(5);
  for (const auto& s : scenes) {
    Image mixed = s.pair.x0_obj;
    const Eigen::ArrayXd m = s.pair.mask.broadcast(mixed.channels);
    for (Eigen::Index i = 0; i < mixed.data.size(); ++i)
      mixed.data(i) = 0.5 * s.pair.x0_ori.data(i) + 0.5 * s.pair.x0_obj.data(i) + 0.01 * (i % 7);
    Image perturbed = mixed;
    for (Eigen::Index i = 0; i < perturbed.data.size(); ++i)
      if (m(i) == 0.0) perturbed.data(i) = rng.uniform();
    const HoleErrors a = hole_errors(mixed, s.pair), b = hole_errors(perturbed, s.pair);
    CHECK(a.to_background == b.to_background);
    CHECK(a.to_object == b.to_object);
    CHECK(elimination_score(mixed, s.pair) == elimination_score(perturbed, s.pair));
  }
}

TEST_CASE("empty masks are rejected") {
  ScenePair p = pair0();
  p.mask = Mask(p.mask.height, p.mask.width);
  CHECK_THROWS_AS(elimination_score(p.x0_ori, p), std::invalid_argument);
}

TEST_CASE("psnr") {
  const ScenePair& p = pair0();
  CHECK(coherence_psnr(p.x0_ori, p) == kInfinitePsnr);
  Image off = p.x0_ori;
  off.data += 0.1;
  CHECK(psnr(off, p.x0_ori) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK_THROWS_AS(psnr(off, Image(1, 4, 4)), std::invalid_argument);
}

TEST_CASE("report aggregation is the mean of the records") {
  EvalReport r;
  Rng rng(3);
  double e = 0.0, q = 0.0;
  for (int i = 0; i < 37; ++i) {
    SceneRecord s;
    s.seed = i;
    s.elimination = rng.uniform() < 0.6 ? 1.0 : 0.0;
    s.psnr = rng.uniform(10.0, 40.0);
    e += s.elimination;
    q += s.psnr;
    r.scenes.push_back(s);
  }
  r.aggregate();
  CHECK(std::abs(r.elimination_rate - e / 37.0) < 1e-12);
  CHECK(std::abs(r.mean_psnr - q / 37.0) < 1e-12);
  CHECK(r.elimination_rate >= 0.0);
  CHECK(r.elimination_rate <= 1.0);
}

TEST_CASE("held-out scenes") {
  const auto a = held_out_scenes(0, 30, SceneConfig{});
  REQUIRE(a.size() == 30);
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i].seed > a[i - 1].seed);
  for (const auto& s : a) CHECK((s.pair.x0_obj.data == generate_scene(s.seed, SceneConfig{}).x0_obj.data).all());
  CHECK_THROWS_AS(held_out_scenes(~0ULL >> 1, 5, SceneConfig{}), std::out_of_range);
}

TEST_CASE("chance baseline from uniform noise") {
  // Expected squared error of U(0,1) against a target a is 1/3 - a + a^2, so a
  // noise fill is expected to favour whichever image is nearer mid-grey in the
  // hole. The Monte-Carlo rate has to agree with that prediction.
  const auto scenes = held_out_scenes(0, 1000, SceneConfig{});
  double predicted = 0.0;
  for (const auto& s : scenes) {
    const Eigen::ArrayXd m = s.pair.mask.broadcast(s.pair.x0_ori.channels);
    auto expected = [&](const Eigen::ArrayXd& a) { return (m * (1.0 / 3.0 - a + a.square())).sum(); };
    predicted += expected(s.pair.x0_ori.data) < expected(s.pair.x0_obj.data) ? 1.0 : 0.0;
  }
  predicted /= static_cast<double>(scenes.size());

  double mean = 0.0;
  for (std::uint64_t k = 0; k < 10; ++k) mean += chance_elimination_rate(0, 1000, SceneConfig{}, k);
  mean /= 10.0;
  MESSAGE("chance floor " << mean << ", expected-error prediction " << predicted);
  CHECK(std::abs(mean - predicted) < 0.01);
  CHECK(std::abs(mean - kChanceEliminationFloor) < 1e-12);
}

TEST_CASE("ablation rows from identical checkpoints are identical") {
  const fs::path dir = fs::temp_directory_path() / "eradiff_test_ablation_rows";
  fs::create_directories(dir);
  const auto model = build_denoiser<float>(tiny_model(), 4);
  const std::string path = (dir / "same.bin").string();
  save_checkpoint(path, model, nullptr, {4, 0, "abc", "cro"});

  RunConfig c;
  c.model = tiny_model();
  c.sample.steps = 4;
  std::vector<std::pair<std::string, std::string>> cks;
  for (const auto& v : ablation_variants()) cks.push_back({v.name, path});
  const auto rows = evaluate_checkpoints(cks, c, 6, {3, 2});
  REQUIRE(rows.size() == 4);
  for (const auto& r : rows) {
    CHECK(r.elimination_rate == rows[0].elimination_rate);
    CHECK(r.mean_psnr == rows[0].mean_psnr);
  }

  cks[2].second = (dir / "absent.bin").string();
  try {
    evaluate_checkpoints(cks, c, 6, {});
    FAIL("expected a missing-checkpoint error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find(cks[2].first) != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("evaluation does not depend on batch size or thread count") {
  const auto model = build_denoiser<float>(tiny_model(), 8);
  const auto scenes = held_out_scenes(10, 5, SceneConfig{});
  SampleConfig s;
  s.steps = 4;
  const NoiseSchedule sched = ScheduleConfig{}.build();
  const EvalReport a = evaluate(model, scenes, s, sched, {5, 1});
  const EvalReport b = evaluate(model, scenes, s, sched, {5, 3});
  REQUIRE(a.scenes.size() == 5);
  for (std::size_t i = 0; i < a.scenes.size(); ++i) {
    CHECK(a.scenes[i].seed == scenes[i].seed);
    CHECK(a.scenes[i].mse_background == b.scenes[i].mse_background);
  }
}

TEST_CASE("no-mixup stats") {
  std::vector<TrainLogRecord> cro, calm, wild;
  for (int s = 1; s <= 40; ++s) {
    cro.push_back({s, 0.01});
    calm.push_back({s, 0.012});
    wild.push_back({s, s > 30 ? 0.5 : 0.01});
  }
  CHECK_FALSE(no_mixup_stats(calm, cro, 3.0).unstable);
  const NoMixupStats w = no_mixup_stats(wild, cro, 3.0);
  CHECK(w.unstable);
  CHECK(w.loss_ratio == doctest::Approx(50.0));
  calm[3].nan = true;
  CHECK(no_mixup_stats(calm, cro, 3.0).nan_count == 1);
  CHECK(no_mixup_stats(calm, cro, 3.0).unstable);
}
