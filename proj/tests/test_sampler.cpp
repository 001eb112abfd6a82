#include "eradiff/sampler.hpp"
#include "eradiff/train.hpp"

#include <doctest.h>

using namespace eradiff;

namespace {

const NoiseSchedule& sched() {
  static const NoiseSchedule s = build_schedule(ScheduleKind::linear, 200, 1e-4, 0.02);
  return s;
}

ScenePair scene(std::uint64_t seed) {
  for (;; ++seed) {
    try {
      return generate_scene(seed, SceneConfig{});
    } catch (const std::runtime_error&) {
    }
  }
}

EpsFunction zero_denoiser() {
  return [](const Eigen::ArrayXd& x, int, int, std::size_t) -> Eigen::ArrayXd { return Eigen::ArrayXd::Zero(x.size()); };
}

double max_err(const Image& a, const Image& b) { return (a.data - b.data).abs().maxCoeff(); }

}  // namespace

TEST_CASE("step grid") {
  CHECK(step_grid(20, 4) == std::vector<int>{20, 15, 10, 5, 0});
  CHECK(step_grid(190, 20).front() == 190);
  CHECK(step_grid(190, 20).back() == 0);
  CHECK(step_grid(190, 20).size() == 21);
  CHECK(step_grid(7, 7) == std::vector<int>{7, 6, 5, 4, 3, 2, 1, 0});
  CHECK_THROWS_AS(step_grid(3, 5), std::invalid_argument);
  CHECK_THROWS_AS(step_grid(0, 1), std::invalid_argument);
}

TEST_CASE("the oracle denoiser over the full unit grid returns the original image") {
  const ScenePair p = scene(3);
  SampleConfig c;
  c.strength = 1.0;
  c.steps = 200;
  c.seed = 17;
  for (bool exact : {true, false}) {
    const EraseResult r = erase_sample(oracle_denoiser(p, sched(), exact), p.x0_obj, p.mask, c, sched());
    CHECK(max_err(r.output, p.x0_ori) < 1e-6);
  }
}

TEST_CASE("the exact oracle reproduces x0_ori at any strength and grid") {
  const ScenePair p = scene(8);
  for (double s : {0.3, 0.6, 0.95}) {
    SampleConfig c;
    c.strength = s;
    c.steps = 20;
    const EraseResult r = erase_sample(oracle_denoiser(p, sched()), p.x0_obj, p.mask, c, sched());
    CHECK(max_err(r.output, p.x0_ori) < 1e-6);
  }
}

TEST_CASE("refining the grid shrinks the single-step oracle's error") {
  const ScenePair p = scene(5);
  double previous = std::numeric_limits<double>::infinity();
  for (int steps : {5, 10, 20, 200}) {
    SampleConfig c;
    c.strength = 1.0;
    c.steps = steps;
    c.seed = 4;
    const EraseResult r = erase_sample(oracle_denoiser(p, sched(), false), p.x0_obj, p.mask, c, sched());
    const double err = max_err(r.output, p.x0_ori);
    MESSAGE("steps " << steps << ": max error " << err);
    CHECK(err < previous);
    previous = err;
  }
  CHECK(previous < 1e-6);
}

TEST_CASE("near-zero strength with one step leaves the input almost unchanged") {
  const ScenePair p = scene(2);
  SampleConfig c;
  c.strength = 1.0 / 200.0;
  c.steps = 1;
  const EraseResult r = erase_sample(zero_denoiser(), p.x0_obj, p.mask, c, sched());
  CHECK(r.trajectory.timesteps == std::vector<int>{1, 0});
  CHECK(max_err(r.output, p.x0_obj) < 0.05);
  CHECK((r.output.data - p.x0_obj.data).abs().mean() < 0.01);
}

TEST_CASE("sampling is deterministic, keeps the background and records the trajectory") {
  const ScenePair p = scene(6);
  SampleConfig c;
  c.seed = 99;
  auto wobble = [](const Eigen::ArrayXd& x, int t, int, std::size_t) -> Eigen::ArrayXd { return 0.3 * x.sin() + 1e-3 * t; };
  const EraseResult a = erase_sample(wobble, p.x0_obj, p.mask, c, sched());
  const EraseResult b = erase_sample(wobble, p.x0_obj, p.mask, c, sched());
  CHECK((a.output.data == b.output.data).all());

  const Eigen::ArrayXd keep = 1.0 - p.mask.broadcast(3);
  for (Eigen::Index i = 0; i < keep.size(); ++i)
    if (keep(i) == 1.0) REQUIRE(a.output.data(i) == p.x0_obj.data(i));
  CHECK(a.output.data.minCoeff() >= 0.0);
  CHECK(a.output.data.maxCoeff() <= 1.0);

  CHECK(a.trajectory.timesteps.size() == static_cast<std::size_t>(c.steps + 1));
  CHECK(a.trajectory.states.size() == static_cast<std::size_t>(c.steps + 1));
  CHECK(a.trajectory.x0_estimates.size() == static_cast<std::size_t>(c.steps + 1));
  CHECK(a.trajectory.timesteps.front() == 190);
  CHECK(a.trajectory.timesteps.back() == 0);

  SampleConfig other = c;
  other.seed = 100;
  CHECK_FALSE((erase_sample(wobble, p.x0_obj, p.mask, other, sched()).output.data == a.output.data).all());
}

TEST_CASE("sampler preconditions") {
  const ScenePair p = scene(1);
  SampleConfig c;
  CHECK_THROWS_AS(erase_sample(zero_denoiser(), p.x0_obj, Mask(p.mask.height, p.mask.width, 1), c, sched()), std::domain_error);
  c.strength = 0.02;  // t_start = 4 < 20 steps
  CHECK_THROWS_AS(erase_sample(zero_denoiser(), p.x0_obj, p.mask, c, sched()), std::invalid_argument);
  c = SampleConfig{};
  c.strength = 0.0;
  CHECK_THROWS_AS(erase_sample(zero_denoiser(), p.x0_obj, p.mask, c, sched()), std::invalid_argument);
  c = SampleConfig{};
  c.steps = 0;
  CHECK_THROWS_AS(erase_sample(zero_denoiser(), p.x0_obj, p.mask, c, sched()), std::invalid_argument);
  Image bright = p.x0_obj;
  bright.data(0) = 1.5;
  CHECK_THROWS_AS(erase_sample(zero_denoiser(), bright, p.mask, SampleConfig{}, sched()), std::invalid_argument);
}

TEST_CASE("leakage probe") {
  const ScenePair p = scene(9);
  CHECK(leakage_probe(oracle_denoiser(p, sched()), p, {}, SampleConfig{}, sched()).results.empty());
  const LeakageBundle b = leakage_probe(oracle_denoiser(p, sched()), p, {0.95, 0.6}, SampleConfig{}, sched());
  REQUIRE(b.results.size() == 2);
  for (const auto& r : b.results) CHECK(max_err(r.output, p.x0_ori) < 1e-6);
  CHECK(b.results[1].trajectory.timesteps.front() == 120);
  CHECK_THROWS_AS(leakage_probe(zero_denoiser(), p, {1.2}, SampleConfig{}, sched()), std::invalid_argument);
}

TEST_CASE("the network denoiser runs a whole batch per step") {
  DenoiserConfig mc;
  mc.widths = {4, 8, 8};
  mc.attention_dim = 8;
  mc.time_dim = 8;
  const auto model = build_denoiser<float>(mc, 1);
  const ScenePair p = scene(1), q = scene(2);
  const std::vector<EraseItem> items{{&p.x0_obj, &p.mask, 1}, {&q.x0_obj, &q.mask, 2}};
  SampleConfig c;
  c.steps = 5;
  const auto res = erase_sample_batch(model_denoiser(model, items, std::nullopt), items, c, sched());
  REQUIRE(res.size() == 2);
  CHECK(res[0].output.same_shape(p.x0_obj));
  CHECK(res[0].output.data.allFinite());
  const auto again = erase_sample_batch(model_denoiser(model, items, std::nullopt), items, c, sched());
  CHECK((again[1].output.data == res[1].output.data).all());
}
