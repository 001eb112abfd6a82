#include "eradiff/oracle.hpp"

#include "eradiff/train.hpp"

namespace eradiff {

Eigen::ArrayXd ddim_inverse_eps(const Eigen::ArrayXd& x_t, const Eigen::ArrayXd& target, int t, int t_prev,
                                const NoiseSchedule& schedule) {
  const DdimCoefficients k = ddim_coefficients(t, t_prev, schedule);
  return (target - k.c_x * x_t) / k.c_eps;
}

double oracle_identity_error(const ScenePair& pair, int t, const Eigen::ArrayXd& eps, const NoiseSchedule& schedule,
                             double corrupt_b) {
  const MixState now = make_mix_state(pair, t, eps, schedule);
  const MixState prev = make_mix_state(pair, t - 1, eps, schedule);
  const Eigen::ArrayXd eps_star = ddim_inverse_eps(now.x_t_mix, prev.x_t_mix, t, t - 1, schedule);
  OracleCoefficients k = oracle_coefficients(t, schedule);
  k.B += corrupt_b;
  const Eigen::ArrayXd lhs = k.G * eps_star;
  const Eigen::ArrayXd rhs = k.A * now.x_t_mix + k.B * pair.x0_obj.data + k.C * eps;
  const double scale = std::max({lhs.abs().maxCoeff(), rhs.abs().maxCoeff(), 1e-300});
  return (lhs - rhs).abs().maxCoeff() / scale;
}

double oracle_composition_error(const ScenePair& pair, int t, int gamma, const Eigen::ArrayXd& eps,
                                const NoiseSchedule& schedule) {
  const MixState now = make_mix_state(pair, t, eps, schedule);
  const MixState target = make_mix_state(pair, t - gamma, eps, schedule);
  const Eigen::ArrayXd jump =
      ddim_step(now.x_t_mix, oracle_epsilon_from(now.x_t_mix, pair.x0_obj.data, eps, t, gamma, schedule), t,
                t - gamma, schedule);
  Eigen::ArrayXd walk = now.x_t_mix;
  for (int s = t; s > t - gamma; --s)
    walk = ddim_step(walk, oracle_epsilon_from(walk, pair.x0_obj.data, eps, s, 1, schedule), s, s - 1, schedule);
  return std::max((jump - target.x_t_mix).abs().maxCoeff(), (jump - walk).abs().maxCoeff());
}

double oracle_rollout_error(const ScenePair& pair, const Eigen::ArrayXd& eps, const NoiseSchedule& schedule) {
  Eigen::ArrayXd x = make_mix_state(pair, schedule.steps(), eps, schedule).x_t_mix;
  for (int t = schedule.steps(); t >= 1; --t)
    x = ddim_step(x, oracle_epsilon_from(x, pair.x0_obj.data, eps, t, 1, schedule), t, t - 1, schedule);
  return (x - pair.x0_ori.data).abs().maxCoeff();
}

OracleCheckResult run_oracle_check(const SceneConfig& scene, const NoiseSchedule& schedule,
                                   const OracleCheckOptions& o) {
  OracleCheckResult r;
  const int T = schedule.steps();
  auto track = [](double err, double& max, OracleFailure& worst, int t, std::uint64_t seed) {
    if (err > max || std::isnan(err)) {
      max = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
      worst = {t, seed};
    }
  };
  for (int i = 0; i < o.draws; ++i) {
    const std::uint64_t seed = derive_seed(o.seed, {0x4f52434cULL, static_cast<std::uint64_t>(i)}) >> 1;
    ScenePair pair;
    try {
      pair = generate_scene(seed, scene);
    } catch (const std::runtime_error&) {
      continue;
    }
    Rng rng(seed);
    const CroDraw d = draw_cro_timesteps(rng, T, std::min(T - 1, 100));
    const Eigen::ArrayXd eps = draw_noise(rng, pair.x0_ori.data.size());
    track(oracle_identity_error(pair, d.t, eps, schedule, o.corrupt_b), r.identity_max, r.identity_worst, d.t, seed);
    track(oracle_composition_error(pair, d.t, std::min(d.t, 2), eps, schedule), r.composition_max,
          r.composition_worst, d.t, seed);
    track(oracle_composition_error(pair, d.t, d.gamma, eps, schedule), r.composition_max, r.composition_worst, d.t,
          seed);
    if (i < o.rollout_scenes)
      track(oracle_rollout_error(pair, eps, schedule), r.rollout_max, r.rollout_worst, T, seed);
  }
  r.identity_ok = r.identity_max < o.identity_tol;
  r.composition_ok = r.composition_max < o.composition_tol;
  r.rollout_ok = r.rollout_max < o.rollout_tol;
  return r;
}

}  // namespace eradiff
