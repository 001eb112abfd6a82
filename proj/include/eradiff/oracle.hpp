#pragma once

#include "eradiff/diffusion.hpp"
#include "eradiff/scenegen.hpp"
#include "eradiff/schedule.hpp"

#include <cstdint>
#include <string>

namespace eradiff {

struct OracleCheckOptions {
  int draws = 200;
  int rollout_scenes = 3;
  std::uint64_t seed = 0;
  double identity_tol = 1e-10;     // relative
  double composition_tol = 1e-10;  // max-abs
  double rollout_tol = 1e-6;       // max-abs
  double corrupt_b = 0.0;          // test hook: added to B before checking
};

struct OracleFailure {
  int t = 0;
  std::uint64_t seed = 0;
};

struct OracleCheckResult {
  double identity_max = 0.0;
  double composition_max = 0.0;
  double rollout_max = 0.0;
  OracleFailure identity_worst, composition_worst, rollout_worst;
  bool identity_ok = false, composition_ok = false, rollout_ok = false;

  bool pass() const { return identity_ok && composition_ok && rollout_ok; }
};

/// The noise prediction that carries x_t to `target` in one DDIM step, solved
/// from the step's affine form. Independent of the closed-form coefficients.
Eigen::ArrayXd ddim_inverse_eps(const Eigen::ArrayXd& x_t, const Eigen::ArrayXd& target, int t, int t_prev,
                                const NoiseSchedule& schedule);

/// Relative error of G eps* = A x_t^mix + B x0_obj + C eps for one draw, with
/// eps* from ddim_inverse_eps.
double oracle_identity_error(const ScenePair& pair, int t, const Eigen::ArrayXd& eps, const NoiseSchedule& schedule,
                             double corrupt_b = 0.0);

/// Max-abs gap between one gamma-step oracle jump and the mix state at t - gamma,
/// and between that jump and gamma unit-step oracle jumps.
double oracle_composition_error(const ScenePair& pair, int t, int gamma, const Eigen::ArrayXd& eps,
                                const NoiseSchedule& schedule);

/// Full DDIM rollout T -> 0 with the per-step oracle; max-abs error against x0_ori.
double oracle_rollout_error(const ScenePair& pair, const Eigen::ArrayXd& eps, const NoiseSchedule& schedule);

OracleCheckResult run_oracle_check(const SceneConfig& scene, const NoiseSchedule& schedule,
                                   const OracleCheckOptions& options);

}  // namespace eradiff
