#pragma once

#include "eradiff/scenegen.hpp"
#include "eradiff/schedule.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace eradiff {

/// Blend of the background and object images at mix level lambda.
template <typename DerivedA, typename DerivedB>
auto mix_image(const Eigen::ArrayBase<DerivedA>& x_ori, const Eigen::ArrayBase<DerivedB>& x_obj, double lambda) {
  if (x_ori.size() != x_obj.size()) throw std::invalid_argument("mix_image: image sizes differ");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("mix_image: lambda outside [0, 1]");
  using Scalar = typename DerivedA::Scalar;
  return (Scalar(1.0 - lambda) * x_ori.derived() + Scalar(lambda) * x_obj.derived()).eval();
}

/// q(x_t | x_0) sample for a given noise draw.
template <typename DerivedX, typename DerivedE>
auto forward_noise(const Eigen::ArrayBase<DerivedX>& x0, int t, const Eigen::ArrayBase<DerivedE>& eps,
                   const NoiseSchedule& schedule) {
  if (x0.size() != eps.size()) throw std::invalid_argument("forward_noise: eps shape differs from x0");
  using Scalar = typename DerivedX::Scalar;
  const double ab = schedule.alpha_bar(t);
  return (Scalar(std::sqrt(ab)) * x0.derived() + Scalar(std::sqrt(1.0 - ab)) * eps.derived()).eval();
}

/// Coefficients of the deterministic DDIM map x_prev = c_x * x_t + c_eps * eps_hat.
struct DdimCoefficients {
  double c_x;
  double c_eps;
};

inline DdimCoefficients ddim_coefficients(int t, int t_prev, const NoiseSchedule& schedule) {
  if (!(0 <= t_prev && t_prev < t && t <= schedule.steps()))
    throw std::invalid_argument("ddim_step: need 0 <= t_prev < t <= T (got t=" + std::to_string(t) +
                                ", t_prev=" + std::to_string(t_prev) + ")");
  const double ab_t = schedule.alpha_bar(t), ab_p = schedule.alpha_bar(t_prev);
  const double c_x = std::sqrt(ab_p / ab_t);
  return {c_x, std::sqrt(1.0 - ab_p) - c_x * std::sqrt(1.0 - ab_t)};
}

/// sigma = 0 DDIM update from step t to t_prev.
template <typename DerivedX, typename DerivedE>
auto ddim_step(const Eigen::ArrayBase<DerivedX>& x_t, const Eigen::ArrayBase<DerivedE>& eps_hat, int t, int t_prev,
               const NoiseSchedule& schedule) {
  if (x_t.size() != eps_hat.size()) throw std::invalid_argument("ddim_step: eps_hat shape differs from x_t");
  using Scalar = typename DerivedX::Scalar;
  const double ab_t = schedule.alpha_bar(t), ab_p = schedule.alpha_bar(t_prev);
  ddim_coefficients(t, t_prev, schedule);  // validates the step pair
  const Scalar sa_t = Scalar(std::sqrt(ab_t)), sb_t = Scalar(std::sqrt(1.0 - ab_t));
  const Scalar sa_p = Scalar(std::sqrt(ab_p)), sb_p = Scalar(std::sqrt(1.0 - ab_p));
  return (sa_p * ((x_t.derived() - sb_t * eps_hat.derived()) / sa_t) + sb_p * eps_hat.derived()).eval();
}

/// The pair of mix-chain images at one step, built from one shared noise draw.
struct MixState {
  int t = 0;
  Eigen::ArrayXd x_tilde_mix;
  Eigen::ArrayXd x_t_mix;
  Eigen::ArrayXd eps;
  std::uint64_t pair_ref = 0;
};

/// Mix level used at step t: the schedule's lambda, or a frozen constant for
/// t >= 1 (the no-mixup ablation). Step 0 is always the original image.
struct MixRule {
  bool frozen = false;
  double constant = 1.0;

  double lambda(int t, const NoiseSchedule& schedule) const {
    if (!frozen || t == 0) return schedule.lambda(t);
    return constant;
  }
};

inline MixState make_mix_state(const ScenePair& pair, int t, const Eigen::ArrayXd& eps,
                               const NoiseSchedule& schedule, const MixRule& rule = {}) {
  MixState s;
  s.t = t;
  s.pair_ref = pair.log.seed;
  s.eps = eps;
  s.x_tilde_mix = mix_image(pair.x0_ori.data, pair.x0_obj.data, rule.lambda(t, schedule));
  s.x_t_mix = forward_noise(s.x_tilde_mix, t, eps, schedule);
  return s;
}

/// Closed-form coefficients with G * eps_star = A * x_t_mix + B * x0_obj + C * eps.
///
/// `gamma` generalises the single-step case: with a = alpha_bar(t) / alpha_bar(t - gamma)
/// every single-step alpha_t is replaced by a; gamma = 1 gives the per-step form.
struct OracleCoefficients {
  double G, A, B, C;
};

inline OracleCoefficients oracle_coefficients(int t, const NoiseSchedule& schedule, int gamma = 1) {
  if (t < 1 || t > schedule.steps()) throw std::out_of_range("oracle_coefficients: t outside [1, T]");
  if (gamma < 1 || gamma > t) throw std::invalid_argument("oracle_coefficients: need 1 <= gamma <= t");
  const double ab_t = schedule.alpha_bar(t);
  const double a = ab_t / schedule.alpha_bar(t - gamma);
  OracleCoefficients k;
  k.G = std::sqrt(a - ab_t) - std::sqrt(1.0 - ab_t);
  k.A = 1.0 / a - 1.0;
  k.B = std::sqrt(ab_t) * (a - 1.0) / a;
  k.C = std::sqrt(a - ab_t) - std::sqrt(1.0 - ab_t) / a;
  if (std::abs(k.G) < 1e-14)
    throw std::domain_error("oracle_coefficients: G vanishes at t=" + std::to_string(t) + " (indeterminate oracle)");
  return k;
}

/// The noise prediction that makes a DDIM step from t land exactly on the
/// mix state at t - gamma (schedule mix rule, lambda = 1 - alpha_bar).
template <typename DerivedX, typename DerivedO, typename DerivedE>
auto oracle_epsilon_from(const Eigen::ArrayBase<DerivedX>& x_t_mix, const Eigen::ArrayBase<DerivedO>& x0_obj,
                         const Eigen::ArrayBase<DerivedE>& eps, int t, int gamma, const NoiseSchedule& schedule) {
  using Scalar = typename DerivedX::Scalar;
  const OracleCoefficients k = oracle_coefficients(t, schedule, gamma);
  return ((Scalar(k.A) * x_t_mix.derived() + Scalar(k.B) * x0_obj.derived() + Scalar(k.C) * eps.derived()) /
          Scalar(k.G))
      .eval();
}

inline Eigen::ArrayXd oracle_epsilon(const ScenePair& pair, int t, int gamma, const Eigen::ArrayXd& eps,
                                     const NoiseSchedule& schedule) {
  const MixState s = make_mix_state(pair, t, eps, schedule);
  return oracle_epsilon_from(s.x_t_mix, pair.x0_obj.data, eps, t, gamma, schedule);
}

}  // namespace eradiff
