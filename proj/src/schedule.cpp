#include "eradiff/schedule.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace eradiff {

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "linear") return ScheduleKind::linear;
  if (name == "cosine") return ScheduleKind::cosine;
  throw std::invalid_argument("unknown schedule kind '" + name + "' (expected linear or cosine)");
}

std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::linear ? "linear" : "cosine"; }

NoiseSchedule::NoiseSchedule(ScheduleKind kind, int steps, double beta_min, double beta_max)
    : kind_(kind), steps_(steps), beta_min_(beta_min), beta_max_(beta_max) {
  if (steps < 2) throw std::invalid_argument("build_schedule: T must be >= 2");
  if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
    throw std::invalid_argument("build_schedule: need 0 < beta_min <= beta_max < 1");

  beta_.resize(steps);
  if (kind == ScheduleKind::linear) {
    for (int t = 1; t <= steps; ++t)
      beta_(t - 1) = beta_min + (beta_max - beta_min) * static_cast<double>(t - 1) / (steps - 1);
  } else {
    // Squared-cosine alpha_bar with offset s = 0.008, betas clipped to [beta_min, beta_max].
    constexpr double s = 0.008;
    auto f = [&](int t) {
      const double c = std::cos((static_cast<double>(t) / steps + s) / (1.0 + s) * std::numbers::pi / 2.0);
      return c * c;
    };
    for (int t = 1; t <= steps; ++t) {
      const double b = 1.0 - f(t) / f(t - 1);
      beta_(t - 1) = std::min(std::max(b, beta_min), beta_max);
    }
  }

  alpha_ = 1.0 - beta_;
  alpha_bar_.resize(steps + 1);
  alpha_bar_(0) = 1.0;
  for (int t = 1; t <= steps; ++t) alpha_bar_(t) = alpha_bar_(t - 1) * alpha_(t - 1);
  lambda_ = 1.0 - alpha_bar_;
  sigma_ = Eigen::ArrayXd::Zero(steps);
}

void NoiseSchedule::check_step(int t, int lo) const {
  if (t < lo || t > steps_)
    throw std::out_of_range("schedule: step " + std::to_string(t) + " outside [" + std::to_string(lo) +
                            ", " + std::to_string(steps_) + "]");
}

double NoiseSchedule::beta(int t) const {
  check_step(t, 1);
  return beta_(t - 1);
}
double NoiseSchedule::alpha(int t) const {
  check_step(t, 1);
  return alpha_(t - 1);
}
double NoiseSchedule::alpha_bar(int t) const {
  check_step(t, 0);
  return alpha_bar_(t);
}
double NoiseSchedule::lambda(int t) const {
  check_step(t, 0);
  return lambda_(t);
}
double NoiseSchedule::sigma(int t) const {
  check_step(t, 1);
  return sigma_(t - 1);
}

NoiseSchedule build_schedule(ScheduleKind kind, int steps, double beta_min, double beta_max) {
  return NoiseSchedule(kind, steps, beta_min, beta_max);
}

double lambda_at(const NoiseSchedule& schedule, int t) { return schedule.lambda(t); }

}  // namespace eradiff
