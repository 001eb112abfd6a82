#pragma once

#include <Eigen/Core>

#include <string>

namespace eradiff {

enum class ScheduleKind { linear, cosine };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

/// Per-step noise tables for a fixed horizon T.
///
/// Indexing follows the diffusion convention: beta/alpha/sigma are defined
/// for t = 1..T, alpha_bar/lambda for t = 0..T with alpha_bar(0) = 1. The
/// mix schedule is lambda(t) = 1 - alpha_bar(t), so lambda(0) = 0 selects
/// the background image and lambda(T) approaches the object image.
class NoiseSchedule {
 public:
  NoiseSchedule(ScheduleKind kind, int steps, double beta_min, double beta_max);

  ScheduleKind kind() const { return kind_; }
  int steps() const { return steps_; }
  double beta_min() const { return beta_min_; }
  double beta_max() const { return beta_max_; }

  double beta(int t) const;
  double alpha(int t) const;
  double alpha_bar(int t) const;
  double lambda(int t) const;
  double sigma(int t) const;

  const Eigen::ArrayXd& beta_table() const { return beta_; }
  const Eigen::ArrayXd& alpha_table() const { return alpha_; }
  const Eigen::ArrayXd& alpha_bar_table() const { return alpha_bar_; }
  const Eigen::ArrayXd& lambda_table() const { return lambda_; }
  const Eigen::ArrayXd& sigma_table() const { return sigma_; }

 private:
  void check_step(int t, int lo) const;

  ScheduleKind kind_;
  int steps_;
  double beta_min_, beta_max_;
  Eigen::ArrayXd beta_;       // T entries, index t-1
  Eigen::ArrayXd alpha_;      // T entries, index t-1
  Eigen::ArrayXd alpha_bar_;  // T+1 entries, index t
  Eigen::ArrayXd lambda_;     // T+1 entries, index t
  Eigen::ArrayXd sigma_;      // T entries, all zero (deterministic DDIM)
};

NoiseSchedule build_schedule(ScheduleKind kind, int steps, double beta_min, double beta_max);

/// 1 - alpha_bar(t); throws std::out_of_range outside [0, T].
double lambda_at(const NoiseSchedule& schedule, int t);

}  // namespace eradiff
