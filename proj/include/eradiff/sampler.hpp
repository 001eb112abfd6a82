#pragma once

#include "eradiff/diffusion.hpp"
#include "eradiff/model.hpp"
#include "eradiff/scenegen.hpp"
#include "eradiff/schedule.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace eradiff {

struct SampleConfig {
  int steps = 20;
  double strength = 0.95;
  std::optional<bool> sra;  // unset: use the checkpoint's setting
  std::uint64_t seed = 0;
};

void validate(const SampleConfig& config);

/// Descending, de-duplicated grid t_start = tau_0 > ... > tau_steps = 0.
std::vector<int> step_grid(int t_start, int steps);

/// Predicts eps at step t for a batch of current states; t_prev is the step
/// the sampler is about to move to (only closed-form oracles use it).
using EpsFunction =
    std::function<Eigen::ArrayXd(const Eigen::ArrayXd& x_t, int t, int t_prev, std::size_t item)>;

struct EraseItem {
  const Image* input = nullptr;  // the scene to erase from, in [0, 1]
  const Mask* mask = nullptr;    // 1 = erase
  std::uint64_t noise_seed = 0;  // initial noise draw
};

using BatchEpsFunction =
    std::function<std::vector<Eigen::ArrayXd>(const std::vector<Eigen::ArrayXd>& x_t, int t, int t_prev)>;

struct Trajectory {
  std::vector<int> timesteps;              // steps + 1 entries, both endpoints included
  std::vector<Eigen::ArrayXd> states;      // x at each timestep (after background re-imposition)
  std::vector<Eigen::ArrayXd> x0_estimates;  // predicted clean image at each timestep
};

struct EraseResult {
  Image output;
  Trajectory trajectory;
};

/// Strength-controlled deterministic DDIM erase loop with background re-imposition.
/// Batched over items; `eps` is called once per step for the whole batch.
std::vector<EraseResult> erase_sample_batch(const BatchEpsFunction& eps, const std::vector<EraseItem>& items,
                                            const SampleConfig& config, const NoiseSchedule& schedule);

/// Single-image form; the initial noise is drawn from config.seed.
EraseResult erase_sample(const EpsFunction& eps, const Image& input, const Mask& mask, const SampleConfig& config,
                         const NoiseSchedule& schedule);

/// Network denoiser: runs predict_eps on the whole batch (float weights).
BatchEpsFunction model_denoiser(const DenoiserModel<float>& model, const std::vector<EraseItem>& items,
                                std::optional<bool> sra);

/// Closed-form denoiser for a known pair. At each step the current state is
/// read as a mix state with eps_implied = (x - sqrt(ab) * x_tilde) / sqrt(1 - ab),
/// and the prediction G eps = A x + B x0_obj + C eps_implied is returned.
///
/// `exact` uses gamma = t - t_prev, which lands on the next mix state for any
/// grid and strength. Otherwise the single-step (gamma = 1) coefficients are
/// used regardless of the grid; that is exact only on a unit grid and its error
/// shrinks as the grid is refined.
EpsFunction oracle_denoiser(const ScenePair& pair, const NoiseSchedule& schedule, bool exact = true);

/// erase_sample at several strengths on x0_obj with the object mask.
struct LeakageBundle {
  std::vector<double> strengths;
  std::vector<EraseResult> results;
};

LeakageBundle leakage_probe(const EpsFunction& eps, const ScenePair& pair, const std::vector<double>& strengths,
                            const SampleConfig& base, const NoiseSchedule& schedule);

}  // namespace eradiff
