#include "eradiff/sampler.hpp"

#include "eradiff/rng.hpp"
#include "eradiff/train.hpp"

#include <cmath>
#include <stdexcept>

namespace eradiff {

void validate(const SampleConfig& c) {
  if (c.steps < 1) throw std::invalid_argument("sample: steps must be >= 1");
  if (!(c.strength > 0.0 && c.strength <= 1.0)) throw std::invalid_argument("sample: strength must be in (0, 1]");
}

std::vector<int> step_grid(int t_start, int steps) {
  if (steps < 1) throw std::invalid_argument("step_grid: steps must be >= 1");
  if (t_start < steps)
    throw std::invalid_argument("step_grid: strength * T = " + std::to_string(t_start) + " is below the step count " +
                                std::to_string(steps) + "; the grid would degenerate");
  std::vector<int> grid;
  for (int i = 0; i <= steps; ++i) {
    const int tau = static_cast<int>(std::floor(t_start * (1.0 - static_cast<double>(i) / steps) + 0.5));
    if (grid.empty() || tau < grid.back()) grid.push_back(tau);
  }
  if (static_cast<int>(grid.size()) != steps + 1) throw std::logic_error("step_grid: duplicate timesteps");
  return grid;
}

std::vector<EraseResult> erase_sample_batch(const BatchEpsFunction& eps, const std::vector<EraseItem>& items,
                                            const SampleConfig& config, const NoiseSchedule& schedule) {
  validate(config);
  std::vector<EraseResult> results(items.size());
  if (items.empty()) return results;
  const int t_start = static_cast<int>(std::floor(config.strength * schedule.steps() + 0.5));
  const std::vector<int> grid = step_grid(t_start, config.steps);

  std::vector<Eigen::ArrayXd> x(items.size()), noise(items.size()), hole(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Image& in = *items[i].input;
    const Mask& m = *items[i].mask;
    if (in.height != m.height || in.width != m.width) throw std::invalid_argument("erase_sample: mask/image size mismatch");
    if (m.full()) throw std::domain_error("erase_sample: full-image mask leaves no background");
    if (in.data.minCoeff() < 0.0 || in.data.maxCoeff() > 1.0) throw std::invalid_argument("erase_sample: input outside [0, 1]");
    Rng rng(items[i].noise_seed);
    noise[i] = draw_noise(rng, in.data.size());
    hole[i] = m.broadcast(in.channels);
    x[i] = forward_noise(in.data, t_start, noise[i], schedule);
    results[i].trajectory.timesteps = grid;
  }
  auto reimpose = [&](std::size_t i, int tau) {
    x[i] = hole[i] * x[i] + (1.0 - hole[i]) * forward_noise(items[i].input->data, tau, noise[i], schedule);
  };

  for (std::size_t i = 0; i < items.size(); ++i) {
    reimpose(i, grid[0]);
    results[i].trajectory.states.push_back(x[i]);
  }
  for (std::size_t s = 0; s + 1 < grid.size(); ++s) {
    const int tau = grid[s], next = grid[s + 1];
    const std::vector<Eigen::ArrayXd> eps_hat = eps(x, tau, next);
    if (eps_hat.size() != items.size()) throw std::logic_error("erase_sample: denoiser returned wrong batch size");
    const double ab = schedule.alpha_bar(tau);
    for (std::size_t i = 0; i < items.size(); ++i) {
      results[i].trajectory.x0_estimates.push_back((x[i] - std::sqrt(1.0 - ab) * eps_hat[i]) / std::sqrt(ab));
      x[i] = ddim_step(x[i], eps_hat[i], tau, next, schedule);
      reimpose(i, next);
      results[i].trajectory.states.push_back(x[i]);
    }
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    results[i].trajectory.x0_estimates.push_back(x[i]);
    const Image& in = *items[i].input;
    results[i].output = Image(in.channels, in.height, in.width);
    results[i].output.data = x[i].max(0.0).min(1.0);
  }
  return results;
}

EraseResult erase_sample(const EpsFunction& eps, const Image& input, const Mask& mask, const SampleConfig& config,
                         const NoiseSchedule& schedule) {
  const std::vector<EraseItem> items{{&input, &mask, config.seed}};
  auto batch = [&](const std::vector<Eigen::ArrayXd>& x_t, int t, int t_prev) {
    return std::vector<Eigen::ArrayXd>{eps(x_t[0], t, t_prev, 0)};
  };
  return std::move(erase_sample_batch(batch, items, config, schedule)[0]);
}

BatchEpsFunction model_denoiser(const DenoiserModel<float>& model, const std::vector<EraseItem>& items,
                                std::optional<bool> sra) {
  std::vector<Mask> masks;
  std::vector<Eigen::ArrayXd> masked;
  for (const auto& it : items) {
    masks.push_back(*it.mask);
    masked.push_back(it.input->data * (1.0 - it.mask->broadcast(it.input->channels)));
  }
  return [&model, masks, masked, sra, like = items.empty() ? Image() : *items[0].input](
             const std::vector<Eigen::ArrayXd>& x_t, int t, int) {
    const Tensor<float> xt = detail::stack<float>(x_t, like);
    const Tensor<float> mi = detail::stack<float>(masked, like);
    const Tensor<float> e = predict_eps(model, xt, masks, mi, std::vector<int>(x_t.size(), t), sra);
    std::vector<Eigen::ArrayXd> out;
    const Eigen::Index per = like.data.size();
    for (std::size_t i = 0; i < x_t.size(); ++i)
      out.push_back(e.values().segment(per * static_cast<Eigen::Index>(i), per).cast<double>());
    return out;
  };
}

EpsFunction oracle_denoiser(const ScenePair& pair, const NoiseSchedule& schedule, bool exact) {
  return [&pair, &schedule, exact](const Eigen::ArrayXd& x_t, int t, int t_prev, std::size_t) -> Eigen::ArrayXd {
    const double ab = schedule.alpha_bar(t);
    const Eigen::ArrayXd x_tilde = mix_image(pair.x0_ori.data, pair.x0_obj.data, schedule.lambda(t));
    const Eigen::ArrayXd eps_implied = (x_t - std::sqrt(ab) * x_tilde) / std::sqrt(1.0 - ab);
    return oracle_epsilon_from(x_t, pair.x0_obj.data, eps_implied, t, exact ? t - t_prev : 1, schedule);
  };
}

LeakageBundle leakage_probe(const EpsFunction& eps, const ScenePair& pair, const std::vector<double>& strengths,
                            const SampleConfig& base, const NoiseSchedule& schedule) {
  LeakageBundle bundle;
  for (double s : strengths) {
    if (!(s > 0.0 && s <= 1.0)) throw std::invalid_argument("leakage_probe: strength outside (0, 1]");
    SampleConfig cfg = base;
    cfg.strength = s;
    bundle.strengths.push_back(s);
    bundle.results.push_back(erase_sample(eps, pair.x0_obj, pair.mask, cfg, schedule));
  }
  return bundle;
}

}  // namespace eradiff
