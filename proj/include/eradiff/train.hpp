#pragma once

#include "eradiff/adam.hpp"
#include "eradiff/diffusion.hpp"
#include "eradiff/model.hpp"
#include "eradiff/scenegen.hpp"
#include "eradiff/schedule.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace eradiff {

enum class Objective { cro, standard, standard_bg };
Objective parse_objective(const std::string& name);
std::string to_string(Objective objective);

struct TrainConfig {
  Objective objective = Objective::cro;
  int gamma_m = 100;
  bool mixup = true;            // false: the no-mixup ablation (lambda frozen for t >= 1)
  double mixup_lambda = 1.0;    // frozen lambda used when mixup is off
  int batch = 16;
  int steps = 2000;
  std::uint64_t seed = 0;
  AdamParams adam{};
  int checkpoint_every = 0;     // 0: only the final checkpoint
  MaskKind mask_family = MaskKind::combined;  // random masks for standard / standard_bg
  double mask_area_min = 0.02;
  double mask_area_max = 0.35;
  double bg_mask_area_max = 0.15;  // background-constrained masks must fit around two objects
};

void validate(const TrainConfig& config, const NoiseSchedule& schedule);

struct TrainLogRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  int t = 0;
  int gamma = 0;
  double seconds = 0.0;
  bool nan = false;
};

// ---------------------------------------------------------------------------
// Per-sample draws

/// Seeds of training scenes live in the upper half of the 64-bit range;
/// held-out evaluation scenes use small integers, so the splits never meet.
std::uint64_t training_scene_seed(std::uint64_t run_seed, std::int64_t step, int index);
constexpr std::uint64_t kTrainSeedBit = 1ULL << 63;

/// Generates a training scene, stepping to derived seeds if a draw cannot be placed.
ScenePair training_scene(std::uint64_t run_seed, std::int64_t step, int index, const SceneConfig& scene);

struct CroDraw {
  int t;
  int gamma;
};
/// t ~ U{1..T}, gamma ~ U{1..min(gamma_m, t)}.
CroDraw draw_cro_timesteps(Rng& rng, int T, int gamma_m);

Eigen::ArrayXd draw_noise(Rng& rng, Eigen::Index n);

// ---------------------------------------------------------------------------
// Batches

struct CroSample {
  const ScenePair* pair = nullptr;
  int t = 1;
  int gamma = 1;
  Eigen::ArrayXd eps;
};

/// Everything the chain-rectifying loss needs, already in the training scalar.
template <typename Scalar>
struct CroBatch {
  Tensor<Scalar> x_t;           // x_t^mix
  Tensor<Scalar> target;        // x_{t-gamma}^mix, same noise draw
  Tensor<Scalar> masked_image;  // x0_ori * (1 - M)
  std::vector<Mask> masks;
  std::vector<int> t, gamma;
  Tensor<Scalar> c_x, c_eps;    // per-element DDIM coefficients for t -> t - gamma
  std::vector<const CroSample*> samples;
};

struct StandardSample {
  const ScenePair* pair = nullptr;
  Mask mask;  // conditioning mask (random family, or background-constrained)
  int t = 1;
  Eigen::ArrayXd eps;
};

template <typename Scalar>
struct StandardBatch {
  Tensor<Scalar> x_t;
  Tensor<Scalar> eps;
  Tensor<Scalar> masked_image;
  std::vector<Mask> masks;
  std::vector<int> t;
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> stack(const std::vector<Eigen::ArrayXd>& images, const Image& like) {
  const Eigen::Index per = like.data.size();
  typename Tensor<Scalar>::Array v(per * static_cast<Eigen::Index>(images.size()));
  for (std::size_t n = 0; n < images.size(); ++n)
    v.segment(per * static_cast<Eigen::Index>(n), per) = images[n].template cast<Scalar>();
  return Tensor<Scalar>(Shape{static_cast<Index>(images.size()), like.channels, like.height, like.width}, std::move(v));
}

}  // namespace detail

template <typename Scalar>
CroBatch<Scalar> build_cro_batch(const std::vector<CroSample>& samples, const NoiseSchedule& schedule,
                                 const MixRule& rule = {}) {
  if (samples.empty()) throw std::invalid_argument("cro batch: empty");
  CroBatch<Scalar> b;
  std::vector<Eigen::ArrayXd> xt, target, masked, cx, ceps;
  for (const auto& s : samples) {
    if (s.gamma < 1 || s.gamma > s.t) throw std::invalid_argument("cro batch: need 1 <= gamma <= t");
    const ScenePair& p = *s.pair;
    xt.push_back(make_mix_state(p, s.t, s.eps, schedule, rule).x_t_mix);
    target.push_back(make_mix_state(p, s.t - s.gamma, s.eps, schedule, rule).x_t_mix);
    masked.push_back(p.x0_ori.data * (1.0 - p.mask.broadcast(p.x0_ori.channels)));
    const DdimCoefficients k = ddim_coefficients(s.t, s.t - s.gamma, schedule);
    cx.push_back(Eigen::ArrayXd::Constant(p.x0_ori.data.size(), k.c_x));
    ceps.push_back(Eigen::ArrayXd::Constant(p.x0_ori.data.size(), k.c_eps));
    b.masks.push_back(p.mask);
    b.t.push_back(s.t);
    b.gamma.push_back(s.gamma);
    b.samples.push_back(&s);
  }
  const Image& like = samples[0].pair->x0_ori;
  b.x_t = detail::stack<Scalar>(xt, like);
  b.target = detail::stack<Scalar>(target, like);
  b.masked_image = detail::stack<Scalar>(masked, like);
  b.c_x = detail::stack<Scalar>(cx, like);
  b.c_eps = detail::stack<Scalar>(ceps, like);
  return b;
}

/// mean || x_{t-gamma}^mix - DDIM(x_t^mix, eps_hat) ||^2, differentiable through eps_hat.
template <typename Scalar>
Tensor<Scalar> cro_loss(const CroBatch<Scalar>& b, const Tensor<Scalar>& eps_hat) {
  const Tensor<Scalar> predicted = add(mul(b.c_x, b.x_t), mul(b.c_eps, eps_hat));
  const Tensor<Scalar> diff = sub(b.target, predicted);
  return mean(mul(diff, diff));
}

template <typename Scalar>
StandardBatch<Scalar> build_standard_batch(const std::vector<StandardSample>& samples, const NoiseSchedule& schedule) {
  if (samples.empty()) throw std::invalid_argument("standard batch: empty");
  StandardBatch<Scalar> b;
  std::vector<Eigen::ArrayXd> xt, eps, masked;
  for (const auto& s : samples) {
    const ScenePair& p = *s.pair;
    xt.push_back(forward_noise(p.x0_ori.data, s.t, s.eps, schedule));
    eps.push_back(s.eps);
    masked.push_back(p.x0_ori.data * (1.0 - s.mask.broadcast(p.x0_ori.channels)));
    b.masks.push_back(s.mask);
    b.t.push_back(s.t);
  }
  const Image& like = samples[0].pair->x0_ori;
  b.x_t = detail::stack<Scalar>(xt, like);
  b.eps = detail::stack<Scalar>(eps, like);
  b.masked_image = detail::stack<Scalar>(masked, like);
  return b;
}

/// mean || eps - eps_hat ||^2.
template <typename Scalar>
Tensor<Scalar> standard_loss(const StandardBatch<Scalar>& b, const Tensor<Scalar>& eps_hat) {
  const Tensor<Scalar> diff = sub(b.eps, eps_hat);
  return mean(mul(diff, diff));
}

/// The closed-form predictor for a CRO batch: lands every sample exactly on
/// its target mix state.
template <typename Scalar>
Tensor<Scalar> oracle_eps_for(const CroBatch<Scalar>& b, const NoiseSchedule& schedule) {
  std::vector<Eigen::ArrayXd> out;
  for (std::size_t i = 0; i < b.samples.size(); ++i) {
    const CroSample& s = *b.samples[i];
    out.push_back(oracle_epsilon(*s.pair, s.t, s.gamma, s.eps, schedule));
  }
  return detail::stack<Scalar>(out, b.samples[0]->pair->x0_ori);
}

// ---------------------------------------------------------------------------
// Optimisation steps

struct StepResult {
  double loss = 0.0;
  bool nan = false;
  bool updated = false;
};

namespace detail {

template <typename Scalar>
StepResult finish_step(DenoiserModel<Scalar>& model, AdamState<Scalar>& opt, const Tensor<Scalar>& loss) {
  StepResult r;
  r.loss = static_cast<double>(loss.item());
  if (!std::isfinite(r.loss)) {
    r.nan = true;
    return r;
  }
  model.zero_grad();
  backward(loss);
  try {
    adam_step(model.parameters(), opt);
    r.updated = true;
  } catch (const std::domain_error&) {
    r.nan = true;
  }
  return r;
}

}  // namespace detail

/// One chain-rectifying update. A non-finite loss or gradient is reported
/// and the optimizer step is skipped.
template <typename Scalar>
StepResult cro_step(DenoiserModel<Scalar>& model, const std::vector<CroSample>& samples, const NoiseSchedule& schedule,
                    AdamState<Scalar>& opt, const MixRule& rule = {}) {
  const CroBatch<Scalar> b = build_cro_batch<Scalar>(samples, schedule, rule);
  const Tensor<Scalar> eps_hat = predict_eps(model, b.x_t, b.masks, b.masked_image, b.t);
  return detail::finish_step(model, opt, cro_loss(b, eps_hat));
}

/// The no-mixup ablation: cro_step with lambda frozen for t >= 1. Non-finite
/// losses are an expected outcome here and are only recorded.
template <typename Scalar>
StepResult no_mixup_step(DenoiserModel<Scalar>& model, const std::vector<CroSample>& samples,
                         const NoiseSchedule& schedule, const TrainConfig& config, AdamState<Scalar>& opt) {
  if (config.mixup) throw std::invalid_argument("no_mixup_step: config has mixup enabled");
  StepResult r;
  try {
    r = cro_step(model, samples, schedule, opt, MixRule{true, config.mixup_lambda});
  } catch (const std::domain_error&) {
    r.nan = true;
  }
  return r;
}

template <typename Scalar>
StepResult standard_step(DenoiserModel<Scalar>& model, const std::vector<StandardSample>& samples,
                         const NoiseSchedule& schedule, AdamState<Scalar>& opt) {
  const StandardBatch<Scalar> b = build_standard_batch<Scalar>(samples, schedule);
  const Tensor<Scalar> eps_hat = predict_eps(model, b.x_t, b.masks, b.masked_image, b.t);
  return detail::finish_step(model, opt, standard_loss(b, eps_hat));
}

// ---------------------------------------------------------------------------
// Runs

/// Deterministic assembly of the samples used at `step` (1-based).
/// Scene synthesis may be spread over `threads` workers; the result does not depend on it.
std::vector<ScenePair> training_scenes(const TrainConfig& config, const SceneConfig& scene, std::int64_t step,
                                       int threads = 1);
std::vector<CroSample> cro_samples(const TrainConfig& config, const NoiseSchedule& schedule,
                                   const std::vector<ScenePair>& scenes, std::int64_t step);
std::vector<StandardSample> standard_samples(const TrainConfig& config, const NoiseSchedule& schedule,
                                             const std::vector<ScenePair>& scenes, std::int64_t step);

struct TrainState {
  DenoiserModel<float> model;
  AdamState<float> optimizer;
};

/// One optimisation step of the configured objective, with logging fields filled in.
TrainLogRecord train_one_step(TrainState& state, const TrainConfig& config, const SceneConfig& scene,
                              const NoiseSchedule& schedule, std::int64_t step, int threads = 1);

/// Fresh weights and optimizer for a run; the model seed is derived from the run seed.
TrainState init_train_state(const TrainConfig& config, const DenoiserConfig& model_config);

struct TrainRunResult {
  std::string checkpoint_path;
  std::string log_path;
  std::vector<TrainLogRecord> log;
};

struct TrainRunOptions {
  std::string out_dir;
  std::string config_hash;
  std::string resume_from;  // checkpoint to continue from (optional)
  int threads = 1;          // batch assembly workers
  bool quiet = true;
  std::function<void(const TrainLogRecord&)> on_step;  // called after every step
};

TrainRunResult train_run(const TrainConfig& config, const SceneConfig& scene, const NoiseSchedule& schedule,
                         const DenoiserConfig& model_config, const TrainRunOptions& options);

void write_train_log(const std::string& path, const std::vector<TrainLogRecord>& log);

}  // namespace eradiff
