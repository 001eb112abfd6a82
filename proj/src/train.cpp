#include "eradiff/train.hpp"

#include "eradiff/checkpoint.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <thread>

namespace eradiff {

Objective parse_objective(const std::string& name) {
  if (name == "cro") return Objective::cro;
  if (name == "standard") return Objective::standard;
  if (name == "standard_bg") return Objective::standard_bg;
  throw std::invalid_argument("unknown objective '" + name + "' (expected cro, standard or standard_bg)");
}

std::string to_string(Objective objective) {
  switch (objective) {
    case Objective::cro: return "cro";
    case Objective::standard: return "standard";
    case Objective::standard_bg: return "standard_bg";
  }
  return "?";
}

void validate(const TrainConfig& c, const NoiseSchedule& schedule) {
  if (c.gamma_m < 1 || c.gamma_m >= schedule.steps())
    throw std::invalid_argument("train: need 1 <= gamma_m < T (gamma_m=" + std::to_string(c.gamma_m) +
                                ", T=" + std::to_string(schedule.steps()) + ")");
  if (c.batch < 1) throw std::invalid_argument("train: batch must be >= 1");
  if (c.steps < 0) throw std::invalid_argument("train: steps must be >= 0");
  if (c.checkpoint_every < 0) throw std::invalid_argument("train: checkpoint_every must be >= 0");
  if (!(c.mixup_lambda >= 0.0 && c.mixup_lambda <= 1.0)) throw std::invalid_argument("train: mixup_lambda outside [0, 1]");
  if (!c.mixup && c.objective != Objective::cro)
    throw std::invalid_argument("train: mixup can only be disabled for the cro objective");
  if (!(0.0 < c.mask_area_min && c.mask_area_min <= c.mask_area_max && c.mask_area_max <= 1.0) ||
      c.bg_mask_area_max < c.mask_area_min)
    throw std::invalid_argument("train: bad mask area bounds");
  if (!(c.adam.lr > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
}

std::uint64_t training_scene_seed(std::uint64_t run_seed, std::int64_t step, int index) {
  return derive_seed(run_seed, {0x5343454eULL, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(index)}) |
         kTrainSeedBit;
}

ScenePair training_scene(std::uint64_t run_seed, std::int64_t step, int index, const SceneConfig& scene) {
  std::uint64_t seed = training_scene_seed(run_seed, step, index);
  for (int attempt = 0; attempt < 16; ++attempt) {
    try {
      return generate_scene(seed, scene);
    } catch (const std::runtime_error&) {
      seed = derive_seed(seed, {static_cast<std::uint64_t>(attempt)}) | kTrainSeedBit;
    }
  }
  throw std::runtime_error("training_scene: no placeable scene for step " + std::to_string(step) + ", index " +
                           std::to_string(index));
}

CroDraw draw_cro_timesteps(Rng& rng, int T, int gamma_m) {
  CroDraw d;
  d.t = static_cast<int>(rng.uniform_int(1, T));
  d.gamma = static_cast<int>(rng.uniform_int(1, std::min(gamma_m, d.t)));
  return d;
}

Eigen::ArrayXd draw_noise(Rng& rng, Eigen::Index n) {
  Eigen::ArrayXd e(n);
  for (Eigen::Index i = 0; i < n; ++i) e(i) = rng.normal();
  return e;
}

std::vector<ScenePair> training_scenes(const TrainConfig& config, const SceneConfig& scene, std::int64_t step,
                                       int threads) {
  std::vector<ScenePair> out(static_cast<std::size_t>(config.batch));
  const int workers = std::clamp(threads, 1, config.batch);
  auto work = [&](int w) {
    for (int i = w; i < config.batch; i += workers) out[i] = training_scene(config.seed, step, i, scene);
  };
  if (workers == 1) {
    work(0);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        work(w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

namespace {

Rng sample_rng(const TrainConfig& config, std::int64_t step, int index, std::uint64_t stream) {
  return Rng(derive_seed(config.seed, {0x44524157ULL, static_cast<std::uint64_t>(step),
                                       static_cast<std::uint64_t>(index), stream}));
}

}  // namespace

std::vector<CroSample> cro_samples(const TrainConfig& config, const NoiseSchedule& schedule,
                                   const std::vector<ScenePair>& scenes, std::int64_t step) {
  std::vector<CroSample> out;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    Rng rng = sample_rng(config, step, static_cast<int>(i), 0);
    const CroDraw d = draw_cro_timesteps(rng, schedule.steps(), config.gamma_m);
    out.push_back({&scenes[i], d.t, d.gamma, draw_noise(rng, scenes[i].x0_ori.data.size())});
  }
  return out;
}

std::vector<StandardSample> standard_samples(const TrainConfig& config, const NoiseSchedule& schedule,
                                             const std::vector<ScenePair>& scenes, std::int64_t step) {
  std::vector<StandardSample> out;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const ScenePair& p = scenes[i];
    Rng rng = sample_rng(config, step, static_cast<int>(i), 0);
    StandardSample s;
    s.pair = &p;
    s.t = static_cast<int>(rng.uniform_int(1, schedule.steps()));
    s.eps = draw_noise(rng, p.x0_ori.data.size());
    const std::uint64_t mask_seed = derive_seed(config.seed, {0x4d41534bULL, static_cast<std::uint64_t>(step), i});
    const int H = p.mask.height, W = p.mask.width;
    if (config.objective == Objective::standard_bg) {
      std::uint64_t seed = mask_seed;
      for (int attempt = 0;; ++attempt) {
        try {
          const MaskSpec spec =
              draw_mask_spec(config.mask_family, seed, H, W, config.mask_area_min, config.bg_mask_area_max);
          s.mask = background_constrained_mask(p, spec, config.mask_area_min, config.bg_mask_area_max);
          break;
        } catch (const std::runtime_error&) {
          if (attempt >= 8) throw;
          seed = derive_seed(seed, {static_cast<std::uint64_t>(attempt)});
        }
      }
    } else {
      s.mask = random_mask(draw_mask_spec(config.mask_family, mask_seed, H, W, config.mask_area_min,
                                          config.mask_area_max),
                           H, W);
    }
    out.push_back(std::move(s));
  }
  return out;
}

TrainState init_train_state(const TrainConfig& config, const DenoiserConfig& model_config) {
  TrainState st{build_denoiser<float>(model_config, derive_seed(config.seed, {0x4d4f44454cULL})), {}};
  st.optimizer = AdamState<float>(st.model.parameters(), config.adam);
  return st;
}

TrainLogRecord train_one_step(TrainState& state, const TrainConfig& config, const SceneConfig& scene,
                              const NoiseSchedule& schedule, std::int64_t step, int threads) {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<ScenePair> scenes = training_scenes(config, scene, step, threads);
  TrainLogRecord rec;
  rec.step = step;
  StepResult r;
  if (config.objective == Objective::cro) {
    const std::vector<CroSample> samples = cro_samples(config, schedule, scenes, step);
    rec.t = samples[0].t;
    rec.gamma = samples[0].gamma;
    r = config.mixup ? cro_step(state.model, samples, schedule, state.optimizer)
                     : no_mixup_step(state.model, samples, schedule, config, state.optimizer);
  } else {
    const std::vector<StandardSample> samples = standard_samples(config, schedule, scenes, step);
    rec.t = samples[0].t;
    r = standard_step(state.model, samples, schedule, state.optimizer);
  }
  rec.loss = r.loss;
  rec.nan = r.nan;
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

void write_train_log(const std::string& path, const std::vector<TrainLogRecord>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write training log " + path);
  out << "step,loss,t,gamma,nan_flag,seconds\n" << std::setprecision(9);
  for (const auto& r : log)
    out << r.step << ',' << r.loss << ',' << r.t << ',' << r.gamma << ',' << (r.nan ? 1 : 0) << ',' << r.seconds
        << '\n';
  if (!out) throw std::runtime_error("I/O error writing training log " + path);
}

TrainRunResult train_run(const TrainConfig& config, const SceneConfig& scene, const NoiseSchedule& schedule,
                         const DenoiserConfig& model_config, const TrainRunOptions& options) {
  validate(config, schedule);
  validate(scene);
  if (options.out_dir.empty()) throw std::invalid_argument("train_run: no output directory");
  std::filesystem::create_directories(options.out_dir);

  TrainState state = init_train_state(config, model_config);
  std::int64_t first = 1;
  if (!options.resume_from.empty()) {
    Checkpoint ck = load_checkpoint(options.resume_from, &model_config, &options.config_hash);
    if (!ck.optimizer) throw CheckpointError(options.resume_from + ": no optimizer state to resume from");
    state.model = std::move(ck.model);
    state.optimizer = std::move(*ck.optimizer);
    first = ck.meta.step + 1;
  }

  TrainRunResult result;
  const auto dir = std::filesystem::path(options.out_dir);
  auto save = [&](const std::string& path, std::int64_t step) {
    save_checkpoint(path, state.model, &state.optimizer,
                    {config.seed, step, options.config_hash, to_string(config.objective)});
  };
  for (std::int64_t step = first; step <= config.steps; ++step) {
    const TrainLogRecord rec = train_one_step(state, config, scene, schedule, step, options.threads);
    result.log.push_back(rec);
    if (options.on_step) options.on_step(rec);
    if (!options.quiet && (step % 100 == 0 || step == config.steps))
      std::cerr << "[train " << to_string(config.objective) << "] step " << step << "/" << config.steps
                << " loss " << rec.loss << (rec.nan ? " (nan)" : "") << "\n";
    if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0 && step != config.steps)
      save((dir / ("checkpoint_" + std::to_string(step) + ".bin")).string(), step);
  }
  result.checkpoint_path = (dir / "checkpoint.bin").string();
  save(result.checkpoint_path, std::max<std::int64_t>(first - 1, config.steps));
  result.log_path = (dir / "train_log.csv").string();
  write_train_log(result.log_path, result.log);
  return result;
}

}  // namespace eradiff
