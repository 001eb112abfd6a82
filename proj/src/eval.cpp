#include "eradiff/eval.hpp"

#include "eradiff/checkpoint.hpp"
#include "eradiff/png_io.hpp"
#include "eradiff/rng.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

namespace eradiff {

namespace fs = std::filesystem;

HoleErrors hole_errors(const Image& output, const ScenePair& pair) {
  if (!output.same_shape(pair.x0_ori)) throw std::invalid_argument("hole_errors: output shape differs from the scene");
  if (pair.mask.empty()) throw std::invalid_argument("hole_errors: empty mask");
  const Eigen::ArrayXd m = pair.mask.broadcast(output.channels);
  const double n = m.sum();
  return {(m * (output.data - pair.x0_ori.data).square()).sum() / n,
          (m * (output.data - pair.x0_obj.data).square()).sum() / n};
}

double elimination_score(const Image& output, const ScenePair& pair) {
  const HoleErrors e = hole_errors(output, pair);
  return e.to_background < e.to_object ? 1.0 : 0.0;
}

double elimination_rate(const std::vector<Image>& outputs, const std::vector<const ScenePair*>& pairs) {
  if (outputs.size() != pairs.size()) throw std::invalid_argument("elimination_rate: size mismatch");
  if (outputs.empty()) throw std::invalid_argument("elimination_rate: no scenes");
  double s = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) s += elimination_score(outputs[i], *pairs[i]);
  return s / static_cast<double>(outputs.size());
}

double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: shapes differ");
  const double mse = (a.data - b.data).square().mean();
  if (mse == 0.0) return kInfinitePsnr;
  return -10.0 * std::log10(mse);
}

double coherence_psnr(const Image& output, const ScenePair& pair) { return psnr(output, pair.x0_ori); }

std::vector<HeldOutScene> held_out_scenes(std::uint64_t first_seed, int n, const SceneConfig& config) {
  std::vector<HeldOutScene> out;
  for (std::uint64_t seed = first_seed; static_cast<int>(out.size()) < n; ++seed) {
    if (seed & (1ULL << 63)) throw std::out_of_range("held_out_scenes: seed range reaches the training split");
    try {
      out.push_back({seed, generate_scene(seed, config)});
    } catch (const std::runtime_error&) {
      // unplaceable draw: skipped, the seed is simply absent from the list
    }
  }
  return out;
}

double chance_elimination_rate(std::uint64_t first_seed, int n, const SceneConfig& config, std::uint64_t noise_seed) {
  const auto scenes = held_out_scenes(first_seed, n, config);
  double s = 0.0;
  for (const auto& sc : scenes) {
    Rng rng(derive_seed(noise_seed, {sc.seed}));
    Image noise = sc.pair.x0_obj;
    for (Eigen::Index i = 0; i < noise.data.size(); ++i) noise.data(i) = rng.uniform();
    s += elimination_score(noise, sc.pair);
  }
  return s / static_cast<double>(scenes.size());
}

void EvalReport::aggregate() {
  if (scenes.empty()) {
    elimination_rate = mean_psnr = 0.0;
    return;
  }
  double e = 0.0, p = 0.0;
  for (const auto& r : scenes) {
    e += r.elimination;
    p += r.psnr;
  }
  elimination_rate = e / static_cast<double>(scenes.size());
  mean_psnr = p / static_cast<double>(scenes.size());
}

std::uint64_t eval_noise_seed(std::uint64_t sample_seed, std::uint64_t scene_seed) {
  return derive_seed(sample_seed, {0x4556414cULL, scene_seed});
}

EvalReport evaluate(const DenoiserModel<float>& model, const std::vector<HeldOutScene>& scenes,
                    const SampleConfig& sample, const NoiseSchedule& schedule, const EvalOptions& options,
                    std::vector<Image>* outputs) {
  if (options.batch < 1) throw std::invalid_argument("evaluate: batch must be >= 1");
  EvalReport report;
  report.strength = sample.strength;
  report.steps = sample.steps;
  report.sra = sample.sra.value_or(model.sra_enabled());
  report.scenes.resize(scenes.size());
  std::vector<Image> results(scenes.size());

  const std::size_t nbatch = (scenes.size() + options.batch - 1) / options.batch;
  auto run_batch = [&](std::size_t b) {
    const std::size_t lo = b * options.batch, hi = std::min(scenes.size(), lo + options.batch);
    std::vector<EraseItem> items;
    for (std::size_t i = lo; i < hi; ++i)
      items.push_back({&scenes[i].pair.x0_obj, &scenes[i].pair.mask, eval_noise_seed(sample.seed, scenes[i].seed)});
    const auto res = erase_sample_batch(model_denoiser(model, items, sample.sra), items, sample, schedule);
    for (std::size_t i = lo; i < hi; ++i) {
      const ScenePair& p = scenes[i].pair;
      const Image& out = res[i - lo].output;
      const HoleErrors e = hole_errors(out, p);
      report.scenes[i] = {scenes[i].seed, e.to_background < e.to_object ? 1.0 : 0.0, e.to_background, e.to_object,
                          coherence_psnr(out, p)};
      results[i] = out;
    }
  };
  const int workers = std::clamp<int>(options.threads, 1, static_cast<int>(std::max<std::size_t>(nbatch, 1)));
  if (workers == 1) {
    for (std::size_t b = 0; b < nbatch; ++b) run_batch(b);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t b = w; b < nbatch; b += workers) run_batch(b);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  report.aggregate();
  if (outputs) *outputs = std::move(results);
  return report;
}

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

std::ofstream open_out(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

}  // namespace

void write_eval_csv(const std::string& path, const EvalReport& r) {
  std::ofstream out = open_out(path);
  out << "# checkpoint=" << r.checkpoint_id << " config_hash=" << r.config_hash << " strength=" << fmt(r.strength)
      << " steps=" << r.steps << " sra=" << (r.sra ? "on" : "off") << " n_scenes=" << r.scenes.size() << "\n";
  out << "seed,elimination,mse_background,mse_object,psnr\n";
  for (const auto& s : r.scenes)
    out << s.seed << ',' << fmt(s.elimination) << ',' << fmt(s.mse_background) << ',' << fmt(s.mse_object) << ','
        << fmt(s.psnr) << '\n';
  out << "# elimination_rate=" << fmt(r.elimination_rate) << " mean_psnr=" << fmt(r.mean_psnr) << "\n";
}

nlohmann::json eval_summary_json(const EvalReport& r) {
  return {{"checkpoint", r.checkpoint_id}, {"config_hash", r.config_hash}, {"n_scenes", r.scenes.size()},
          {"strength", r.strength},        {"steps", r.steps},             {"sra", r.sra},
          {"elimination_rate", r.elimination_rate},
          {"mean_psnr", std::isfinite(r.mean_psnr) ? nlohmann::json(r.mean_psnr) : nlohmann::json("inf")}};
}

void write_eval_grid(const std::string& path, const ScenePair& pair, const Image& output) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_png(path, hstack({pair.x0_obj, mask_image(pair.mask, pair.x0_obj.channels), output, pair.x0_ori}));
}

// ---------------------------------------------------------------------------

const std::vector<AblationVariant>& ablation_variants() {
  static const std::vector<AblationVariant> v{{"cro_sra", Objective::cro, true},
                                              {"cro", Objective::cro, false},
                                              {"standard_sra", Objective::standard, true},
                                              {"standard", Objective::standard, false}};
  return v;
}

NoMixupStats no_mixup_stats(const std::vector<TrainLogRecord>& no_mixup, const std::vector<TrainLogRecord>& cro,
                            double instability_ratio) {
  NoMixupStats s;
  s.steps = static_cast<int>(no_mixup.size());
  if (no_mixup.empty()) throw std::invalid_argument("no_mixup_stats: empty log");
  const std::int64_t last = no_mixup.back().step;
  const std::int64_t window_start = last - std::max<std::int64_t>(1, static_cast<std::int64_t>(no_mixup.size()) / 4) + 1;
  double sum = 0.0, cro_sum = 0.0;
  int n = 0, cro_n = 0;
  for (const auto& r : no_mixup) {
    if (r.nan || !std::isfinite(r.loss)) {
      ++s.nan_count;
      continue;
    }
    s.max_loss = std::max(s.max_loss, r.loss);
    if (r.step >= window_start) {
      sum += r.loss;
      ++n;
    }
  }
  for (const auto& r : cro)
    if (r.step >= window_start && r.step <= last && !r.nan) {
      cro_sum += r.loss;
      ++cro_n;
    }
  s.late_loss = n ? sum / n : std::numeric_limits<double>::quiet_NaN();
  s.cro_late_loss = cro_n ? cro_sum / cro_n : std::numeric_limits<double>::quiet_NaN();
  s.loss_ratio = s.late_loss / s.cro_late_loss;
  s.unstable = s.nan_count > 0 || !(s.loss_ratio < instability_ratio);
  return s;
}

std::vector<TrainLogRecord> read_train_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read training log " + path);
  std::vector<TrainLogRecord> log;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream s(line);
    TrainLogRecord r;
    std::string field;
    std::getline(s, field, ',');
    r.step = std::stoll(field);
    std::getline(s, field, ',');
    r.loss = std::strtod(field.c_str(), nullptr);
    std::getline(s, field, ',');
    r.t = std::stoi(field);
    std::getline(s, field, ',');
    r.gamma = std::stoi(field);
    std::getline(s, field, ',');
    r.nan = field == "1";
    std::getline(s, field, ',');
    r.seconds = std::strtod(field.c_str(), nullptr);
    log.push_back(r);
  }
  return log;
}

namespace {

RunConfig variant_config(const RunConfig& base, Objective objective, bool sra) {
  RunConfig c = base;
  c.train.objective = objective;
  c.train.mixup = true;
  c.model.sra = sra;
  c.sample.sra.reset();
  return c;
}

// An existing checkpoint is reused only if it was trained from the same config.
bool trained_with(const std::string& path, const std::string& hash) {
  if (!fs::exists(path)) return false;
  try {
    return load_checkpoint(path).meta.config_hash == hash;
  } catch (const CheckpointError&) {
    return false;
  }
}

}  // namespace

std::vector<AblationRow> evaluate_checkpoints(const std::vector<std::pair<std::string, std::string>>& checkpoints,
                                              const RunConfig& config, int n_scenes, const EvalOptions& options) {
  if (n_scenes < 1) throw std::invalid_argument("ablation: n_scenes must be >= 1");
  std::string missing;
  for (const auto& [name, path] : checkpoints)
    if (!fs::exists(path)) missing += (missing.empty() ? "" : ", ") + name + " (" + path + ")";
  if (!missing.empty()) throw std::runtime_error("ablation: missing checkpoints for " + missing);

  const NoiseSchedule sched = config.schedule.build();
  const auto scenes = held_out_scenes(config.eval.first_seed, n_scenes, config.scene);
  std::vector<AblationRow> rows;
  for (const auto& [name, path] : checkpoints) {
    const Checkpoint ck = load_checkpoint(path);
    SampleConfig sample = config.sample;
    sample.sra.reset();  // each variant samples with the attention mode it was trained with
    const EvalReport r = evaluate(ck.model, scenes, sample, sched, options);
    rows.push_back({name, path, r.elimination_rate, r.mean_psnr});
  }
  return rows;
}

AblationTable ablation_run(const RunConfig& base, int n_scenes, const AblationOptions& options) {
  validate(base);
  const NoiseSchedule sched = base.schedule.build();
  const fs::path root(options.out_dir);
  AblationTable table;
  table.config_hash = config_hash(base);
  table.n_scenes = n_scenes;

  std::vector<std::pair<std::string, std::string>> checkpoints;
  for (const auto& v : ablation_variants()) {
    const RunConfig c = variant_config(base, v.objective, v.sra);
    const fs::path dir = root / v.name;
    const std::string ck = (dir / "checkpoint.bin").string();
    if (!trained_with(ck, config_hash(c)) && options.train_missing)
      train_run(c.train, c.scene, sched, c.model, {dir.string(), config_hash(c), "", options.threads, options.quiet, {}});
    checkpoints.emplace_back(v.name, ck);
  }
  table.rows = evaluate_checkpoints(checkpoints, base, n_scenes, {base.eval.batch, options.threads});

  RunConfig nm = variant_config(base, Objective::cro, true);
  nm.train.mixup = false;
  nm.train.steps = std::min(base.ablate.no_mixup_steps, base.train.steps);
  const fs::path nm_dir = root / "no_mixup";
  std::vector<TrainLogRecord> nm_log;
  if (fs::exists(nm_dir / "train_log.csv") && trained_with((nm_dir / "checkpoint.bin").string(), config_hash(nm))) {
    nm_log = read_train_log((nm_dir / "train_log.csv").string());
  } else {
    nm_log = train_run(nm.train, nm.scene, sched, nm.model,
                       {nm_dir.string(), config_hash(nm), "", options.threads, options.quiet, {}})
                 .log;
  }
  const auto cro_log = read_train_log((root / "cro_sra" / "train_log.csv").string());
  table.no_mixup = no_mixup_stats(nm_log, cro_log, base.ablate.instability_ratio);
  return table;
}

void write_ablation_csv(const std::string& path, const AblationTable& t) {
  std::ofstream out = open_out(path);
  out << "# config_hash=" << t.config_hash << " n_scenes=" << t.n_scenes << "\n";
  out << "variant,elimination_rate,mean_psnr,nan_count,loss_ratio,unstable\n";
  for (const auto& r : t.rows) out << r.variant << ',' << fmt(r.elimination_rate) << ',' << fmt(r.mean_psnr) << ",,,\n";
  const NoMixupStats& s = t.no_mixup;
  out << "no_mixup,,," << s.nan_count << ',' << fmt(s.loss_ratio) << ',' << (s.unstable ? 1 : 0) << '\n';
}

}  // namespace eradiff
