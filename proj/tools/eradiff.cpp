#include "eradiff/checkpoint.hpp"
#include "eradiff/config.hpp"
#include "eradiff/eval.hpp"
#include "eradiff/oracle.hpp"
#include "eradiff/png_io.hpp"
#include "eradiff/sampler.hpp"
#include "eradiff/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using namespace eradiff;
using nlohmann::json;

namespace {

constexpr int kOk = 0, kCheckFailed = 1, kUsage = 2;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> objective;
  std::optional<double> strength;
  std::optional<int> steps;
  std::optional<std::string> sra;
  std::string checkpoint;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "run seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--objective", f.objective, "cro | standard | standard_bg")
      ->check(CLI::IsMember({"cro", "standard", "standard_bg"}));
  cmd->add_option("--strength", f.strength, "denoising strength in (0, 1]");
  cmd->add_option("--steps", f.steps, "sampling steps (training steps for 'train')");
  cmd->add_option("--sra", f.sra, "self-rectifying attention on/off")->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--checkpoint", f.checkpoint, "model checkpoint");
}

int threads_from_env() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* e = std::getenv("ERADIFF_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(e, &end, 10);
    if (end == e || *end != '\0' || v < 1) throw ConfigError("ERADIFF_THREADS must be a positive integer");
    n = std::min<long>(n, v);
  }
  return n;
}

RunConfig resolve(const Flags& f, bool steps_are_training) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.out) c.out = *f.out;
  if (f.objective) c.train.objective = parse_objective(*f.objective);
  if (f.strength) c.sample.strength = *f.strength;
  if (f.steps) (steps_are_training ? c.train.steps : c.sample.steps) = *f.steps;
  if (f.sra) {
    c.sample.sra = *f.sra == "on";
    if (steps_are_training) c.model.sra = *c.sample.sra;
  }
  c.propagate_seed();
  validate(c);
  return c;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json stamp(const RunConfig& c) { return {{"config_hash", config_hash(c)}, {"seed", c.seed}}; }

int cmd_synth(const RunConfig& c) {
  const fs::path out(c.out);
  fs::create_directories(out);
  json manifest = stamp(c);
  manifest["scenes"] = json::array();
  for (const auto& s : held_out_scenes(c.seed, c.synth.n, c.scene)) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "scene_%06llu", static_cast<unsigned long long>(s.seed));
    const std::string ori = std::string(stem) + "_ori.png", obj = std::string(stem) + "_obj.png",
                      mask = std::string(stem) + "_mask.png", side = std::string(stem) + ".json";
    write_png((out / ori).string(), s.pair.x0_ori);
    write_png((out / obj).string(), s.pair.x0_obj);
    write_png((out / mask).string(), s.pair.mask);
    const TransformLog& l = s.pair.log;
    const json log = {{"seed", l.seed},         {"shape", to_string(l.shape)},       {"scale", l.scale},
                      {"rotation_deg", l.rotation_deg}, {"source", {l.source_y, l.source_x}},
                      {"paste", {l.paste_y, l.paste_x}}, {"placement_attempts", l.placement_attempts},
                      {"mask_area", s.pair.mask.fraction()}, {"config_hash", config_hash(c)}};
    write_json(out / side, log);
    manifest["scenes"].push_back({{"seed", s.seed}, {"ori", ori}, {"obj", obj}, {"mask", mask}, {"transform_log", side}});
  }
  manifest["n"] = manifest["scenes"].size();
  write_json(out / "manifest.json", manifest);
  std::cout << "wrote " << manifest["n"] << " scenes to " << out.string() << "\n";
  return kOk;
}

int cmd_train(const RunConfig& c, const Flags& f) {
  const NoiseSchedule sched = c.schedule.build();
  TrainRunOptions opt;
  opt.out_dir = c.out;
  opt.config_hash = config_hash(c);
  opt.resume_from = f.checkpoint;
  opt.threads = threads_from_env();
  opt.quiet = false;
  fs::create_directories(c.out);
  write_json(fs::path(c.out) / "config.json", to_json(c));
  const TrainRunResult r = train_run(c.train, c.scene, sched, c.model, opt);
  int nan = 0;
  for (const auto& rec : r.log) nan += rec.nan;
  std::cout << "objective " << to_string(c.train.objective) << ", sra " << (c.model.sra ? "on" : "off") << ", "
            << r.log.size() << " steps, " << nan << " non-finite\n"
            << "checkpoint " << r.checkpoint_path << "\nlog " << r.log_path << "\n";
  return kOk;
}

Image trajectory_image(const Eigen::ArrayXd& x, const Image& like) {
  Image img = like;
  img.data = x.max(0.0).min(1.0);
  return img;
}

int cmd_sample(const RunConfig& c, const Flags& f, const std::string& input, const std::string& mask_path,
               std::optional<std::uint64_t> scene_seed, bool oracle) {
  const NoiseSchedule sched = c.schedule.build();
  ScenePair pair;
  Image in;
  Mask mask;
  std::uint64_t used_seed = 0;
  if (!input.empty()) {
    if (oracle) throw ConfigError("--oracle needs a generated scene, not --input");
    if (mask_path.empty()) throw ConfigError("--input requires --mask");
    in = read_png(input);
    mask = read_mask_png(mask_path);
  } else {
    const auto scenes = held_out_scenes(scene_seed.value_or(c.eval.first_seed), 1, c.scene);
    pair = scenes[0].pair;
    used_seed = scenes[0].seed;
    in = pair.x0_obj;
    mask = pair.mask;
  }
  SampleConfig sc = c.sample;
  sc.seed = eval_noise_seed(c.sample.seed, used_seed);
  EraseResult res;
  std::string source = "oracle";
  if (oracle) {
    res = erase_sample(oracle_denoiser(pair, sched), in, mask, sc, sched);
  } else {
    if (f.checkpoint.empty()) throw ConfigError("sample needs --checkpoint (or --oracle)");
    const Checkpoint ck = load_checkpoint(f.checkpoint);
    source = f.checkpoint;
    const std::vector<EraseItem> items{{&in, &mask, sc.seed}};
    res = std::move(erase_sample_batch(model_denoiser(ck.model, items, sc.sra), items, sc, sched)[0]);
  }
  const fs::path out(c.out);
  fs::create_directories(out / "trajectory");
  write_png((out / "output.png").string(), res.output);
  write_png((out / "input.png").string(), in);
  write_png((out / "mask.png").string(), mask);
  json manifest = stamp(c);
  manifest["denoiser"] = source;
  manifest["strength"] = sc.strength;
  manifest["steps"] = sc.steps;
  manifest["noise_seed"] = sc.seed;
  if (input.empty()) manifest["scene_seed"] = used_seed;
  manifest["timesteps"] = res.trajectory.timesteps;
  manifest["frames"] = json::array();
  for (std::size_t i = 0; i < res.trajectory.states.size(); ++i) {
    char name[48], est[48];
    std::snprintf(name, sizeof name, "trajectory/state_%03zu.png", i);
    std::snprintf(est, sizeof est, "trajectory/x0_%03zu.png", i);
    write_png((out / name).string(), trajectory_image(res.trajectory.states[i], in));
    write_png((out / est).string(), trajectory_image(res.trajectory.x0_estimates[i], in));
    manifest["frames"].push_back({{"t", res.trajectory.timesteps[i]}, {"state", name}, {"x0_estimate", est}});
  }
  write_json(out / "manifest.json", manifest);
  if (input.empty()) {
    std::cout << "elimination " << elimination_score(res.output, pair) << ", psnr " << coherence_psnr(res.output, pair)
              << "\n";
  }
  std::cout << "output " << (out / "output.png").string() << "\n";
  return kOk;
}

int cmd_eval(const RunConfig& c, const Flags& f, std::optional<int> n) {
  if (f.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  const NoiseSchedule sched = c.schedule.build();
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  const auto scenes = held_out_scenes(c.eval.first_seed, n.value_or(c.eval.n_scenes), c.scene);
  std::vector<Image> outputs;
  EvalReport r = evaluate(ck.model, scenes, c.sample, sched, {c.eval.batch, threads_from_env()}, &outputs);
  r.checkpoint_id = fs::path(f.checkpoint).filename().string() + "@" + std::to_string(ck.meta.step) + ":" +
                    ck.meta.config_hash;
  r.config_hash = config_hash(c);
  const fs::path out(c.out);
  write_eval_csv((out / "report.csv").string(), r);
  json summary = eval_summary_json(r);
  summary["seed"] = c.seed;
  write_json(out / "summary.json", summary);
  for (int i = 0; i < std::min<int>(c.eval.grids, static_cast<int>(scenes.size())); ++i)
    write_eval_grid((out / "grids" / ("scene_" + std::to_string(scenes[i].seed) + ".png")).string(), scenes[i].pair,
                    outputs[i]);
  std::cout << "scenes " << r.scenes.size() << ", elimination rate " << r.elimination_rate << ", mean psnr "
            << r.mean_psnr << "\n";
  return kOk;
}

int cmd_ablate(const RunConfig& c, std::optional<int> n) {
  AblationOptions opt;
  opt.out_dir = c.out;
  opt.threads = threads_from_env();
  opt.quiet = false;
  const int scenes = n.value_or(c.eval.n_scenes);
  const AblationTable t = ablation_run(c, scenes, opt);
  write_ablation_csv((fs::path(c.out) / "ablation.csv").string(), t);

  // Leakage probe on the full model: lower strength leaves more of the input in play.
  const NoiseSchedule sched = c.schedule.build();
  const Checkpoint ck = load_checkpoint((fs::path(c.out) / "cro_sra" / "checkpoint.bin").string());
  const auto probe_scenes = held_out_scenes(c.eval.first_seed, c.ablate.leakage_scenes, c.scene);
  json leakage = json::array();
  for (double s : c.ablate.leakage_strengths) {
    SampleConfig sc = c.sample;
    sc.strength = s;
    sc.sra.reset();
    const EvalReport r = evaluate(ck.model, probe_scenes, sc, sched, {c.eval.batch, opt.threads});
    leakage.push_back({{"strength", s}, {"elimination_rate", r.elimination_rate}, {"mean_psnr", r.mean_psnr}});
  }
  json j = stamp(c);
  j["n_scenes"] = scenes;
  j["rows"] = json::array();
  for (const auto& r : t.rows)
    j["rows"].push_back({{"variant", r.variant}, {"elimination_rate", r.elimination_rate}, {"mean_psnr", r.mean_psnr}});
  const NoMixupStats& nm = t.no_mixup;
  j["no_mixup"] = {{"steps", nm.steps},          {"nan_count", nm.nan_count}, {"late_loss", nm.late_loss},
                   {"cro_late_loss", nm.cro_late_loss}, {"loss_ratio", nm.loss_ratio}, {"max_loss", nm.max_loss},
                   {"unstable", nm.unstable}};
  j["leakage"] = leakage;
  j["chance_floor"] = kChanceEliminationFloor;
  write_json(fs::path(c.out) / "ablation.json", j);

  std::cout << "variant        elimination  psnr\n";
  for (const auto& r : t.rows) std::printf("%-14s %11.3f  %6.2f\n", r.variant.c_str(), r.elimination_rate, r.mean_psnr);
  std::printf("no_mixup: nan %d, late loss ratio %.3f, %s\n", nm.nan_count, nm.loss_ratio,
              nm.unstable ? "unstable" : "stable");
  for (const auto& l : leakage)
    std::printf("leakage strength %.2f: elimination %.3f\n", l["strength"].get<double>(),
                l["elimination_rate"].get<double>());
  return kOk;
}

int cmd_oracle_check(const RunConfig& c, int draws, double corrupt_b) {
  const NoiseSchedule sched = c.schedule.build();
  OracleCheckOptions o;
  o.draws = draws;
  o.seed = c.seed;
  o.corrupt_b = corrupt_b;
  const OracleCheckResult r = run_oracle_check(c.scene, sched, o);
  std::printf("schedule %s, T=%d, draws %d, config %s\n", to_string(sched.kind()).c_str(), sched.steps(), draws,
              config_hash(c).c_str());
  auto line = [](const char* name, double err, double tol, bool ok, const OracleFailure& w) {
    std::printf("%-12s max error %.3e (tol %.0e) %s", name, err, tol, ok ? "ok" : "FAIL");
    if (!ok) std::printf(" at t=%d seed=%llu", w.t, static_cast<unsigned long long>(w.seed));
    std::printf("\n");
  };
  line("identity", r.identity_max, o.identity_tol, r.identity_ok, r.identity_worst);
  line("composition", r.composition_max, o.composition_tol, r.composition_ok, r.composition_worst);
  line("rollout", r.rollout_max, o.rollout_tol, r.rollout_ok, r.rollout_worst);
  return r.pass() ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"eradiff: erase-diffusion training, sampling and checks"};
  app.require_subcommand(1);
  Flags f;
  std::optional<int> n;
  std::string input, mask;
  std::optional<std::uint64_t> scene_seed;
  bool oracle = false;
  int draws = 200;
  double corrupt_b = 0.0;

  auto* synth = app.add_subcommand("synth", "write synthetic scene pairs as PNG triplets");
  auto* train = app.add_subcommand("train", "train a denoiser");
  auto* sample = app.add_subcommand("sample", "erase the object from one scene");
  auto* eval = app.add_subcommand("eval", "score a checkpoint on held-out scenes");
  auto* ablate = app.add_subcommand("ablate", "train and compare the ablation variants");
  auto* check = app.add_subcommand("oracle-check", "verify the closed-form oracle");
  for (auto* cmd : {synth, train, sample, eval, ablate, check}) add_common(cmd, f);
  synth->add_option("--n", n, "number of scenes");
  eval->add_option("--n", n, "number of held-out scenes");
  ablate->add_option("--n", n, "number of held-out scenes");
  sample->add_option("--input", input, "input PNG (default: a generated scene)");
  sample->add_option("--mask", mask, "mask PNG, non-zero = erase");
  sample->add_option("--scene", scene_seed, "held-out scene seed");
  sample->add_flag("--oracle", oracle, "use the closed-form denoiser of the generated scene");
  check->add_option("--draws", draws, "random (scene, t, eps) draws")->check(CLI::PositiveNumber);
  check->add_option("--corrupt-b", corrupt_b, "test hook: perturb the B coefficient")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const bool training = train->parsed();
    RunConfig c = resolve(f, training);
    if (synth->parsed()) {
      if (n) c.synth.n = *n;
      if (c.synth.n < 0) throw ConfigError("--n must be >= 0");
      return cmd_synth(c);
    }
    if (training) return cmd_train(c, f);
    if (sample->parsed()) return cmd_sample(c, f, input, mask, scene_seed, oracle);
    if (eval->parsed()) return cmd_eval(c, f, n);
    if (ablate->parsed()) return cmd_ablate(c, n);
    return cmd_oracle_check(c, draws, corrupt_b);
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
}
