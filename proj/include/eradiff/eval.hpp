#pragma once

#include "eradiff/config.hpp"
#include "eradiff/sampler.hpp"
#include "eradiff/scenegen.hpp"

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace eradiff {

/// Mean squared error inside the hole against both ground truths.
struct HoleErrors {
  double to_background = 0.0;
  double to_object = 0.0;
};

HoleErrors hole_errors(const Image& output, const ScenePair& pair);

/// 1 when the filled hole is closer to x0_ori than to x0_obj, else 0.
double elimination_score(const Image& output, const ScenePair& pair);
double elimination_rate(const std::vector<Image>& outputs, const std::vector<const ScenePair*>& pairs);

/// Returned by coherence_psnr for identical images.
constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// Full-image PSNR against x0_ori, peak value 1.
double coherence_psnr(const Image& output, const ScenePair& pair);
double psnr(const Image& a, const Image& b);

/// Held-out scenes: the first n placeable seeds at or above first_seed.
/// Seeds here are below 2^63; training scenes are above.
struct HeldOutScene {
  std::uint64_t seed;
  ScenePair pair;
};
std::vector<HeldOutScene> held_out_scenes(std::uint64_t first_seed, int n, const SceneConfig& config);

/// Fraction of scenes "erased" by an output of uniform random pixels.
double chance_elimination_rate(std::uint64_t first_seed, int n, const SceneConfig& config, std::uint64_t noise_seed);

/// chance_elimination_rate on the first 1000 default held-out scenes, averaged
/// over noise seeds 0..9. Objects are saturated colours, so almost any
/// non-object fill is nearer the background: the floor is close to 1.
constexpr double kChanceEliminationFloor = 0.9999;

struct SceneRecord {
  std::uint64_t seed = 0;
  double elimination = 0.0;
  double mse_background = 0.0;
  double mse_object = 0.0;
  double psnr = 0.0;
};

struct EvalReport {
  std::vector<SceneRecord> scenes;
  double elimination_rate = 0.0;
  double mean_psnr = 0.0;
  std::string checkpoint_id;
  std::string config_hash;
  double strength = 0.0;
  int steps = 0;
  bool sra = false;

  void aggregate();
};

struct EvalOptions {
  int batch = 25;
  int threads = 1;
};

/// Sampling noise for scene `seed` is derived from (sample.seed, seed).
std::uint64_t eval_noise_seed(std::uint64_t sample_seed, std::uint64_t scene_seed);

/// Runs erase_sample on each scene's x0_obj with its object mask and scores the result.
EvalReport evaluate(const DenoiserModel<float>& model, const std::vector<HeldOutScene>& scenes,
                    const SampleConfig& sample, const NoiseSchedule& schedule, const EvalOptions& options,
                    std::vector<Image>* outputs = nullptr);

void write_eval_csv(const std::string& path, const EvalReport& report);
nlohmann::json eval_summary_json(const EvalReport& report);

/// input | mask | output | ground truth, one PNG per scene.
void write_eval_grid(const std::string& path, const ScenePair& pair, const Image& output);

// ---------------------------------------------------------------------------
// Ablation harness

struct AblationVariant {
  std::string name;
  Objective objective;
  bool sra;
};

/// cro_sra, cro, standard_sra, standard: full method first, then the ablations.
const std::vector<AblationVariant>& ablation_variants();

struct AblationRow {
  std::string variant;
  std::string checkpoint;
  double elimination_rate = 0.0;
  double mean_psnr = 0.0;
};

/// Loss behaviour of the no-mixup run relative to the CRO run over the same steps.
struct NoMixupStats {
  int steps = 0;
  int nan_count = 0;
  double late_loss = 0.0;      // mean loss over the last quarter of the run
  double cro_late_loss = 0.0;  // same window of the CRO+SRA run
  double loss_ratio = 0.0;
  double max_loss = 0.0;
  bool unstable = false;       // nan_count > 0 or loss_ratio >= the configured threshold
};

NoMixupStats no_mixup_stats(const std::vector<TrainLogRecord>& no_mixup, const std::vector<TrainLogRecord>& cro,
                            double instability_ratio);

struct AblationTable {
  std::vector<AblationRow> rows;
  NoMixupStats no_mixup;
  std::string config_hash;
  int n_scenes = 0;
};

struct AblationOptions {
  std::string out_dir;
  int threads = 1;
  bool train_missing = true;  // false: every variant checkpoint must already exist
  bool quiet = true;
};

/// Trains (or loads) every variant plus the no-mixup run under out_dir and
/// evaluates all variants on the same held-out scenes.
AblationTable ablation_run(const RunConfig& base, int n_scenes, const AblationOptions& options);

/// Evaluates explicitly given checkpoints (variant name -> path) on the held-out set.
std::vector<AblationRow> evaluate_checkpoints(const std::vector<std::pair<std::string, std::string>>& checkpoints,
                                              const RunConfig& config, int n_scenes, const EvalOptions& options);

void write_ablation_csv(const std::string& path, const AblationTable& table);
std::vector<TrainLogRecord> read_train_log(const std::string& path);

}  // namespace eradiff
