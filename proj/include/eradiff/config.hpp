#pragma once

#include "eradiff/model.hpp"
#include "eradiff/sampler.hpp"
#include "eradiff/scenegen.hpp"
#include "eradiff/schedule.hpp"
#include "eradiff/train.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace eradiff {

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::linear;
  int steps = 200;
  double beta_min = 1e-4;
  double beta_max = 0.02;

  NoiseSchedule build() const { return build_schedule(kind, steps, beta_min, beta_max); }
};

struct EvalConfig {
  int n_scenes = 200;
  std::uint64_t first_seed = 0;  // held-out scenes are first_seed .. first_seed + n - 1
  int grids = 8;                 // side-by-side PNGs written for the first few scenes
  int batch = 25;
};

struct SynthConfig {
  int n = 8;  // scenes use seeds run_seed, run_seed + 1, ... (unplaceable seeds skipped)
};

struct AblateConfig {
  int no_mixup_steps = 400;        // length of the no-mixup run
  double instability_ratio = 3.0;  // late-window loss ratio vs. the CRO run that counts as unstable
  int leakage_scenes = 100;
  std::vector<double> leakage_strengths{0.95, 0.6};
};

/// Everything a command needs; every artifact is stamped with hash().
struct RunConfig {
  ScheduleConfig schedule;
  SceneConfig scene;
  DenoiserConfig model;
  TrainConfig train;
  SampleConfig sample;
  EvalConfig eval;
  SynthConfig synth;
  AblateConfig ablate;
  std::string out = "out";
  std::uint64_t seed = 0;

  /// Pushes the run seed into the sub-configs that carry their own copy.
  void propagate_seed();
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

nlohmann::json to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys and wrong types throw ConfigError.
RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);
void validate(const RunConfig& config);

nlohmann::json to_json(const DenoiserConfig& config);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& doc);

/// FNV-1a over the canonical (sorted-key, compact) JSON dump, as 16 hex digits.
std::string config_hash(const RunConfig& config);
std::string fnv1a_hex(const std::string& bytes);

}  // namespace eradiff
