#include "eradiff/config.hpp"

#include <fstream>
#include <set>

namespace eradiff {

using nlohmann::json;

namespace {

// Reads known keys out of one JSON object and rejects anything left over.
class Section {
 public:
  Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ConfigError(path_ + ": expected an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : doc_.items())
      if (!seen_.count(key)) throw ConfigError(path_ + ": unknown key '" + key + "'");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!doc_.contains(key)) return;
    try {
      out = doc_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  template <typename T, typename Parse>
  void get_enum(const std::string& key, T& out, Parse parse) {
    std::string name;
    get(key, name);
    if (name.empty()) return;
    try {
      out = parse(name);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const std::string& key) {
    seen_.insert(key);
    return doc_.contains(key) ? &doc_.at(key) : nullptr;
  }

 private:
  const json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

json adam_json(const AdamParams& a) {
  return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}

}  // namespace

json to_json(const DenoiserConfig& c) {
  return {{"image_channels", c.image_channels},
          {"image_size", c.image_size},
          {"widths", c.widths},
          {"attention_resolution", c.attention_resolution},
          {"attention_dim", c.attention_dim},
          {"time_dim", c.time_dim},
          {"output_init_scale", c.output_init_scale},
          {"sra", c.sra}};
}

DenoiserConfig denoiser_config_from_json(const json& doc) {
  DenoiserConfig c;
  Section s(doc, "model");
  s.get("image_channels", c.image_channels);
  s.get("image_size", c.image_size);
  s.get("widths", c.widths);
  s.get("attention_resolution", c.attention_resolution);
  s.get("attention_dim", c.attention_dim);
  s.get("time_dim", c.time_dim);
  s.get("output_init_scale", c.output_init_scale);
  s.get("sra", c.sra);
  return c;
}

void RunConfig::propagate_seed() {
  train.seed = seed;
  sample.seed = seed;
}

json to_json(const RunConfig& c) {
  json j;
  j["schedule"] = {{"kind", to_string(c.schedule.kind)},
                   {"steps", c.schedule.steps},
                   {"beta_min", c.schedule.beta_min},
                   {"beta_max", c.schedule.beta_max}};
  j["scene"] = {{"size", c.scene.size},
                {"channels", c.scene.channels},
                {"area_min", c.scene.area_min},
                {"area_max", c.scene.area_max},
                {"scale_min", c.scene.scale_min},
                {"scale_max", c.scene.scale_max},
                {"radius_min", c.scene.radius_min},
                {"radius_max", c.scene.radius_max},
                {"resident_object", c.scene.resident_object}};
  j["model"] = to_json(c.model);
  const TrainConfig& t = c.train;
  j["train"] = {{"objective", to_string(t.objective)},
                {"gamma_m", t.gamma_m},
                {"mixup", t.mixup},
                {"mixup_lambda", t.mixup_lambda},
                {"batch", t.batch},
                {"steps", t.steps},
                {"adam", adam_json(t.adam)},
                {"checkpoint_every", t.checkpoint_every},
                {"mask_family", to_string(t.mask_family)},
                {"mask_area_min", t.mask_area_min},
                {"mask_area_max", t.mask_area_max},
                {"bg_mask_area_max", t.bg_mask_area_max}};
  j["sample"] = {{"steps", c.sample.steps}, {"strength", c.sample.strength}};
  if (c.sample.sra) j["sample"]["sra"] = *c.sample.sra;
  j["eval"] = {{"n_scenes", c.eval.n_scenes},
               {"first_seed", c.eval.first_seed},
               {"grids", c.eval.grids},
               {"batch", c.eval.batch}};
  j["synth"] = {{"n", c.synth.n}};
  j["ablate"] = {{"no_mixup_steps", c.ablate.no_mixup_steps},
                 {"instability_ratio", c.ablate.instability_ratio},
                 {"leakage_scenes", c.ablate.leakage_scenes},
                 {"leakage_strengths", c.ablate.leakage_strengths}};
  j["out"] = c.out;
  j["seed"] = c.seed;
  return j;
}

RunConfig run_config_from_json(const json& doc) {
  RunConfig c;
  Section root(doc, "config");
  if (const json* j = root.sub("schedule")) {
    Section s(*j, "schedule");
    s.get_enum("kind", c.schedule.kind, parse_schedule_kind);
    s.get("steps", c.schedule.steps);
    s.get("beta_min", c.schedule.beta_min);
    s.get("beta_max", c.schedule.beta_max);
  }
  if (const json* j = root.sub("scene")) {
    Section s(*j, "scene");
    s.get("size", c.scene.size);
    s.get("channels", c.scene.channels);
    s.get("area_min", c.scene.area_min);
    s.get("area_max", c.scene.area_max);
    s.get("scale_min", c.scene.scale_min);
    s.get("scale_max", c.scene.scale_max);
    s.get("radius_min", c.scene.radius_min);
    s.get("radius_max", c.scene.radius_max);
    s.get("resident_object", c.scene.resident_object);
  }
  if (const json* j = root.sub("model")) c.model = denoiser_config_from_json(*j);
  if (const json* j = root.sub("train")) {
    TrainConfig& t = c.train;
    Section s(*j, "train");
    s.get_enum("objective", t.objective, parse_objective);
    s.get("gamma_m", t.gamma_m);
    s.get("mixup", t.mixup);
    s.get("mixup_lambda", t.mixup_lambda);
    s.get("batch", t.batch);
    s.get("steps", t.steps);
    if (const json* a = s.sub("adam")) {
      Section sa(*a, "train.adam");
      sa.get("lr", t.adam.lr);
      sa.get("beta1", t.adam.beta1);
      sa.get("beta2", t.adam.beta2);
      sa.get("eps", t.adam.eps);
    }
    s.get("checkpoint_every", t.checkpoint_every);
    s.get_enum("mask_family", t.mask_family, parse_mask_kind);
    s.get("mask_area_min", t.mask_area_min);
    s.get("mask_area_max", t.mask_area_max);
    s.get("bg_mask_area_max", t.bg_mask_area_max);
  }
  if (const json* j = root.sub("sample")) {
    Section s(*j, "sample");
    s.get("steps", c.sample.steps);
    s.get("strength", c.sample.strength);
    if (const json* v = s.sub("sra")) {
      if (!v->is_boolean()) throw ConfigError("sample.sra: expected a boolean");
      c.sample.sra = v->get<bool>();
    }
  }
  if (const json* j = root.sub("eval")) {
    Section s(*j, "eval");
    s.get("n_scenes", c.eval.n_scenes);
    s.get("first_seed", c.eval.first_seed);
    s.get("grids", c.eval.grids);
    s.get("batch", c.eval.batch);
  }
  if (const json* j = root.sub("synth")) {
    Section s(*j, "synth");
    s.get("n", c.synth.n);
  }
  if (const json* j = root.sub("ablate")) {
    Section s(*j, "ablate");
    s.get("no_mixup_steps", c.ablate.no_mixup_steps);
    s.get("instability_ratio", c.ablate.instability_ratio);
    s.get("leakage_scenes", c.ablate.leakage_scenes);
    s.get("leakage_strengths", c.ablate.leakage_strengths);
  }
  root.get("out", c.out);
  root.get("seed", c.seed);
  c.propagate_seed();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(doc);
}

void validate(const RunConfig& c) {
  try {
    const NoiseSchedule sched = c.schedule.build();
    validate(c.scene);
    validate(c.model);
    validate(c.train, sched);
    validate(c.sample);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (c.model.image_size != c.scene.size || c.model.image_channels != c.scene.channels)
    throw ConfigError("model image shape does not match scene size/channels");
  if (c.eval.n_scenes < 0 || c.eval.batch < 1) throw ConfigError("eval: n_scenes >= 0 and batch >= 1 required");
  if (c.synth.n < 0) throw ConfigError("synth.n must be >= 0");
  if (c.ablate.no_mixup_steps < 1 || c.ablate.instability_ratio <= 1.0)
    throw ConfigError("ablate: no_mixup_steps >= 1 and instability_ratio > 1 required");
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const RunConfig& config) {
  json j = to_json(config);
  j.erase("out");  // where artifacts go does not change what they are
  return fnv1a_hex(j.dump());
}

}  // namespace eradiff
