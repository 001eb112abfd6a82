#include "eradiff/checkpoint.hpp"

#include "eradiff/config.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace eradiff {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'E', 'R', 'D', 'F', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::ifstream& in, const std::string& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError(path + ": truncated checkpoint");
  return v;
}

void put_floats(std::ofstream& out, const Eigen::ArrayXf& a) {
  out.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(float)));
}

Eigen::ArrayXf take_floats(std::ifstream& in, Index n, const std::string& path) {
  Eigen::ArrayXf a(n);
  if (!in.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(n * sizeof(float))))
    throw CheckpointError(path + ": truncated checkpoint");
  return a;
}

}  // namespace

void save_checkpoint(const std::string& path, const DenoiserModel<float>& model, const AdamState<float>* optimizer,
                     const CheckpointMeta& meta) {
  json header;
  header["model"] = to_json(model.config());
  header["seed"] = meta.seed;
  header["step"] = meta.step;
  header["config_hash"] = meta.config_hash;
  header["objective"] = meta.objective;
  json tensors = json::array();
  for (std::size_t i = 0; i < model.parameters().size(); ++i)
    tensors.push_back({{"name", model.names()[i]}, {"shape", model.parameters()[i].shape()}});
  header["tensors"] = tensors;
  if (optimizer) {
    const AdamParams& p = optimizer->params;
    header["optimizer"] = {{"kind", "adam"},   {"step", optimizer->step}, {"lr", p.lr},
                           {"beta1", p.beta1}, {"beta2", p.beta2},        {"eps", p.eps}};
  }
  const std::string text = header.dump();

  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp);
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : model.parameters()) put_floats(out, p.values());
    if (optimizer) {
      for (const auto& m : optimizer->m) put_floats(out, m);
      for (const auto& v : optimizer->v) put_floats(out, v);
    }
    if (!out) throw CheckpointError("I/O error writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path, const DenoiserConfig* expect_model,
                           const std::string* expect_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw CheckpointError(path + ": not a checkpoint (bad magic)");
  const auto version = take<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw CheckpointError(path + ": checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  const auto header_len = take<std::uint64_t>(in, path);
  if (header_len > (1u << 26)) throw CheckpointError(path + ": implausible header length");
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) throw CheckpointError(path + ": truncated header");

  json header;
  DenoiserConfig cfg;
  try {
    header = json::parse(text);
    cfg = denoiser_config_from_json(header.at("model"));
  } catch (const std::exception& e) {
    throw CheckpointError(path + ": bad header: " + e.what());
  }
  if (expect_model && to_json(*expect_model) != to_json(cfg))
    throw CheckpointError(path + ": model config mismatch (file " + to_json(cfg).dump() + ", expected " +
                          to_json(*expect_model).dump() + ")");

  Checkpoint ck;
  ck.meta.seed = header.value("seed", std::uint64_t{0});
  ck.meta.step = header.value("step", std::int64_t{0});
  ck.meta.config_hash = header.value("config_hash", std::string());
  ck.meta.objective = header.value("objective", std::string());
  if (expect_hash && *expect_hash != ck.meta.config_hash)
    throw CheckpointError(path + ": config hash mismatch (file " + ck.meta.config_hash + ", expected " +
                          *expect_hash + ")");

  // Weights are rebuilt on the declared architecture, then overwritten.
  ck.model = build_denoiser<float>(cfg, 0);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != ck.model.parameters().size())
    throw CheckpointError(path + ": tensor count does not match the architecture");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& p = ck.model.parameters()[i];
    if (tensors[i].at("name").get<std::string>() != ck.model.names()[i] ||
        tensors[i].at("shape").get<Shape>() != p.shape())
      throw CheckpointError(path + ": tensor " + std::to_string(i) + " does not match the architecture");
    p.mutable_values() = take_floats(in, p.size(), path);
  }
  if (header.contains("optimizer")) {
    const json& o = header.at("optimizer");
    AdamParams ap{o.at("lr").get<double>(), o.at("beta1").get<double>(), o.at("beta2").get<double>(),
                  o.at("eps").get<double>()};
    AdamState<float> st(ck.model.parameters(), ap);
    st.step = o.at("step").get<std::int64_t>();
    for (auto& m : st.m) m = take_floats(in, m.size(), path);
    for (auto& v : st.v) v = take_floats(in, v.size(), path);
    ck.optimizer = std::move(st);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError(path + ": trailing bytes after payload");
  return ck;
}

}  // namespace eradiff
