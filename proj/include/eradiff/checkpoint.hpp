#pragma once

#include "eradiff/adam.hpp"
#include "eradiff/model.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace eradiff {

constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: "ERDFCKPT" | u32 version | u64 header bytes | JSON header |
/// float32 LE weights in declared order | (optional) Adam m then v, same order.
struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  std::string config_hash;
  std::string objective;
};

struct Checkpoint {
  CheckpointMeta meta;
  DenoiserModel<float> model;
  std::optional<AdamState<float>> optimizer;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Written through a temporary file and renamed into place.
void save_checkpoint(const std::string& path, const DenoiserModel<float>& model, const AdamState<float>* optimizer,
                     const CheckpointMeta& meta);

/// Throws CheckpointError on bad magic, a different format version, truncation,
/// or (when given) a model config or config hash that differs from the file.
Checkpoint load_checkpoint(const std::string& path, const DenoiserConfig* expect_model = nullptr,
                           const std::string* expect_hash = nullptr);

}  // namespace eradiff
