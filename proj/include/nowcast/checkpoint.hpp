#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nowcast/forecaster.hpp"
#include "nowcast/tensor.hpp"

namespace nowcast {

class Model;

/// NCP1 container: "NCP1", u32 version = 1, kind and config as
/// length-prefixed strings, u32 entry count, then per entry a
/// length-prefixed name, u32 rank, u64 dims and little-endian f64 data.
struct Checkpoint {
  std::string kind;    // "CNC", "CNC-R", ..., "LR", "RF", "BM"
  std::string config;  // key=value lines
  std::vector<std::pair<std::string, Tensor>> entries;

  const Tensor& at(const std::string& name) const;
  bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::uint32_t kNcpVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Parameters and batch-norm running statistics of a network.
Checkpoint to_checkpoint(Model& model);
std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt);
/// Copies every parameter and running statistic of `ckpt` into `model`,
/// whose configuration must match.
void load_into(Model& model, const Checkpoint& ckpt);

Checkpoint to_checkpoint(const Persistence& bm);

/// Rebuilds whichever forecaster the checkpoint holds.
std::unique_ptr<Forecaster> load_forecaster(const Checkpoint& ckpt);

}  // namespace nowcast
