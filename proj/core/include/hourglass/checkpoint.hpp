#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hourglass/config.hpp"
#include "hourglass/model.hpp"

namespace hourglass {

inline constexpr char kCheckpointMagic[9] = "HGLS0001";

// A tensor as stored on disk: element width 4 (binary32) or 8 (binary64).
// Values are held as doubles in memory, which is exact for both widths.
struct NamedTensor {
  std::string path;
  Shape shape;
  std::uint8_t width = 8;
  std::vector<double> values;
};

// File layout: the 8-byte magic, then sections, each a u32 name length,
// the name, a u64 payload length and the payload. All integers and floats
// are little-endian. Sections: "config" (rendered `key = value` text),
// "state" (step, seed, adam step count, wall seconds), "params", "adam_m"
// and "adam_v" (u64 count, then per tensor: u32 path length, path, u32
// rank, u64 extents, u8 width, raw values). Dropout and data order derive
// from (seed, step), so these fields are the complete rng state.
struct CheckpointData {
  std::string config_text;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::uint64_t adam_steps = 0;
  double wall_seconds = 0;
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> adam_m;
  std::vector<NamedTensor> adam_v;

  RunConfig run_config() const;
};

// Writes atomically (temporary file, then rename).
void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
// Throws IoError("bad checkpoint header") on a wrong magic and IoError on
// truncated or malformed sections.
CheckpointData read_checkpoint(const std::filesystem::path& path);

template <typename T>
std::vector<NamedTensor> snapshot(const ParamStore<T>& params);
template <typename T>
std::vector<NamedTensor> snapshot(const ParamStore<T>& params, const std::vector<Tensor<T>>& values);
// Copies stored values into matching registry paths; every path and shape must match.
template <typename T>
void restore_params(ParamStore<T>& params, const std::vector<NamedTensor>& stored);
template <typename T>
std::vector<Tensor<T>> restore_moments(const ParamStore<T>& params, const std::vector<NamedTensor>& stored);

// Rebuilds the model a checkpoint was written from, with its parameters.
template <typename T>
HourglassModel<T> load_model(const CheckpointData& data);

}  // namespace hourglass
