#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include <json.hpp>

#include "brainage/models.hpp"
#include "brainage/optim.hpp"

namespace brainage {

/// Serialized parameters plus optimizer state.
///
/// On disk: the magic "CXA1", a little-endian uint32 header length, a JSON header, then for every
/// tensor listed in header["tensors"] (in order) its parameter values, Adam first moments and Adam
/// second moments as little-endian float32.
struct Checkpoint {
  Model model;
  std::vector<AdamState<float>> adam;  // one per parameter tensor
  LrSchedule schedule;
  int epoch = 0;
  int slices_per_subject = kDefaultSliceCount;
  double best_val_mae = std::numeric_limits<double>::quiet_NaN();

  /// Wraps a model with fresh optimizer state.
  static Checkpoint fresh(Model model, LrSchedule schedule = {});
};

inline constexpr char kCheckpointMagic[4] = {'C', 'X', 'A', '1'};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws BadCheckpoint on a bad magic, malformed header or short payload.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace brainage
