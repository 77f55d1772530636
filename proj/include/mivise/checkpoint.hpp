#pragma once

#include <cstdint>
#include <filesystem>

#include "mivise/model.hpp"

namespace mivise {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct Checkpoint {
  Model model;
  int epoch = 0;
  double running_loss = 0;
};

/// "MVCK", version, parameter count, then per parameter: name length, name,
/// rank (always 2), dims, row-major float32 values; then a length-prefixed
/// JSON block {config, epoch, running_loss}. All integers u32 little-endian.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);

/// Rebuilds the parameter layout from the stored config and checks every
/// tensor against it.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mivise
