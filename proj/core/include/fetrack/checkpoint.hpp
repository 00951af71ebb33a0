#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fetrack/nn.hpp"

namespace fetrack {

struct CheckpointEntry {
  Shape shape;
  std::vector<double> data;
};

/// Flat binary weight file: magic "FETW", u32 count, then per entry
/// u16 name length, name bytes, u8 rank, u32 extents, f64 data (little-endian).
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);

std::map<std::string, CheckpointEntry> load_checkpoint(const std::filesystem::path& path);

/// Strict load: the checkpoint keys and shapes must match the module state
/// exactly.
void load_state(Module& module, const std::filesystem::path& path);

}  // namespace fetrack
