#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "fdn/models.hpp"

namespace fdn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout, little-endian:
//   "FDNCKPT1" u32 version
//   u64 len + model spec JSON
//   u64 len + meta JSON (free-form, holds ensemble trained flags and caller data)
//   u64 count, then per parameter: u64 len + name, u64 rows, u64 cols, raw doubles
// Doubles are stored as their bit patterns, so a round trip is exact.
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::string& extra_json = "{}");

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  std::string extra_json;
};

// Throws std::runtime_error on a bad magic, unknown version, truncation or a
// parameter layout that does not match the stored spec.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fdn
