#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "geomoe/config.hpp"
#include "geomoe/moe_build.hpp"

namespace geomoe {

// Binary layout, all integers little-endian:
//   "GMOE" | u32 version | u64 FNV-1a digest of the config text
//   | u64 config length | config JSON bytes
//   | u64 tensor count | per tensor: u32 name length, UTF-8 name,
//     u8 dtype (0 = f32, 1 = f64), u32 rank, rank x u64 dims, payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  std::string config;  // JSON text
  std::map<std::string, Tensor<T>> tensors;
};

template <typename T>
void save_checkpoint(const Checkpoint<T>& c, const std::filesystem::path& path);

// Validates magic, version, digest and every size against the file length
// before allocating. Corruption raises ValidationError.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

// Model plus the run that produced it.
struct SavedModel {
  RunConfig run;
  GeoModel<float> model;
};

void save_model(const GeoModel<float>& model, const RunConfig& run, const std::filesystem::path& path);
SavedModel load_model(const std::filesystem::path& path);

}  // namespace geomoe
