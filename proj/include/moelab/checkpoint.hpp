#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "moelab/model.hpp"

namespace moelab {

/// Binary layout (all integers and values little-endian):
///   8-byte magic "MOELABCK", u32 version, u64 step,
///   u64 config length + key/value config text,
///   u64 blob count, then per blob: u64 name length + name, u32 rank,
///   u64 dims..., f64 values in row-major order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Model& model, std::uint64_t step);
void save_checkpoint(const Model& model, std::uint64_t step, const std::filesystem::path& path);

struct LoadedCheckpoint {
    Model model;
    std::uint64_t step = 0;
};

LoadedCheckpoint decode_checkpoint(const std::string& bytes);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace moelab
