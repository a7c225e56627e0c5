// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gfss/synthgen.hpp"

// Binary feature-map container, all integers little-endian:
//
//   "GFSS"            4 bytes magic
//   version           u16 (= 1)
//   H, W, F           u32 each
//   features          H*W*F float32, row-major over pixels then channels
//   [mask]            optional H*W u16 class ids, 0xFFFF = ignore
//
// The mask is present iff the remaining payload is exactly H*W*2 bytes; any
// other length is rejected.

namespace gfss {

inline constexpr std::uint16_t kFeatureMapVersion = 1;
inline constexpr std::uint16_t kMaskIgnore = 0xFFFF;

struct FeatureMapFile {
  FeatureMap map;
  std::optional<std::vector<std::uint16_t>> mask;
};

std::string encode_feature_map(const FeatureMap& map, const std::vector<std::uint16_t>* mask = nullptr);
/// Throws DataError on malformed input.
FeatureMapFile decode_feature_map(std::string_view bytes);

/// Throws IoError when the file cannot be written.
void write_feature_map_file(const std::filesystem::path& path, const FeatureMap& map,
                            const std::vector<std::uint16_t>* mask = nullptr);
/// Throws IoError when the file cannot be read, DataError when it is malformed.
FeatureMapFile read_feature_map_file(const std::filesystem::path& path);

/// Everything the adaptation phase needs from disk.
struct StoredEpisode {
  Episode episode;
  Tensor w_base_frozen;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> query_files;
};

/// Writes feature maps for every support, query and base-phase image, the
/// frozen classifier, and manifest.json into `dir` (created if needed).
void save_episode(const std::filesystem::path& dir, const GeneratedTask& task, const Tensor& w_base_frozen,
                  const std::string& config_hash, std::uint64_t seed);
StoredEpisode load_episode(const std::filesystem::path& dir);

/// Reads a whole file; IoError on failure.
std::string read_file(const std::filesystem::path& path);
/// Writes a whole file; IoError on failure.
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace gfss
