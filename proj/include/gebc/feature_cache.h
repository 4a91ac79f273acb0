#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace gebc {

// On-disk layout ("GEBF", version 1, all integers little-endian):
//   magic[4] | u32 version | u32 name_len | name bytes (UTF-8) |
//   u32 rank (= 3) | u64 dims[3] | f32 payload[dims product]
struct FeatureCacheEntry {
  std::string extractor_name;
  std::array<uint64_t, 3> shape{};  // (L_raw, tokens_per_frame, channels)
  std::vector<float> data;          // row-major

  uint64_t element_count() const { return shape[0] * shape[1] * shape[2]; }
  bool operator==(const FeatureCacheEntry&) const = default;
};

inline constexpr std::array<char, 4> kFeatureCacheMagic = {'G', 'E', 'B', 'F'};
inline constexpr uint32_t kFeatureCacheVersion = 1;

std::string encode_features(const FeatureCacheEntry& entry);
FeatureCacheEntry decode_features(std::string_view bytes);

// Atomic: readers see either the old file or the complete new one.
void store_features(const FeatureCacheEntry& entry, const std::filesystem::path& path);
FeatureCacheEntry load_features(const std::filesystem::path& path);

}  // namespace gebc
