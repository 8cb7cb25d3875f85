#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "coughnet/dsp.hpp"

namespace coughnet {

inline constexpr int kFeatureCacheVersion = 1;

struct CachedFeatures {
  std::string id;
  FeatureVector features;
};

/// Feature cache layout (all integers and floats little-endian):
///
///   {"image_h":64,"image_w":64,"n_mfcc":39,"version":1}\n
///   repeated until end of file:
///     u32      id length in bytes
///     bytes    UTF-8 sample id
///     f64[39]  mean MFCCs
///     f64[4096] mel image, row-major (mel band, time)
///     u8[2]    respiratory_condition, fever_or_myalgia (0 or 1)
///
/// Records are written in the order given; callers sort by id.
std::vector<std::uint8_t> serialize_feature_cache(std::span<const CachedFeatures> records);
std::vector<CachedFeatures> parse_feature_cache(std::span<const std::uint8_t> bytes);

void write_feature_cache(const std::filesystem::path& path,
                         std::span<const CachedFeatures> records);
std::vector<CachedFeatures> read_feature_cache(const std::filesystem::path& path);

}  // namespace coughnet
