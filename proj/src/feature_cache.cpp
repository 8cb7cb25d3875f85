#include "coughnet/feature_cache.hpp"

#include <bit>
#include <cstring>

#include <nlohmann/json.hpp>

#include "coughnet/error.hpp"
#include "coughnet/util.hpp"

namespace coughnet {
namespace {

[[noreturn]] void corrupt(const std::string& why) {
  throw Error(Errc::corrupt_file, "feature cache: " + why);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) { pos_ += n; }

  std::span<const std::uint8_t> take(std::size_t n) {
    if (bytes_.size() - pos_ < n) corrupt("truncated record");
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint32_t u32() {
    auto b = take(4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  double f64() {
    auto b = take(8);
    std::uint64_t raw = 0;
    for (int i = 7; i >= 0; --i) raw = (raw << 8) | b[static_cast<std::size_t>(i)];
    return std::bit_cast<double>(raw);
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::string header_line() {
  nlohmann::json header = {{"version", kFeatureCacheVersion},
                           {"n_mfcc", kMfccCount},
                           {"image_h", kImageSize},
                           {"image_w", kImageSize}};
  return header.dump() + "\n";
}

}  // namespace

std::vector<std::uint8_t> serialize_feature_cache(std::span<const CachedFeatures> records) {
  const std::string header = header_line();
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (const auto& rec : records) {
    const auto len = static_cast<std::uint32_t>(rec.id.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
    out.insert(out.end(), rec.id.begin(), rec.id.end());
    const auto body = feature_bytes(rec.features);
    out.insert(out.end(), body.begin(), body.end());
  }
  return out;
}

std::vector<CachedFeatures> parse_feature_cache(std::span<const std::uint8_t> bytes) {
  const auto* nl = static_cast<const std::uint8_t*>(std::memchr(bytes.data(), '\n', bytes.size()));
  if (nl == nullptr) corrupt("missing header line");
  const std::size_t header_len = static_cast<std::size_t>(nl - bytes.data());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("bad header: ") + e.what());
  }
  if (header.value("version", -1) != kFeatureCacheVersion) {
    throw Error(Errc::version_mismatch, "feature cache version " + header.value("version", nlohmann::json()).dump());
  }
  if (header.value("n_mfcc", 0) != static_cast<int>(kMfccCount) ||
      header.value("image_h", 0) != static_cast<int>(kImageSize) ||
      header.value("image_w", 0) != static_cast<int>(kImageSize)) {
    corrupt("unexpected feature dimensions in header");
  }

  Reader in(bytes);
  in.skip(header_len + 1);
  std::vector<CachedFeatures> out;
  while (!in.done()) {
    CachedFeatures rec;
    const std::uint32_t len = in.u32();
    auto id = in.take(len);
    rec.id.assign(id.begin(), id.end());
    for (double& v : rec.features.mfcc) v = in.f64();
    for (double& v : rec.features.image) v = in.f64();
    auto flags = in.take(kClinicalCount);
    for (std::size_t i = 0; i < kClinicalCount; ++i) {
      if (flags[i] > 1) corrupt("flag byte out of range");
      rec.features.clinical[i] = flags[i];
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void write_feature_cache(const std::filesystem::path& path,
                         std::span<const CachedFeatures> records) {
  write_file(path, serialize_feature_cache(records));
}

std::vector<CachedFeatures> read_feature_cache(const std::filesystem::path& path) {
  return parse_feature_cache(read_file(path));
}

}  // namespace coughnet
