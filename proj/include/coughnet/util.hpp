#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace coughnet {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes);
void write_file(const std::filesystem::path& path, std::string_view text);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws Error(invalid_argument) on characters outside the base64 alphabet.
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Seeded PRNG with platform-independent output.
///
/// std::mt19937_64's sequence is fixed by the standard, but the standard
/// distributions are not, so the bounded-integer and real draws are done here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller (no cached second value).
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double value);

std::string to_lower(std::string_view text);
std::string trim(std::string_view text);

}  // namespace coughnet
