#include "coughnet/util.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>

#include "coughnet/error.hpp"

namespace coughnet {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::malformed_container: return "malformed_container";
    case Errc::unsupported_codec: return "unsupported_codec";
    case Errc::empty_audio: return "empty_audio";
    case Errc::clip_too_short: return "clip_too_short";
    case Errc::missing_column: return "missing_column";
    case Errc::missing_audio: return "missing_audio";
    case Errc::unknown_pcr_value: return "unknown_pcr_value";
    case Errc::too_few_records: return "too_few_records";
    case Errc::single_class: return "single_class";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::input_too_small: return "input_too_small";
    case Errc::batch_too_small: return "batch_too_small";
    case Errc::non_finite: return "non_finite";
    case Errc::invalid_arch: return "invalid_arch";
    case Errc::version_mismatch: return "version_mismatch";
    case Errc::corrupt_file: return "corrupt_file";
    case Errc::non_finite_loss: return "non_finite_loss";
    case Errc::zero_variance: return "zero_variance";
    case Errc::io_failure: return "io_failure";
    case Errc::invalid_argument: return "invalid_argument";
  }
  return "unknown";
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(Errc::io_failure, "read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_failure, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io_failure, "write failed: " + path.string());
}

void write_file(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                             text.size()));
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  std::array<unsigned char, SHA256_DIGEST_LENGTH> digest{};
  SHA256(bytes.data(), bytes.size(), digest.data());
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(digest.size() * 2);
  for (unsigned char b : digest) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::span(
      reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                          bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  std::string clean;
  clean.reserve(text.size());
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) clean.push_back(c);
  }
  if (clean.size() % 4 != 0) {
    throw Error(Errc::invalid_argument, "base64 length not a multiple of 4");
  }
  std::vector<std::uint8_t> out(clean.size() / 4 * 3);
  int n = EVP_DecodeBlock(out.data(),
                          reinterpret_cast<const unsigned char*>(clean.data()),
                          static_cast<int>(clean.size()));
  if (n < 0) throw Error(Errc::invalid_argument, "invalid base64 payload");
  // EVP_DecodeBlock keeps the zero bytes that padding stands for.
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() >= 2 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection sampling on the top of the range keeps every residue equally likely.
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string format_double(double value) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), end);
}

std::string to_lower(std::string_view text) {
  std::string out(text);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view text) {
  std::size_t b = 0;
  std::size_t e = text.size();
  while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
  return std::string(text.substr(b, e - b));
}

}  // namespace coughnet
