#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace test_support {

// Hand-assembled RIFF/WAVE container; independent of the library encoder.
inline std::vector<std::uint8_t> wav_bytes(std::uint16_t format_tag, std::uint16_t channels,
                                           std::uint32_t rate, std::uint16_t bits,
                                           const std::vector<std::uint8_t>& data) {
  std::vector<std::uint8_t> out;
  auto u16 = [&](std::uint16_t v) {
    out.push_back(v & 0xFF);
    out.push_back(v >> 8);
  };
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xFF);
  };
  auto tag = [&](const char* t) { out.insert(out.end(), t, t + 4); };
  const std::uint16_t block = channels * (bits / 8);
  tag("RIFF");
  u32(static_cast<std::uint32_t>(4 + 8 + 16 + 8 + data.size()));
  tag("WAVE");
  tag("fmt ");
  u32(16);
  u16(format_tag);
  u16(channels);
  u32(rate);
  u32(rate * block);
  u16(block);
  u16(bits);
  tag("data");
  u32(static_cast<std::uint32_t>(data.size()));
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

inline std::vector<std::uint8_t> pcm16_data(const std::vector<std::int16_t>& frames) {
  std::vector<std::uint8_t> out;
  for (std::int16_t s : frames) {
    const auto u = static_cast<std::uint16_t>(s);
    out.push_back(u & 0xFF);
    out.push_back(u >> 8);
  }
  return out;
}

// O(n^2) DFT.
inline std::vector<std::complex<double>> naive_dft(const std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(a), std::sin(a));
    }
    out[k] = acc;
  }
  return out;
}

// Direct DCT-II sum with orthonormal scaling.
inline std::vector<double> brute_dct2(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s += x[i] * std::cos(std::numbers::pi * (2.0 * i + 1.0) * k / (2.0 * n));
    }
    out[k] = s * std::sqrt((k == 0 ? 1.0 : 2.0) / n);
  }
  return out;
}

// DCT-II through a 2N-point DFT of the mirrored sequence.
inline std::vector<double> dft_dct2(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> y(2 * n);
  for (std::size_t i = 0; i < n; ++i) y[i] = y[2 * n - 1 - i] = x[i];
  const auto Y = naive_dft(y);
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double a = -std::numbers::pi * k / (2.0 * n);
    const double sum = (Y[k] * std::complex<double>(std::cos(a), std::sin(a))).real() / 2.0;
    out[k] = sum * std::sqrt((k == 0 ? 1.0 : 2.0) / n);
  }
  return out;
}

// Pairwise Mann-Whitney AUC.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<double>& labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1.0) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0.0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Student-t quantile by integrating the density (Simpson) and bisecting.
inline double t_density(double x, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) /
                   std::sqrt(df * std::numbers::pi);
  return c * std::pow(1 + x * x / df, -(df + 1) / 2);
}

inline double t_cdf_by_integration(double t, double df) {
  // 0.5 + integral_0^t density.
  const int n = 20000;
  const double h = t / n;
  double s = t_density(0, df) + t_density(t, df);
  for (int i = 1; i < n; ++i) s += t_density(i * h, df) * (i % 2 ? 4 : 2);
  return 0.5 + s * h / 3;
}

inline double t_quantile_by_integration(double p, double df) {
  double lo = 0.0, hi = 50.0;
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    (t_cdf_by_integration(mid, df) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() /
           (name + "-" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& p) const { return path / p; }
};

}  // namespace test_support
