#include "coughnet/dsp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <string>

#include "coughnet/error.hpp"

namespace coughnet {
namespace {

constexpr double kPowerFloor = 1e-10;
constexpr double kTopDb = 80.0;

// Slaney mel constants.
constexpr double kHzPerMel = 200.0 / 3.0;
constexpr double kBreakHz = 1000.0;
constexpr double kBreakMel = kBreakHz / kHzPerMel;  // 15
const double kLogStep = std::log(6.4) / 27.0;

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

}  // namespace

void FrameParams::validate() const {
  if (sample_rate_hz <= 0) throw Error(Errc::invalid_argument, "sample rate must be positive");
  if (fft_size < 2 || !std::has_single_bit(fft_size)) {
    throw Error(Errc::invalid_argument, "fft size must be a power of two");
  }
  if (hop == 0 || hop > fft_size) throw Error(Errc::invalid_argument, "hop must be in [1, fft_size]");
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) {
    w[k] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) /
                                static_cast<double>(n));
  }
  return w;
}

void fft(std::span<std::complex<double>> data) {
  const std::size_t n = data.size();
  if (n <= 1) return;
  if (!std::has_single_bit(n)) throw Error(Errc::invalid_argument, "FFT size must be a power of two");

  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      // Twiddles are evaluated directly rather than by recurrence to keep
      // rounding error from accumulating across a butterfly group.
      const std::complex<double> w(std::cos(angle * static_cast<double>(k)),
                                   std::sin(angle * static_cast<double>(k)));
      for (std::size_t start = 0; start < n; start += len) {
        const std::complex<double> u = data[start + k];
        const std::complex<double> v = data[start + k + half] * w;
        data[start + k] = u + v;
        data[start + k + half] = u - v;
      }
    }
  }
}

Matrix power_spectrogram(const AudioClip& clip, const FrameParams& params) {
  params.validate();
  if (clip.sample_rate_hz != params.sample_rate_hz) {
    throw Error(Errc::invalid_argument, "clip rate " + std::to_string(clip.sample_rate_hz) +
                                            " does not match frame rate " +
                                            std::to_string(params.sample_rate_hz));
  }
  const std::size_t n = clip.samples.size();
  if (n < 2) throw Error(Errc::clip_too_short, "clip needs at least 2 samples for reflect padding");

  const std::size_t nfft = params.fft_size;
  const auto pad = static_cast<std::ptrdiff_t>(nfft / 2);
  const std::size_t frames = params.frame_count(n);
  const std::vector<double> window = hann_window(nfft);

  Matrix out(params.bins(), frames);
  std::vector<std::complex<double>> buf(nfft);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto start = static_cast<std::ptrdiff_t>(t * params.hop) - pad;
    for (std::size_t k = 0; k < nfft; ++k) {
      const double x = clip.samples[reflect_index(start + static_cast<std::ptrdiff_t>(k), n)];
      buf[k] = {x * window[k], 0.0};
    }
    fft(buf);
    for (std::size_t b = 0; b < out.rows; ++b) out(b, t) = std::norm(buf[b]);
  }
  return out;
}

double hz_to_mel(double hz) {
  if (hz < kBreakHz) return hz / kHzPerMel;
  return kBreakMel + std::log(hz / kBreakHz) / kLogStep;
}

double mel_to_hz(double mel) {
  if (mel < kBreakMel) return mel * kHzPerMel;
  return kBreakHz * std::exp(kLogStep * (mel - kBreakMel));
}

MelFilterbank mel_filterbank(const FrameParams& params, std::size_t n_mels) {
  params.validate();
  if (n_mels < 2) throw Error(Errc::invalid_argument, "need at least 2 mel bands");

  const std::size_t bins = params.bins();
  const double nyquist = params.sample_rate_hz / 2.0;
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(nyquist);

  std::vector<double> corners(n_mels + 2);
  for (std::size_t i = 0; i < corners.size(); ++i) {
    const double mel = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                    static_cast<double>(n_mels + 1);
    corners[i] = mel_to_hz(mel);
  }

  MelFilterbank fb;
  fb.weights = Matrix(n_mels, bins);
  fb.center_hz.assign(corners.begin() + 1, corners.end() - 1);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = corners[m];
    const double mid = corners[m + 1];
    const double hi = corners[m + 2];
    const double norm = 2.0 / (hi - lo);
    for (std::size_t b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * params.sample_rate_hz /
                       static_cast<double>(params.fft_size);
      const double rising = (f - lo) / (mid - lo);
      const double falling = (hi - f) / (hi - mid);
      fb.weights(m, b) = std::max(0.0, std::min(rising, falling)) * norm;
    }
  }
  return fb;
}

Matrix log_mel(const Matrix& power_spec, const MelFilterbank& fb) {
  const Matrix& w = fb.weights;
  if (w.cols != power_spec.rows) {
    throw Error(Errc::shape_mismatch, "filterbank has " + std::to_string(w.cols) +
                                          " bins but spectrogram has " +
                                          std::to_string(power_spec.rows));
  }
  Matrix out(w.rows, power_spec.cols);
  for (std::size_t m = 0; m < w.rows; ++m) {
    for (std::size_t b = 0; b < w.cols; ++b) {
      const double weight = w(m, b);
      if (weight == 0.0) continue;
      const double* row = &power_spec.data[b * power_spec.cols];
      double* dst = &out.data[m * out.cols];
      for (std::size_t t = 0; t < power_spec.cols; ++t) dst[t] += weight * row[t];
    }
  }
  double peak = -INFINITY;
  for (double& v : out.data) {
    v = 10.0 * std::log10(std::max(v, kPowerFloor));
    peak = std::max(peak, v);
  }
  const double floor_db = peak - kTopDb;
  for (double& v : out.data) v = std::max(v, floor_db);
  return out;
}

std::vector<double> dct2_orthonormal(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> out(n, 0.0);
  if (n == 0) return out;
  const double scale0 = std::sqrt(1.0 / static_cast<double>(n));
  const double scale = std::sqrt(2.0 / static_cast<double>(n));
  for (std::size_t k = 0; k < n; ++k) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum += x[i] * std::cos(std::numbers::pi * static_cast<double>(k) *
                             (2.0 * static_cast<double>(i) + 1.0) / (2.0 * static_cast<double>(n)));
    }
    out[k] = sum * (k == 0 ? scale0 : scale);
  }
  return out;
}

std::vector<double> dct3_orthonormal(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> out(n, 0.0);
  if (n == 0) return out;
  const double scale0 = std::sqrt(1.0 / static_cast<double>(n));
  const double scale = std::sqrt(2.0 / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double sum = x[0] * scale0;
    for (std::size_t k = 1; k < n; ++k) {
      sum += x[k] * scale *
             std::cos(std::numbers::pi * static_cast<double>(k) *
                      (2.0 * static_cast<double>(i) + 1.0) / (2.0 * static_cast<double>(n)));
    }
    out[i] = sum;
  }
  return out;
}

MfccVector mfcc_mean(const Matrix& log_mel_matrix) {
  const std::size_t bands = log_mel_matrix.rows;
  const std::size_t frames = log_mel_matrix.cols;
  if (bands < kMfccCount || frames == 0) {
    throw Error(Errc::shape_mismatch, "log-mel matrix must have >= 39 rows and >= 1 column");
  }
  // Basis rows for the retained coefficients only.
  Matrix basis(kMfccCount, bands);
  for (std::size_t k = 0; k < kMfccCount; ++k) {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(bands));
    for (std::size_t i = 0; i < bands; ++i) {
      basis(k, i) = scale * std::cos(std::numbers::pi * static_cast<double>(k) *
                                     (2.0 * static_cast<double>(i) + 1.0) /
                                     (2.0 * static_cast<double>(bands)));
    }
  }
  MfccVector mean{};
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t k = 0; k < kMfccCount; ++k) {
      double c = 0.0;
      for (std::size_t i = 0; i < bands; ++i) c += basis(k, i) * log_mel_matrix(i, t);
      mean[k] += c;
    }
  }
  for (double& c : mean) c /= static_cast<double>(frames);
  return mean;
}

MelImage mel_image(const Matrix& log_mel_matrix) {
  const std::size_t rows = log_mel_matrix.rows;
  const std::size_t frames = log_mel_matrix.cols;
  if (rows != kImageSize || frames == 0) {
    throw Error(Errc::shape_mismatch, "mel image input must be 64 x T with T >= 1");
  }
  MelImage img(kImageSize * kImageSize);
  const double ratio = static_cast<double>(frames) / static_cast<double>(kImageSize);
  const double last = static_cast<double>(frames - 1);
  for (std::size_t j = 0; j < kImageSize; ++j) {
    const double src = std::clamp((static_cast<double>(j) + 0.5) * ratio - 0.5, 0.0, last);
    const auto left = static_cast<std::size_t>(src);
    const std::size_t right = std::min(left + 1, frames - 1);
    const double frac = src - static_cast<double>(left);
    for (std::size_t r = 0; r < rows; ++r) {
      const double a = log_mel_matrix(r, left);
      const double b = log_mel_matrix(r, right);
      img[r * kImageSize + j] = frac == 0.0 ? a : a + frac * (b - a);
    }
  }
  const auto [lo_it, hi_it] = std::minmax_element(img.begin(), img.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi - lo <= 0.0) {
    std::fill(img.begin(), img.end(), 0.5);
    return img;
  }
  for (double& v : img) v = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
  return img;
}

FeatureExtractor::FeatureExtractor(FrameParams params)
    : params_(params), filterbank_(mel_filterbank(params, kMelBands)) {}

FeatureVector FeatureExtractor::extract(const AudioClip& clip, ClinicalFlags flags) const {
  const AudioClip resampled = resample(clip, params_.sample_rate_hz);
  const Matrix spec = power_spectrogram(resampled, params_);
  const Matrix mel = log_mel(spec, filterbank_);
  FeatureVector fv;
  fv.mfcc = mfcc_mean(mel);
  fv.image = mel_image(mel);
  fv.clinical = {flags.respiratory_condition ? 1.0 : 0.0, flags.fever_or_myalgia ? 1.0 : 0.0};
  return fv;
}

FeatureVector extract_features(const AudioClip& clip, ClinicalFlags flags) {
  static const FeatureExtractor extractor;
  return extractor.extract(clip, flags);
}

std::vector<std::uint8_t> feature_bytes(const FeatureVector& features) {
  std::vector<std::uint8_t> out;
  out.reserve((kMfccCount + features.image.size()) * 8 + kClinicalCount);
  auto put = [&](double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  };
  for (double v : features.mfcc) put(v);
  for (double v : features.image) put(v);
  for (double v : features.clinical) out.push_back(v != 0.0 ? 1 : 0);
  return out;
}

}  // namespace coughnet
