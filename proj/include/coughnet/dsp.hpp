#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "coughnet/audio_io.hpp"

namespace coughnet {

inline constexpr int kPipelineRateHz = 22050;
inline constexpr std::size_t kMfccCount = 39;
inline constexpr std::size_t kMelBands = 64;
inline constexpr std::size_t kImageSize = 64;
inline constexpr std::size_t kClinicalCount = 2;

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// Short-time analysis geometry. Defaults give 92.9 ms windows with a
/// 23.2 ms hop at 22050 Hz.
struct FrameParams {
  int sample_rate_hz = kPipelineRateHz;
  std::size_t fft_size = 2048;
  std::size_t hop = 512;

  std::size_t bins() const { return fft_size / 2 + 1; }
  /// Frames produced for a clip of `n` samples with centered framing.
  std::size_t frame_count(std::size_t n) const { return 1 + n / hop; }
  void validate() const;
};

/// Periodic Hann window: w[k] = 0.5 - 0.5 cos(2 pi k / n).
std::vector<double> hann_window(std::size_t n);

/// In-place iterative radix-2 FFT. Size must be a power of two.
void fft(std::span<std::complex<double>> data);

/// Squared-magnitude STFT, (fft_size/2 + 1) x frame_count(len).
///
/// The clip is reflect-padded by fft_size/2 on both sides and each frame is
/// Hann-windowed. Throws clip_too_short for fewer than two samples.
Matrix power_spectrogram(const AudioClip& clip, const FrameParams& params);

/// Slaney mel scale: linear (3/200 mel per Hz) below 1 kHz, logarithmic above.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// n_mels x bins triangular filters spanning 0..sample_rate/2, each scaled by
/// 2 / (upper corner - lower corner) so filters have equal area.
struct MelFilterbank {
  Matrix weights;
  std::vector<double> center_hz;
};

MelFilterbank mel_filterbank(const FrameParams& params, std::size_t n_mels = kMelBands);

/// Decibel mel spectrogram: 10 log10(max(fb * power, 1e-10)) clamped to an
/// 80 dB range below its maximum.
Matrix log_mel(const Matrix& power_spec, const MelFilterbank& fb);

/// Orthonormal DCT-II of a vector.
std::vector<double> dct2_orthonormal(std::span<const double> x);
/// Inverse of dct2_orthonormal (orthonormal DCT-III).
std::vector<double> dct3_orthonormal(std::span<const double> x);

using MfccVector = std::array<double, kMfccCount>;

/// Per-frame orthonormal DCT-II along the mel axis, first 39 coefficients,
/// averaged over frames. Requires at least kMfccCount rows.
MfccVector mfcc_mean(const Matrix& log_mel_matrix);

/// 64 x 64 image in [0, 1], row-major (row = mel band, column = time).
using MelImage = std::vector<double>;

/// Bilinear resize of a 64 x T log-mel matrix to 64 x 64 (half-pixel centers,
/// edge-clamped), then min-max scaled to [0, 1]. A constant input maps to 0.5.
MelImage mel_image(const Matrix& log_mel_matrix);

struct ClinicalFlags {
  bool respiratory_condition = false;
  bool fever_or_myalgia = false;

  friend bool operator==(const ClinicalFlags&, const ClinicalFlags&) = default;
};

/// Model input for one recording.
struct FeatureVector {
  MfccVector mfcc{};
  MelImage image = MelImage(kImageSize * kImageSize, 0.0);
  std::array<double, kClinicalCount> clinical{};

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// Full audio pipeline with a filterbank computed once. Immutable after
/// construction so one instance can serve concurrent callers.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(FrameParams params = {});

  FeatureVector extract(const AudioClip& clip, ClinicalFlags flags) const;

  const FrameParams& params() const { return params_; }
  const MelFilterbank& filterbank() const { return filterbank_; }

 private:
  FrameParams params_;
  MelFilterbank filterbank_;
};

/// resample -> power spectrogram -> log mel -> {mean MFCC, mel image}, plus
/// the two clinical flags as 0.0/1.0.
FeatureVector extract_features(const AudioClip& clip, ClinicalFlags flags);

/// Little-endian byte image of a feature vector (39 + 4096 doubles, 2 flag
/// bytes); used for digests and the cache.
std::vector<std::uint8_t> feature_bytes(const FeatureVector& features);

}  // namespace coughnet
