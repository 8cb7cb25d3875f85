#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "coughnet/audio_io.hpp"
#include "coughnet/dataset.hpp"
#include "coughnet/util.hpp"

namespace coughnet {

/// Separable fixture corpus: positives are noise band-limited around 3 kHz
/// with clinical flags set with probability `flag_bias`; negatives sit around
/// 300 Hz with flags set with probability 1 - `flag_bias`.
struct SynthSpec {
  std::size_t count = 500;
  std::uint64_t seed = 7;
  double positive_center_hz = 3000.0;
  double negative_center_hz = 300.0;
  /// Passband is center * (1 +- relative_bandwidth).
  double relative_bandwidth = 0.3;
  double flag_bias = 0.8;
  double min_seconds = 0.6;
  double max_seconds = 1.4;
};

struct SynthClip {
  std::string id;
  Label label = Label::negative;
  ClinicalFlags flags;
  AudioClip clip;
};

/// Gaussian noise restricted to [low_hz, high_hz] by zeroing FFT bins, peak
/// normalized to 0.5.
AudioClip band_noise(double low_hz, double high_hz, std::uint32_t rate_hz, std::size_t samples,
                     Rng& rng);

/// Alternating labels, sample rates cycled over 16000/22050/44100 Hz.
std::vector<SynthClip> synth_corpus(const SynthSpec& spec);

/// Writes `<dir>/audio/<id>.wav` (16-bit PCM) and a `<dir>/manifest.csv` in
/// the crowdsourced-manifest layout; returns the manifest path.
std::filesystem::path write_synth_corpus(const std::filesystem::path& dir, const SynthSpec& spec);

}  // namespace coughnet
