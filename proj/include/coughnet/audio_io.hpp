#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace coughnet {

/// Mono waveform with amplitudes in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate_hz = 0;

  std::size_t size() const { return samples.size(); }
};

/// One vector per channel, all the same length.
struct MultiChannelClip {
  std::vector<std::vector<double>> channels;
  int sample_rate_hz = 0;
};

/// Decodes a RIFF/WAVE byte stream (PCM 16/24/32-bit or IEEE float 32/64-bit,
/// plain or WAVE_FORMAT_EXTENSIBLE) and mixes it down to mono.
///
/// Integer samples are scaled by 1/2^(bits-1). Throws Error with
/// malformed_container, unsupported_codec (including MP3/OGG/FLAC streams) or
/// empty_audio.
AudioClip decode_wav(std::span<const std::uint8_t> bytes);

/// Same as decode_wav but keeps the channels separate.
MultiChannelClip decode_wav_channels(std::span<const std::uint8_t> bytes);

/// Per-sample arithmetic mean over channels.
AudioClip to_mono(const MultiChannelClip& clip);

/// Linear-interpolation resampler.
///
/// Output length is round(n * target / source) (at least one sample); output
/// sample i reads the source at fractional position i * source / target, with
/// positions past the last sample holding the last value. Same-rate input is
/// returned unchanged.
AudioClip resample(const AudioClip& clip, int target_rate_hz);

enum class WavEncoding { pcm16, float32 };

/// Mono WAV writer used for fixtures and the synthetic corpus. PCM16 rounds
/// to the nearest code and saturates at the full-scale limits.
std::vector<std::uint8_t> encode_wav(const AudioClip& clip,
                                     WavEncoding encoding = WavEncoding::pcm16);

}  // namespace coughnet
