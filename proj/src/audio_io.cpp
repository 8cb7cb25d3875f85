#include "coughnet/audio_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <string>

#include "coughnet/error.hpp"

namespace coughnet {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) |
         (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) |
         (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

bool has_tag(std::span<const std::uint8_t> b, std::size_t at, const char* tag) {
  return b.size() >= at + 4 && std::memcmp(b.data() + at, tag, 4) == 0;
}

[[noreturn]] void malformed(const std::string& why) {
  throw Error(Errc::malformed_container, "malformed WAV: " + why);
}

// Non-RIFF streams that are recognizably some other audio codec are reported
// as unsupported so callers know to pre-convert rather than suspect corruption.
bool looks_like_other_codec(std::span<const std::uint8_t> b) {
  if (has_tag(b, 0, "OggS") || has_tag(b, 0, "fLaC")) return true;
  if (b.size() >= 3 && b[0] == 'I' && b[1] == 'D' && b[2] == '3') return true;
  // MPEG audio frame sync: 11 set bits.
  if (b.size() >= 2 && b[0] == 0xFF && (b[1] & 0xE0) == 0xE0) return true;
  // ISO base media (m4a/aac) and WebM/Matroska.
  if (has_tag(b, 4, "ftyp")) return true;
  if (b.size() >= 4 && b[0] == 0x1A && b[1] == 0x45 && b[2] == 0xDF && b[3] == 0xA3)
    return true;
  return false;
}

struct FormatChunk {
  std::uint16_t codec = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t block_align = 0;
  std::uint16_t bits = 0;
};

double decode_sample(const std::uint8_t* p, const FormatChunk& fmt) {
  if (fmt.codec == kFormatFloat) {
    double v;
    if (fmt.bits == 32) {
      v = static_cast<double>(std::bit_cast<float>(
          static_cast<std::uint32_t>(p[0] | (p[1] << 8) | (p[2] << 16)) |
          (static_cast<std::uint32_t>(p[3]) << 24)));
    } else {
      std::uint64_t raw = 0;
      for (int i = 7; i >= 0; --i) raw = (raw << 8) | p[i];
      v = std::bit_cast<double>(raw);
    }
    if (!std::isfinite(v)) v = 0.0;
    return std::clamp(v, -1.0, 1.0);
  }
  const int bytes = fmt.bits / 8;
  std::uint32_t raw = 0;
  for (int i = bytes - 1; i >= 0; --i) raw = (raw << 8) | p[i];
  const int shift = 32 - fmt.bits;
  const auto value = static_cast<std::int32_t>(raw << shift) >> shift;
  return static_cast<double>(value) / std::ldexp(1.0, fmt.bits - 1);
}

}  // namespace

MultiChannelClip decode_wav_channels(std::span<const std::uint8_t> bytes) {
  if (!has_tag(bytes, 0, "RIFF")) {
    if (looks_like_other_codec(bytes)) {
      throw Error(Errc::unsupported_codec,
                  "not a WAV stream (compressed audio must be converted to WAV first)");
    }
    malformed("missing RIFF header");
  }
  if (!has_tag(bytes, 8, "WAVE")) malformed("missing WAVE form type");

  FormatChunk fmt;
  bool have_fmt = false;
  std::span<const std::uint8_t> data;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = read_u32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (size > bytes.size() - body) malformed("chunk extends past end of file");
    if (has_tag(bytes, pos, "fmt ")) {
      if (size < 16) malformed("fmt chunk too small");
      fmt.codec = read_u16(bytes, body);
      fmt.channels = read_u16(bytes, body + 2);
      fmt.sample_rate = read_u32(bytes, body + 4);
      fmt.block_align = read_u16(bytes, body + 12);
      fmt.bits = read_u16(bytes, body + 14);
      if (fmt.codec == kFormatExtensible) {
        if (size < 40) malformed("extensible fmt chunk too small");
        fmt.codec = read_u16(bytes, body + 24);
      }
      have_fmt = true;
    } else if (has_tag(bytes, pos, "data")) {
      data = bytes.subspan(body, size);
      have_data = true;
    }
    pos = body + size + (size & 1U);
  }
  if (!have_fmt) malformed("no fmt chunk");
  if (!have_data) malformed("no data chunk");

  const bool int_ok = fmt.codec == kFormatPcm &&
                      (fmt.bits == 16 || fmt.bits == 24 || fmt.bits == 32);
  const bool float_ok = fmt.codec == kFormatFloat && (fmt.bits == 32 || fmt.bits == 64);
  if (!int_ok && !float_ok) {
    throw Error(Errc::unsupported_codec,
                "unsupported WAV codec " + std::to_string(fmt.codec) + " with " +
                    std::to_string(fmt.bits) + " bits");
  }
  if (fmt.channels == 0) malformed("zero channels");
  if (fmt.sample_rate == 0) malformed("zero sample rate");
  const std::size_t frame_bytes = static_cast<std::size_t>(fmt.channels) * fmt.bits / 8;
  if (fmt.block_align != frame_bytes) malformed("block align disagrees with format");

  const std::size_t frames = data.size() / frame_bytes;
  if (frames == 0) throw Error(Errc::empty_audio, "WAV has no sample frames");

  MultiChannelClip out;
  out.sample_rate_hz = static_cast<int>(fmt.sample_rate);
  out.channels.assign(fmt.channels, std::vector<double>(frames));
  const std::size_t sample_bytes = fmt.bits / 8;
  for (std::size_t f = 0; f < frames; ++f) {
    const std::uint8_t* frame = data.data() + f * frame_bytes;
    for (std::size_t c = 0; c < fmt.channels; ++c) {
      out.channels[c][f] = decode_sample(frame + c * sample_bytes, fmt);
    }
  }
  return out;
}

AudioClip decode_wav(std::span<const std::uint8_t> bytes) {
  return to_mono(decode_wav_channels(bytes));
}

AudioClip to_mono(const MultiChannelClip& clip) {
  AudioClip out;
  out.sample_rate_hz = clip.sample_rate_hz;
  if (clip.channels.empty()) return out;
  if (clip.channels.size() == 1) {
    out.samples = clip.channels.front();
    return out;
  }
  const std::size_t n = clip.channels.front().size();
  const double scale = 1.0 / static_cast<double>(clip.channels.size());
  out.samples.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (const auto& ch : clip.channels) sum += ch[i];
    out.samples[i] = sum * scale;
  }
  return out;
}

AudioClip resample(const AudioClip& clip, int target_rate_hz) {
  if (target_rate_hz <= 0) throw Error(Errc::invalid_argument, "target rate must be positive");
  if (clip.sample_rate_hz == target_rate_hz || clip.samples.empty()) {
    AudioClip same = clip;
    if (same.samples.empty()) same.sample_rate_hz = target_rate_hz;
    return same;
  }
  const std::size_t n_in = clip.samples.size();
  const double step = static_cast<double>(clip.sample_rate_hz) / target_rate_hz;
  const auto n_out = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(static_cast<double>(n_in) / step)));

  AudioClip out;
  out.sample_rate_hz = target_rate_hz;
  out.samples.resize(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    const double pos = static_cast<double>(i) * step;
    const auto left = static_cast<std::size_t>(pos);
    if (left + 1 >= n_in) {
      out.samples[i] = clip.samples[n_in - 1];
      continue;
    }
    const double frac = pos - static_cast<double>(left);
    out.samples[i] = frac == 0.0 ? clip.samples[left]
                                 : clip.samples[left] +
                                       frac * (clip.samples[left + 1] - clip.samples[left]);
  }
  return out;
}

std::vector<std::uint8_t> encode_wav(const AudioClip& clip, WavEncoding encoding) {
  const std::uint16_t bits = encoding == WavEncoding::pcm16 ? 16 : 32;
  const std::uint16_t codec = encoding == WavEncoding::pcm16 ? kFormatPcm : kFormatFloat;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.samples.size() * bits / 8);

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  auto put_tag = [&](const char* tag) { out.insert(out.end(), tag, tag + 4); };
  auto put_u16 = [&](std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  };
  auto put_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };

  put_tag("RIFF");
  put_u32(36 + data_bytes);
  put_tag("WAVE");
  put_tag("fmt ");
  put_u32(16);
  put_u16(codec);
  put_u16(1);
  put_u32(static_cast<std::uint32_t>(clip.sample_rate_hz));
  put_u32(static_cast<std::uint32_t>(clip.sample_rate_hz) * bits / 8);
  put_u16(bits / 8);
  put_u16(bits);
  put_tag("data");
  put_u32(data_bytes);
  for (double s : clip.samples) {
    if (encoding == WavEncoding::pcm16) {
      const double scaled = std::nearbyint(s * 32768.0);
      const auto code = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
      put_u16(static_cast<std::uint16_t>(code));
    } else {
      put_u32(std::bit_cast<std::uint32_t>(static_cast<float>(s)));
    }
  }
  return out;
}

}  // namespace coughnet
