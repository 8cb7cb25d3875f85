#include "coughnet/synth.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdio>
#include <sstream>

#include "coughnet/csv.hpp"
#include "coughnet/dsp.hpp"
#include "coughnet/error.hpp"

namespace coughnet {

AudioClip band_noise(double low_hz, double high_hz, std::uint32_t rate_hz, std::size_t samples,
                     Rng& rng) {
  if (samples == 0 || rate_hz == 0 || !(low_hz < high_hz)) {
    throw Error(Errc::invalid_argument, "band_noise: empty clip or empty band");
  }
  const std::size_t n = std::bit_ceil(samples);
  std::vector<std::complex<double>> spec(n);
  for (auto& v : spec) v = rng.normal();
  fft(spec);
  const double bin_hz = static_cast<double>(rate_hz) / static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double f = static_cast<double>(std::min(k, n - k)) * bin_hz;
    if (f < low_hz || f > high_hz) spec[k] = 0.0;
  }
  // Inverse transform through conjugation.
  for (auto& v : spec) v = std::conj(v);
  fft(spec);

  AudioClip clip;
  clip.samples.assign(samples, 0.0);
  clip.sample_rate_hz = rate_hz;
  double peak = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    clip.samples[i] = spec[i].real();
    peak = std::max(peak, std::abs(clip.samples[i]));
  }
  if (peak > 0.0) {
    for (double& s : clip.samples) s *= 0.5 / peak;
  }
  return clip;
}

std::vector<SynthClip> synth_corpus(const SynthSpec& spec) {
  static constexpr std::array<std::uint32_t, 3> kRates{16000, 22050, 44100};
  Rng rng(spec.seed);
  std::vector<SynthClip> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    SynthClip c;
    char id[32];
    std::snprintf(id, sizeof id, "synth-%04zu", i);
    c.id = id;
    c.label = i % 2 == 0 ? Label::positive : Label::negative;
    const bool pos = c.label == Label::positive;
    const double p_flag = pos ? spec.flag_bias : 1.0 - spec.flag_bias;
    c.flags.respiratory_condition = rng.bernoulli(p_flag);
    c.flags.fever_or_myalgia = rng.bernoulli(p_flag);
    const std::uint32_t rate = kRates[i % kRates.size()];
    const double seconds = rng.uniform(spec.min_seconds, spec.max_seconds);
    const auto samples = static_cast<std::size_t>(std::llround(seconds * rate));
    const double center = pos ? spec.positive_center_hz : spec.negative_center_hz;
    c.clip = band_noise(center * (1.0 - spec.relative_bandwidth),
                        center * (1.0 + spec.relative_bandwidth), rate, samples, rng);
    out.push_back(std::move(c));
  }
  return out;
}

std::filesystem::path write_synth_corpus(const std::filesystem::path& dir, const SynthSpec& spec) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "audio", ec);
  if (ec) throw Error(Errc::io_failure, "cannot create " + (dir / "audio").string());

  std::ostringstream csv;
  csv << "id,audio_path,pcr_result,symptoms,conditions\n";
  for (const SynthClip& c : synth_corpus(spec)) {
    const std::string rel = "audio/" + c.id + ".wav";
    write_file(dir / rel, encode_wav(c.clip, WavEncoding::pcm16));
    csv << c.id << ',' << rel << ',' << label_name(c.label) << ','
        << csv_escape(c.flags.fever_or_myalgia ? "fever and/or chills" : "") << ','
        << csv_escape(c.flags.respiratory_condition ? "asthma" : "") << '\n';
  }
  const fs::path manifest = dir / "manifest.csv";
  write_file(manifest, csv.str());
  return manifest;
}

}  // namespace coughnet
