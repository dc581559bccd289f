// Copyright 2026 The fastaudio Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// WAV decoding and log-mel spectrogram extraction.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "fast/checkpoint.hpp"
#include "fast/errors.hpp"
#include "fast/tensor.hpp"

namespace fast {

struct AudioClip {
  std::vector<double> samples;  // in [-1, 1], mono
  std::uint32_t sample_rate = 16000;
};

/// Decodes RIFF/WAVE bytes: PCM 16-bit or IEEE float 32-bit, any channel
/// count (mean downmix).
inline AudioClip decode_wav(std::vector<unsigned char> bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.str(4, "riff_id") != "RIFF") throw ParseError("not a RIFF file", 0, "riff_id");
  r.le<std::uint32_t>("riff_size");
  if (r.str(4, "wave_id") != "WAVE") throw ParseError("RIFF form type is not WAVE", 8, "wave_id");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (true) {
    if (r.at_end()) throw ParseError("no data chunk", r.offset(), "data");
    const std::size_t chunk_at = r.offset();
    const std::string id = r.str(4, "chunk_id");
    const auto size = r.le<std::uint32_t>("chunk_size");
    if (id == "fmt ") {
      if (size < 16) throw ParseError("fmt chunk too small", chunk_at, "fmt");
      format = r.le<std::uint16_t>("audio_format");
      channels = r.le<std::uint16_t>("num_channels");
      rate = r.le<std::uint32_t>("sample_rate");
      r.le<std::uint32_t>("byte_rate");
      r.le<std::uint16_t>("block_align");
      bits = r.le<std::uint16_t>("bits_per_sample");
      std::size_t rest = size - 16;
      if (format == 0xFFFE && rest >= 10) {  // WAVE_FORMAT_EXTENSIBLE: sub-format GUID starts 8 bytes in
        r.le<std::uint16_t>("cb_size");
        r.le<std::uint16_t>("valid_bits");
        r.le<std::uint32_t>("channel_mask");
        format = r.le<std::uint16_t>("sub_format");
        rest -= 10;
      }
      r.str(rest + (size & 1u), "fmt_extra");
      have_fmt = true;
      continue;
    }
    if (id != "data") {
      r.str(size + (size & 1u), "chunk_body");
      continue;
    }
    if (!have_fmt) throw ParseError("data chunk before fmt chunk", chunk_at, "fmt");
    if (channels == 0) throw ParseError("zero channels", chunk_at, "num_channels");
    if (rate == 0) throw ParseError("zero sample rate", chunk_at, "sample_rate");
    const bool pcm16 = format == 1 && bits == 16;
    const bool f32 = format == 3 && bits == 32;
    if (!pcm16 && !f32) {
      throw UnsupportedFormatError("unsupported WAV encoding: format " + std::to_string(format) + ", " + std::to_string(bits) +
                                   " bits");
    }
    const std::size_t bytes_per = bits / 8;
    const std::size_t frame_bytes = bytes_per * channels;
    if (size % frame_bytes != 0) throw ParseError("data size is not a whole number of frames", r.offset(), "data");
    r.need(size, "data");
    AudioClip clip;
    clip.sample_rate = rate;
    const std::size_t frames = size / frame_bytes;
    clip.samples.resize(frames);
    for (std::size_t f = 0; f < frames; ++f) {
      double acc = 0;
      for (std::size_t c = 0; c < channels; ++c) {
        if (pcm16)
          acc += static_cast<double>(static_cast<std::int16_t>(r.le<std::uint16_t>("data"))) / 32768.0;
        else
          acc += static_cast<double>(r.f32("data"));
      }
      clip.samples[f] = acc / channels;
    }
    if (clip.samples.empty()) throw ParseError("empty data chunk", chunk_at, "data");
    for (double s : clip.samples)
      if (!std::isfinite(s)) throw ParseError("non-finite sample", chunk_at, "data");
    return clip;
  }
}

inline AudioClip load_wav(const std::string& path) { return decode_wav(detail::read_file(path)); }

/// PCM16 mono or multi-channel encoder (interleaved `channels`).
inline std::vector<unsigned char> encode_wav_pcm16(const std::vector<double>& interleaved, std::uint32_t sample_rate,
                                                   std::uint16_t channels = 1) {
  detail::ByteWriter w;
  const auto data_bytes = static_cast<std::uint32_t>(interleaved.size() * 2);
  w.bytes("RIFF", 4);
  w.le<std::uint32_t>(36 + data_bytes);
  w.bytes("WAVEfmt ", 8);
  w.le<std::uint32_t>(16);
  w.le<std::uint16_t>(1);
  w.le<std::uint16_t>(channels);
  w.le<std::uint32_t>(sample_rate);
  w.le<std::uint32_t>(sample_rate * channels * 2);
  w.le<std::uint16_t>(static_cast<std::uint16_t>(channels * 2));
  w.le<std::uint16_t>(16);
  w.bytes("data", 4);
  w.le<std::uint32_t>(data_bytes);
  for (double s : interleaved) {
    const double scaled = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    w.le(static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
  }
  return w.buffer();
}

inline void save_wav_pcm16(const std::string& path, const std::vector<double>& samples, std::uint32_t sample_rate) {
  detail::write_file(path, encode_wav_pcm16(samples, sample_rate));
}

// ---------------------------------------------------------------------------

struct SpectrogramConfig {
  std::uint32_t sample_rate = 16000;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  std::size_t n_fft = 512;
  std::size_t n_mels = 128;
  std::size_t target_frames = 1876;
  double log_floor = 1e-10;

  std::size_t window_samples() const { return static_cast<std::size_t>(std::lround(sample_rate * window_ms / 1000.0)); }
  std::size_t hop_samples() const { return static_cast<std::size_t>(std::lround(sample_rate * hop_ms / 1000.0)); }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("invalid spectrogram config: " + m); };
    if (sample_rate == 0) fail("sample_rate must be positive");
    if (hop_ms <= 0 || window_ms <= 0 || hop_ms > window_ms) fail("need 0 < hop_ms <= window_ms");
    if (window_samples() == 0 || hop_samples() == 0) fail("window and hop must span at least one sample");
    if (n_fft < window_samples()) fail("n_fft must be >= window samples");
    if (n_mels == 0) fail("n_mels must be positive");
    if (target_frames == 0) fail("target_frames must be >= 1");
    if (!(log_floor > 0)) fail("log_floor must be positive");
  }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Center frequencies (Hz) of the n_mels triangular filters: equally spaced
/// on the HTK mel scale between 0 Hz and Nyquist, endpoints excluded.
inline std::vector<double> mel_center_frequencies(const SpectrogramConfig& cfg) {
  const double top = hz_to_mel(cfg.sample_rate / 2.0);
  std::vector<double> c(cfg.n_mels);
  for (std::size_t i = 0; i < cfg.n_mels; ++i) c[i] = mel_to_hz(top * static_cast<double>(i + 1) / static_cast<double>(cfg.n_mels + 1));
  return c;
}

/// [n_mels][n_fft/2 + 1] triangle weights evaluated at the FFT bin
/// frequencies. Filters narrower than the bin spacing can come out empty.
inline std::vector<std::vector<double>> mel_filterbank(const SpectrogramConfig& cfg) {
  const std::size_t bins = cfg.n_fft / 2 + 1;
  const double top = hz_to_mel(cfg.sample_rate / 2.0);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  std::vector<std::vector<double>> fb(cfg.n_mels, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.n_fft);
      const double w = std::min((f - lo) / (mid - lo), (hi - f) / (hi - mid));
      fb[m][k] = std::max(0.0, w);
    }
  }
  return fb;
}

namespace detail {

/// In-place iterative radix-2 FFT; size must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const auto u = a[i + j], v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

/// |DFT| for bins 0..n/2 of a zero-padded frame.
inline std::vector<double> magnitude_spectrum(const std::vector<double>& frame, std::size_t n_fft) {
  const std::size_t bins = n_fft / 2 + 1;
  std::vector<double> mag(bins);
  if (std::has_single_bit(n_fft)) {
    std::vector<std::complex<double>> buf(n_fft);
    for (std::size_t i = 0; i < frame.size(); ++i) buf[i] = frame[i];
    fft_radix2(buf);
    for (std::size_t k = 0; k < bins; ++k) mag[k] = std::abs(buf[k]);
    return mag;
  }
  for (std::size_t k = 0; k < bins; ++k) {
    std::complex<double> acc;
    for (std::size_t t = 0; t < frame.size(); ++t) {
      const double ang = -2.0 * 3.14159265358979323846 * static_cast<double>(k * t) / static_cast<double>(n_fft);
      acc += frame[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    mag[k] = std::abs(acc);
  }
  return mag;
}

}  // namespace detail

/// Mel-filtered magnitude STFT, [n_mels][frames], before any log.
inline std::vector<std::vector<double>> mel_energies(const AudioClip& clip, const SpectrogramConfig& cfg) {
  cfg.validate();
  if (clip.sample_rate != cfg.sample_rate) {
    throw ConfigError("clip sample rate " + std::to_string(clip.sample_rate) + " Hz differs from configured " +
                      std::to_string(cfg.sample_rate) + " Hz (no resampling)");
  }
  const std::size_t win = cfg.window_samples(), hop = cfg.hop_samples();
  if (clip.samples.size() < win) {
    throw TooShortError("clip has " + std::to_string(clip.samples.size()) + " samples, shorter than one " + std::to_string(win) +
                        "-sample window");
  }
  const std::size_t frames = 1 + (clip.samples.size() - win) / hop;
  std::vector<double> window(win);
  for (std::size_t i = 0; i < win; ++i) window[i] = 0.5 - 0.5 * std::cos(2.0 * 3.14159265358979323846 * static_cast<double>(i) / static_cast<double>(win));
  const auto fb = mel_filterbank(cfg);
  std::vector<std::vector<double>> out(cfg.n_mels, std::vector<double>(frames));
  std::vector<double> frame(win);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < win; ++i) frame[i] = clip.samples[t * hop + i] * window[i];
    const auto mag = detail::magnitude_spectrum(frame, cfg.n_fft);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0;
      for (std::size_t k = 0; k < mag.size(); ++k) e += fb[m][k] * mag[k];
      out[m][t] = e;
    }
  }
  return out;
}

/// log(max(energy, log_floor)), [n_mels][frames].
inline std::vector<std::vector<double>> log_mel(const AudioClip& clip, const SpectrogramConfig& cfg) {
  auto e = mel_energies(clip, cfg);
  for (auto& row : e)
    for (auto& v : row) v = std::log(std::max(v, cfg.log_floor));
  return e;
}

struct Spectrogram {
  Tensor<float> values;  // [n_mels, target_frames, 1]
};

/// Log-mel image standardised to zero mean and unit variance, then
/// center-truncated or right-padded (with the standardised log floor) to
/// target_frames.
inline Spectrogram mel_spectrogram(const AudioClip& clip, const SpectrogramConfig& cfg) {
  const auto lm = log_mel(clip, cfg);
  const std::size_t frames = lm.front().size();
  double sum = 0, sq = 0;
  for (const auto& row : lm)
    for (double v : row) sum += v;
  const double n = static_cast<double>(cfg.n_mels * frames);
  const double mu = sum / n;
  for (const auto& row : lm)
    for (double v : row) sq += (v - mu) * (v - mu);
  const double sigma = std::sqrt(sq / n);
  const double inv = sigma > 1e-12 ? 1.0 / sigma : 1.0;

  const std::size_t target = cfg.target_frames;
  const std::size_t offset = frames > target ? (frames - target) / 2 : 0;
  const std::size_t kept = std::min(frames, target);
  const double pad_value = (std::log(cfg.log_floor) - mu) * inv;
  std::vector<float> out(cfg.n_mels * target, static_cast<float>(pad_value));
  for (std::size_t m = 0; m < cfg.n_mels; ++m)
    for (std::size_t t = 0; t < kept; ++t) out[m * target + t] = static_cast<float>((lm[m][offset + t] - mu) * inv);
  return {Tensor<float>(Shape{cfg.n_mels, target, 1}, std::move(out))};
}

/// "FSTS" | u32 n_mels | u32 frames | u32 reserved | f32 values, little-endian.
inline std::vector<unsigned char> encode_spectrogram(const Spectrogram& s) {
  detail::ByteWriter w;
  w.bytes("FSTS", 4);
  w.le(static_cast<std::uint32_t>(s.values.shape()[0]));
  w.le(static_cast<std::uint32_t>(s.values.shape()[1]));
  w.le(std::uint32_t{0});
  for (float v : s.values.data()) w.f32(v);
  return w.buffer();
}

inline Spectrogram decode_spectrogram(std::vector<unsigned char> bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.str(4, "magic") != "FSTS") throw ParseError("bad spectrogram magic", 0, "magic");
  const auto mels = r.le<std::uint32_t>("n_mels");
  const auto frames = r.le<std::uint32_t>("frames");
  r.le<std::uint32_t>("reserved");
  if (mels == 0 || frames == 0) throw ParseError("empty spectrogram", 4, "n_mels");
  std::vector<float> v(static_cast<std::size_t>(mels) * frames);
  r.need(v.size() * 4, "values");
  for (auto& x : v) x = r.f32("values");
  if (!r.at_end()) throw ParseError("trailing bytes", r.offset(), "values");
  return {Tensor<float>(Shape{mels, frames, 1}, std::move(v))};
}

inline void save_spectrogram(const std::string& path, const Spectrogram& s) { detail::write_file(path, encode_spectrogram(s)); }
inline Spectrogram load_spectrogram(const std::string& path) { return decode_spectrogram(detail::read_file(path)); }

}  // namespace fast
