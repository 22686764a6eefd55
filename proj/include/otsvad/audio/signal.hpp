#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "otsvad/core/error.hpp"

namespace otsvad {

// PCM audio, one sample vector per channel, normalised to [-1, 1].
struct AudioSignal {
  std::vector<std::vector<float>> channels;
  int sample_rate = 16000;

  std::size_t num_channels() const { return channels.size(); }
  std::size_t num_samples() const { return channels.empty() ? 0 : channels[0].size(); }
  double duration_s() const { return double(num_samples()) / sample_rate; }

  static AudioSignal mono(std::vector<float> samples, int sample_rate = 16000) {
    AudioSignal s;
    s.channels.push_back(std::move(samples));
    s.sample_rate = sample_rate;
    return s;
  }

  void validate() const {
    if (sample_rate <= 0) throw InputError("audio: sample rate must be positive");
    if (channels.empty()) throw InputError("audio: no channels");
    for (const auto& c : channels) {
      if (c.size() != channels[0].size()) throw InputError("audio: channels differ in length");
      for (const float v : c)
        if (!std::isfinite(v)) throw InputError("audio: non-finite sample");
    }
  }
};

namespace detail {

inline std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t le16(const unsigned char* p) { return std::uint16_t(p[0] | p[1] << 8); }

inline void put32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put16(std::string& s, std::uint16_t v) {
  s.push_back(char(v & 0xff));
  s.push_back(char(v >> 8));
}

}  // namespace detail

// Reads RIFF/WAVE files holding 16-bit PCM or 32-bit IEEE float samples,
// any channel count (WAVE_FORMAT_EXTENSIBLE accepted).
inline AudioSignal read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open wav: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw DataError("not a RIFF/WAVE file: " + path);
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::uint32_t len = detail::le32(buf.data() + pos + 4);
    const unsigned char* body = buf.data() + pos + 8;
    if (pos + 8 + len > buf.size()) throw DataError("truncated wav chunk: " + path);
    if (std::memcmp(buf.data() + pos, "fmt ", 4) == 0) {
      if (len < 16) throw DataError("short fmt chunk: " + path);
      format = detail::le16(body);
      channels = detail::le16(body + 2);
      rate = detail::le32(body + 4);
      bits = detail::le16(body + 14);
      if (format == 0xFFFE && len >= 26) format = detail::le16(body + 24);
    } else if (std::memcmp(buf.data() + pos, "data", 4) == 0) {
      data = body;
      data_len = len;
    }
    pos += 8 + len + (len & 1);
  }
  if (!data || channels == 0) throw DataError("wav missing fmt or data chunk: " + path);
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32)
    throw DataError("unsupported wav encoding (format " + std::to_string(format) + ", " + std::to_string(bits) +
                    " bits): " + path);
  const std::size_t width = bits / 8, frames = data_len / (width * channels);
  AudioSignal sig;
  sig.sample_rate = int(rate);
  sig.channels.assign(channels, std::vector<float>(frames));
  for (std::size_t i = 0; i < frames; ++i)
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * width;
      if (pcm16) {
        sig.channels[c][i] = float(std::int16_t(detail::le16(p))) / 32768.0f;
      } else {
        const std::uint32_t u = detail::le32(p);
        float v;
        std::memcpy(&v, &u, 4);
        sig.channels[c][i] = v;
      }
    }
  return sig;
}

enum class WavEncoding { kPcm16, kFloat32 };

inline void write_wav(const std::string& path, const AudioSignal& sig, WavEncoding enc = WavEncoding::kPcm16) {
  const std::uint16_t ch = std::uint16_t(sig.num_channels());
  const std::uint16_t bits = enc == WavEncoding::kPcm16 ? 16 : 32;
  const std::uint32_t frames = std::uint32_t(sig.num_samples());
  const std::uint32_t data_len = frames * ch * (bits / 8);
  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  detail::put32(out, 36 + data_len);
  out += "WAVEfmt ";
  detail::put32(out, 16);
  detail::put16(out, enc == WavEncoding::kPcm16 ? 1 : 3);
  detail::put16(out, ch);
  detail::put32(out, std::uint32_t(sig.sample_rate));
  detail::put32(out, std::uint32_t(sig.sample_rate) * ch * (bits / 8));
  detail::put16(out, std::uint16_t(ch * (bits / 8)));
  detail::put16(out, bits);
  out += "data";
  detail::put32(out, data_len);
  for (std::uint32_t i = 0; i < frames; ++i)
    for (std::uint16_t c = 0; c < ch; ++c) {
      const float v = sig.channels[c][i];
      if (enc == WavEncoding::kPcm16) {
        const long q = std::lround(std::clamp(v, -1.0f, 1.0f) * 32767.0f);
        detail::put16(out, std::uint16_t(std::int16_t(q)));
      } else {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        detail::put32(out, u);
      }
    }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write wav: " + path);
  os.write(out.data(), std::streamsize(out.size()));
}

// Rational-ratio polyphase resampler with a Kaiser-windowed sinc kernel.
// The cutoff sits at 0.95 of the lower Nyquist frequency; each output
// sample uses 2*half_taps input samples.
inline std::vector<float> resample(const std::vector<float>& in, int from_rate, int to_rate, int half_taps = 32) {
  if (from_rate <= 0 || to_rate <= 0) throw InputError("resample: rates must be positive");
  if (from_rate == to_rate) return in;
  const int g = std::gcd(from_rate, to_rate);
  const long up = to_rate / g, down = from_rate / g;
  const double cutoff = 0.95 * std::min(1.0, double(to_rate) / from_rate);
  const double beta = 8.0;
  auto bessel_i0 = [](double x) {
    double sum = 1, term = 1;
    for (int k = 1; k < 50; ++k) {
      term *= (x / (2 * k)) * (x / (2 * k));
      sum += term;
    }
    return sum;
  };
  const double i0b = bessel_i0(beta);
  const std::size_t n_out = std::size_t((long double)in.size() * up / down);
  std::vector<float> out(n_out);
  // Filter phases: phase p = (i*down) mod up selects a fixed fractional offset.
  std::vector<std::vector<double>> phases(up, std::vector<double>(2 * half_taps));
  for (long p = 0; p < up; ++p) {
    const double frac = double(p) / up;
    for (int k = -half_taps + 1; k <= half_taps; ++k) {
      const double t = k - frac;  // offset of input sample from the output instant, in input samples
      const double x = cutoff * t;
      const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(M_PI * x) / (M_PI * x);
      const double r = t / half_taps;
      const double win = std::abs(r) >= 1 ? 0.0 : bessel_i0(beta * std::sqrt(1 - r * r)) / i0b;
      phases[p][k + half_taps - 1] = cutoff * sinc * win;
    }
  }
  for (std::size_t i = 0; i < n_out; ++i) {
    const long num = long(i) * down;
    const long base = num / up;
    const auto& h = phases[num % up];
    double acc = 0;
    for (int k = -half_taps + 1; k <= half_taps; ++k) {
      const long j = base + k;
      if (j >= 0 && j < long(in.size())) acc += h[k + half_taps - 1] * in[j];
    }
    out[i] = float(acc);
  }
  return out;
}

// Brings a signal to the target rate. Fails closed when resampling is
// disabled and the rates differ.
inline AudioSignal conform_sample_rate(AudioSignal sig, int target_rate, bool allow_resample) {
  if (sig.sample_rate == target_rate) return sig;
  if (!allow_resample)
    throw InputError("sample rate " + std::to_string(sig.sample_rate) + " Hz does not match " +
                     std::to_string(target_rate) + " Hz and resampling is disabled");
  for (auto& c : sig.channels) c = resample(c, sig.sample_rate, target_rate);
  sig.sample_rate = target_rate;
  return sig;
}

}  // namespace otsvad
