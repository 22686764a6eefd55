#pragma once

#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include "otsvad/audio/signal.hpp"

namespace otsvad {

struct FeatureConfig {
  int sample_rate = 16000;
  double frame_length_s = 0.025;
  double frame_shift_s = 0.010;
  std::size_t num_mel_bins = 80;
  double low_freq = 20.0;
  double high_freq = 0.0;  // <= 0 means Nyquist
  double log_floor = 1e-10;

  std::size_t frame_samples() const { return std::size_t(std::lround(frame_length_s * sample_rate)); }
  std::size_t shift_samples() const { return std::size_t(std::lround(frame_shift_s * sample_rate)); }
  std::size_t fft_size() const {
    std::size_t n = 1;
    while (n < frame_samples()) n <<= 1;
    return n;
  }
  // Frames produced from n samples (no partial frames).
  std::size_t num_frames(std::size_t n) const {
    return n < frame_samples() ? 0 : (n - frame_samples()) / shift_samples() + 1;
  }
};

// Log-Mel filterbank frames. Storage is frame-major: frame l occupies
// values[l*bins, (l+1)*bins). Conceptually the matrix is bins x frames.
struct FeatureMatrix {
  std::vector<float> values;
  std::size_t bins = 80;
  double frame_shift_s = 0.010;
  double frame_length_s = 0.025;

  std::size_t num_frames() const { return bins ? values.size() / bins : 0; }
  float at(std::size_t bin, std::size_t frame) const { return values[frame * bins + bin]; }
  std::span<const float> frame(std::size_t l) const { return {values.data() + l * bins, bins}; }
  void append(std::span<const float> f) { values.insert(values.end(), f.begin(), f.end()); }
};

inline double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::exp(mel / 1127.0) - 1.0); }

namespace detail {

inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2 * M_PI / double(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k], v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

}  // namespace detail

// Frame-by-frame log-Mel analyser. Stateless apart from precomputed
// window and filter tables, so one instance may be shared across threads.
class FbankComputer {
 public:
  explicit FbankComputer(FeatureConfig cfg = {}) : cfg_(cfg) {
    const std::size_t n = cfg_.frame_samples();
    if (n == 0 || cfg_.shift_samples() == 0) throw InputError("fbank: frame length and shift must be positive");
    window_.resize(n);
    for (std::size_t i = 0; i < n; ++i) window_[i] = 0.54 - 0.46 * std::cos(2 * M_PI * double(i) / double(n - 1));
    const std::size_t nfft = cfg_.fft_size(), half = nfft / 2 + 1;
    const double nyq = 0.5 * cfg_.sample_rate;
    const double hi = cfg_.high_freq > 0 ? cfg_.high_freq : nyq;
    const double mlo = hz_to_mel(cfg_.low_freq), mhi = hz_to_mel(hi);
    const double dm = (mhi - mlo) / double(cfg_.num_mel_bins + 1);
    filters_.assign(cfg_.num_mel_bins, std::vector<double>(half, 0.0));
    for (std::size_t m = 0; m < cfg_.num_mel_bins; ++m) {
      const double left = mlo + m * dm, centre = left + dm, right = centre + dm;
      for (std::size_t k = 0; k < half; ++k) {
        const double mel = hz_to_mel(double(k) * cfg_.sample_rate / double(nfft));
        if (mel > left && mel < right)
          filters_[m][k] = mel <= centre ? (mel - left) / (centre - left) : (right - mel) / (right - centre);
      }
    }
  }

  const FeatureConfig& config() const { return cfg_; }

  // One frame of frame_samples() samples -> num_mel_bins log energies.
  void compute_frame(std::span<const float> samples, std::span<float> out) const {
    const std::size_t nfft = cfg_.fft_size(), half = nfft / 2 + 1;
    std::vector<std::complex<double>> buf(nfft, 0.0);
    for (std::size_t i = 0; i < window_.size(); ++i) buf[i] = double(samples[i]) * window_[i];
    detail::fft_inplace(buf);
    std::vector<double> power(half);
    for (std::size_t k = 0; k < half; ++k) power[k] = std::norm(buf[k]);
    for (std::size_t m = 0; m < filters_.size(); ++m) {
      double e = 0;
      for (std::size_t k = 0; k < half; ++k) e += filters_[m][k] * power[k];
      out[m] = float(std::log(std::max(e, cfg_.log_floor)));
    }
  }

 private:
  FeatureConfig cfg_;
  std::vector<double> window_;
  std::vector<std::vector<double>> filters_;
};

// Whole-signal log-Mel extraction of one channel.
inline FeatureMatrix compute_fbank(std::span<const float> samples, int sample_rate, const FbankComputer& fb) {
  const auto& cfg = fb.config();
  if (sample_rate != cfg.sample_rate)
    throw InputError("fbank: expected " + std::to_string(cfg.sample_rate) + " Hz input, got " +
                     std::to_string(sample_rate) + " Hz");
  for (const float v : samples)
    if (!std::isfinite(v)) throw InputError("fbank: non-finite sample");
  const std::size_t L = cfg.num_frames(samples.size());
  if (L == 0) throw InputError("fbank: signal shorter than one frame");
  FeatureMatrix fm;
  fm.bins = cfg.num_mel_bins;
  fm.frame_shift_s = cfg.frame_shift_s;
  fm.frame_length_s = cfg.frame_length_s;
  fm.values.resize(L * fm.bins);
  for (std::size_t l = 0; l < L; ++l)
    fb.compute_frame(samples.subspan(l * cfg.shift_samples(), cfg.frame_samples()),
                     {fm.values.data() + l * fm.bins, fm.bins});
  return fm;
}

inline FeatureMatrix compute_fbank(const AudioSignal& sig, const FeatureConfig& cfg = {}, std::size_t channel = 0) {
  if (channel >= sig.num_channels()) throw InputError("fbank: channel out of range");
  return compute_fbank(sig.channels[channel], sig.sample_rate, FbankComputer(cfg));
}

// Incremental extractor: accepts sample chunks of any size and yields each
// frame as soon as its last sample has arrived. Produces exactly the same
// frames as compute_fbank over the concatenated input.
class OnlineFbank {
 public:
  explicit OnlineFbank(const FbankComputer& fb) : fb_(fb) {
    frames_.bins = fb.config().num_mel_bins;
    frames_.frame_shift_s = fb.config().frame_shift_s;
    frames_.frame_length_s = fb.config().frame_length_s;
  }

  // Appends samples; returns the number of new frames now available.
  std::size_t accept(std::span<const float> samples) {
    for (const float v : samples)
      if (!std::isfinite(v)) throw InputError("fbank: non-finite sample");
    pending_.insert(pending_.end(), samples.begin(), samples.end());
    const auto& cfg = fb_.config();
    std::size_t produced = 0;
    while (pending_.size() >= cfg.frame_samples()) {
      std::vector<float> f(cfg.num_mel_bins);
      fb_.compute_frame({pending_.data(), cfg.frame_samples()}, f);
      frames_.append(f);
      pending_.erase(pending_.begin(), pending_.begin() + std::ptrdiff_t(cfg.shift_samples()));
      ++produced;
    }
    return produced;
  }

  const FeatureMatrix& frames() const { return frames_; }
  std::size_t num_frames() const { return frames_.num_frames(); }

 private:
  const FbankComputer& fb_;
  std::vector<float> pending_;
  FeatureMatrix frames_;
};

}  // namespace otsvad
