#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <random>

#include "otsvad/audio/fbank.hpp"
#include "otsvad/audio/signal.hpp"
#include "otsvad/audio/vad.hpp"

using namespace otsvad;

namespace {

std::vector<float> tone(double hz, double seconds, int sr = 16000, double amp = 0.5) {
  std::vector<float> v(std::size_t(seconds * sr));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = float(amp * std::sin(2 * M_PI * hz * double(i) / sr));
  return v;
}

// Direct O(N^2) DFT power spectrum and a triangular mel bank coded from
// scratch in Hz space. Returns the argmax mel channel of one frame.
std::size_t oracle_argmax_bin(const std::vector<float>& frame, int sr, std::size_t nfft, std::size_t bins) {
  const std::size_t n = frame.size();
  std::vector<double> p(nfft / 2 + 1);
  for (std::size_t k = 0; k < p.size(); ++k) {
    std::complex<double> acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = 0.54 - 0.46 * std::cos(2 * M_PI * double(i) / double(n - 1));
      acc += double(frame[i]) * w * std::polar(1.0, -2 * M_PI * double(k * i) / double(nfft));
    }
    p[k] = std::norm(acc);
  }
  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };  // same scale, other base
  const double lo = mel(20.0), hi = mel(sr / 2.0);
  std::size_t best = 0;
  double best_e = -1;
  for (std::size_t m = 0; m < bins; ++m) {
    const double a = lo + (hi - lo) * double(m) / double(bins + 1);
    const double c = lo + (hi - lo) * double(m + 1) / double(bins + 1);
    const double b = lo + (hi - lo) * double(m + 2) / double(bins + 1);
    double e = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double f = mel(double(k) * sr / double(nfft));
      double w = 0;
      if (f > a && f <= c) w = (f - a) / (c - a);
      else if (f > c && f < b) w = (b - f) / (b - c);
      e += w * p[k];
    }
    if (e > best_e) best_e = e, best = m;
  }
  return best;
}

FeatureMatrix ramp_features(std::size_t frames, std::size_t bins = 4) {
  FeatureMatrix fm;
  fm.bins = bins;
  for (std::size_t l = 0; l < frames; ++l)
    for (std::size_t b = 0; b < bins; ++b) fm.values.push_back(float(l * 10 + b));
  return fm;
}

}  // namespace

TEST(Fbank, OneSecondGives98Frames) {
  const auto fm = compute_fbank(AudioSignal::mono(tone(440, 1.0)));
  EXPECT_EQ(fm.num_frames(), 98u);
  EXPECT_EQ(fm.bins, 80u);
  EXPECT_DOUBLE_EQ(fm.frame_shift_s, 0.01);
}

TEST(Fbank, FrameCountFormula) {
  FeatureConfig cfg;
  for (std::size_t n : {400u, 401u, 559u, 560u, 16000u, 48123u}) {
    std::vector<float> x(n, 0.1f);
    const auto fm = compute_fbank(x, 16000, FbankComputer(cfg));
    EXPECT_EQ(fm.num_frames(), (n - 400) / 160 + 1) << n;
  }
}

TEST(Fbank, AllZeroSignalIsLogFloor) {
  const auto fm = compute_fbank(AudioSignal::mono(std::vector<float>(8000, 0.0f)));
  const float expect = float(std::log(1e-10));
  for (const float v : fm.values) ASSERT_EQ(v, expect);
}

TEST(Fbank, ToneArgmaxMatchesIndependentOracle) {
  const auto x = tone(1000.0, 0.5);
  const FeatureConfig cfg;
  const auto fm = compute_fbank(AudioSignal::mono(x), cfg);
  for (std::size_t l = 0; l < fm.num_frames(); l += 7) {
    std::vector<float> frame(x.begin() + std::ptrdiff_t(l * 160), x.begin() + std::ptrdiff_t(l * 160 + 400));
    const std::size_t want = oracle_argmax_bin(frame, 16000, 512, 80);
    std::size_t got = 0;
    for (std::size_t b = 1; b < fm.bins; ++b)
      if (fm.at(b, l) > fm.at(got, l)) got = b;
    EXPECT_EQ(got, want) << "frame " << l;
  }
}

TEST(Fbank, RejectsShortAndNonFinite) {
  EXPECT_THROW(compute_fbank(AudioSignal::mono(std::vector<float>(399, 0.f))), InputError);
  auto x = tone(300, 0.1);
  x[17] = std::nanf("");
  EXPECT_THROW(compute_fbank(AudioSignal::mono(x)), InputError);
  EXPECT_THROW(compute_fbank(AudioSignal::mono(tone(300, 0.1, 8000), 8000)), InputError);
}

TEST(Fbank, Deterministic) {
  const auto x = tone(777, 0.3);
  EXPECT_EQ(compute_fbank(AudioSignal::mono(x)).values, compute_fbank(AudioSignal::mono(x)).values);
}

TEST(Fbank, OnlineMatchesBatch) {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> d(0, 0.1f);
  std::vector<float> x(12345);
  for (auto& v : x) v = d(rng);
  const FbankComputer fb;
  const auto batch = compute_fbank(x, 16000, fb);
  OnlineFbank online(fb);
  std::uniform_int_distribution<std::size_t> chunk(1, 700);
  for (std::size_t pos = 0; pos < x.size();) {
    const std::size_t n = std::min(chunk(rng), x.size() - pos);
    online.accept({x.data() + pos, n});
    pos += n;
  }
  EXPECT_EQ(online.frames().values, batch.values);
}

TEST(Wav, RoundTripPcm16AndFloat) {
  AudioSignal s;
  s.sample_rate = 16000;
  s.channels = {tone(200, 0.05), tone(900, 0.05)};
  const auto dir = std::filesystem::temp_directory_path();
  const auto p16 = (dir / "otsvad_rt16.wav").string(), p32 = (dir / "otsvad_rt32.wav").string();
  write_wav(p16, s, WavEncoding::kPcm16);
  write_wav(p32, s, WavEncoding::kFloat32);
  const auto a = read_wav(p16), b = read_wav(p32);
  ASSERT_EQ(a.num_channels(), 2u);
  ASSERT_EQ(a.num_samples(), s.num_samples());
  EXPECT_EQ(b.channels, s.channels);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < s.num_samples(); ++i) EXPECT_NEAR(a.channels[c][i], s.channels[c][i], 1.0 / 32767);
  std::remove(p16.c_str());
  std::remove(p32.c_str());
  EXPECT_THROW(read_wav((dir / "otsvad_missing.wav").string()), DataError);
}

TEST(Resample, PreservesToneAndLength) {
  const auto x = tone(440, 1.0, 8000);
  const auto y = resample(x, 8000, 16000);
  ASSERT_EQ(y.size(), 16000u);
  const auto ref = tone(440, 1.0, 16000);
  double err = 0;
  for (std::size_t i = 1000; i < 15000; ++i) err = std::max(err, double(std::abs(y[i] - ref[i])));
  EXPECT_LT(err, 0.01);
  const auto z = resample(tone(440, 1.0, 44100), 44100, 16000);
  EXPECT_EQ(z.size(), 16000u);
}

TEST(Resample, FailsClosedWhenDisabled) {
  EXPECT_THROW(conform_sample_rate(AudioSignal::mono(tone(100, 0.1, 8000), 8000), 16000, false), InputError);
  EXPECT_EQ(conform_sample_rate(AudioSignal::mono(tone(100, 0.1, 8000), 8000), 16000, true).sample_rate, 16000);
}

TEST(Vad, EmptyVadGivesEmptyOutput) {
  const auto [out, map] = remove_silence(ramp_features(50), VadSegments{});
  EXPECT_EQ(out.num_frames(), 0u);
  EXPECT_TRUE(map.empty());
}

TEST(Vad, FullCoverageIsIdentity) {
  const auto fm = ramp_features(300);
  const auto [out, map] = remove_silence(fm, VadSegments({{0.0, 10.0}}));
  EXPECT_EQ(out.values, fm.values);
  ASSERT_EQ(map.size(), 300u);
  for (std::size_t i = 0; i < 300; ++i) EXPECT_EQ(map.project(i), i);
}

TEST(Vad, GapRemovedAndProjected) {
  // Frame l has centre 0.01 l + 0.0125, so frames 0..99 fall in
  // [0, 1.005) and frames 200..299 in [2.005, 3.01).
  const auto fm = ramp_features(300);
  const auto [out, map] = remove_silence(fm, VadSegments({{0.0, 1.005}, {2.005, 3.01}}));
  ASSERT_EQ(out.num_frames(), 200u);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(map.project(i), i);
  for (std::size_t i = 100; i < 200; ++i) EXPECT_EQ(map.project(i), i + 100);
  EXPECT_EQ(map.project(150), 250u);
  EXPECT_EQ(out.at(0, 150), fm.at(0, 250));
  EXPECT_THROW(map.project(200), RangeError);
  for (std::size_t i = 0; i < 200; ++i) {
    if (i) EXPECT_LT(map.project(i - 1), map.project(i));
    EXPECT_EQ(map.inverse(map.project(i)), i);
  }
  EXPECT_FALSE(map.inverse(150).has_value());
}

TEST(Vad, IdentityMapProjects) {
  EXPECT_EQ(TimelineMap::identity(10).project(5), 5u);
  EXPECT_THROW(TimelineMap::identity(10).project(10), RangeError);
}

TEST(Vad, ParsePairsAndRttm) {
  const auto a = parse_vad("0.5 1.5\n# comment\n\n2.0 3.0\n1.0 1.8\n");
  ASSERT_EQ(a.intervals().size(), 2u);
  EXPECT_DOUBLE_EQ(a.intervals()[0].second, 1.8);
  const auto b = parse_vad(
      "SPEAKER rec 1 0.00 1.00 <NA> <NA> A <NA> <NA>\n"
      "SPEAKER rec 1 0.50 1.00 <NA> <NA> B <NA> <NA>\n"
      "SPEAKER rec 1 4.00 0.50 <NA> <NA> A <NA> <NA>\n");
  ASSERT_EQ(b.intervals().size(), 2u);
  EXPECT_DOUBLE_EQ(b.intervals()[0].second, 1.5);
  EXPECT_DOUBLE_EQ(b.speech_duration(), 2.0);
  try {
    parse_vad("0 1\n1 x\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(VadSegments({{1.0, 0.5}}), InputError);
  EXPECT_THROW(VadSegments({{0.0, 2.0}, {1.0, 3.0}}), InputError);
}
