#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>
#include <random>

#include "otsvad/scoring/score.hpp"
#include "support/der_oracle.hpp"

using namespace otsvad;
using otsvad::testing::Oracle;
using otsvad::testing::random_side;
using otsvad::testing::seg;

TEST(Rttm, ParsesFieldsPositionally) {
  const auto s = parse_rttm("SPEAKER rec1 1 0.80 0.80 <NA> <NA> spk1 <NA> <NA>\n");
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].recording_id, "rec1");
  EXPECT_DOUBLE_EQ(s[0].onset_s, 0.80);
  EXPECT_DOUBLE_EQ(s[0].duration_s, 0.80);
  EXPECT_EQ(s[0].speaker, "spk1");
}

TEST(Rttm, EmptyInputIsEmpty) { EXPECT_TRUE(parse_rttm("").empty()); }

TEST(Rttm, RoundTripIsStable) {
  const std::string text =
      "SPEAKER rec1 1 0.80 0.80 <NA> <NA> spk1 <NA> <NA>\n"
      "SPEAKER rec1 1 1.20 3.04 <NA> <NA> spk2 <NA> <NA>\n"
      "SPEAKER rec2 1 0.00 12.56 <NA> <NA> A <NA> <NA>\n";
  EXPECT_EQ(write_rttm(parse_rttm(text)), text);
}

TEST(Rttm, MalformedLineReportsLineNumber) {
  const std::string text = "SPEAKER rec1 1 0.80 0.80 <NA> <NA> spk1 <NA> <NA>\n\nSPEAKER rec1 1 abc 0.80 <NA> <NA> s <NA> <NA>\n";
  try {
    parse_rttm(text);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(parse_rttm("SPEAKER rec1 1 0.5\n"), ParseError);
  EXPECT_THROW(parse_rttm("SPEAKER rec1 1 0.5 0 <NA> <NA> s <NA> <NA>\n"), ParseError);
  EXPECT_THROW(parse_rttm("LEXEME rec1 1 0.5 1 <NA> <NA> s <NA> <NA>\n"), ParseError);
}

TEST(Hungarian, MatchesBruteForce) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 10);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t R = 1 + rng() % 5, C = 1 + rng() % 5;
    std::vector<std::vector<double>> w(R, std::vector<double>(C));
    for (auto& row : w)
      for (auto& v : row) v = std::floor(u(rng));
    const auto a = max_weight_assignment(w);
    double got = 0;
    std::vector<char> used(C, 0);
    for (std::size_t i = 0; i < R; ++i)
      if (a[i] >= 0) {
        EXPECT_FALSE(used[std::size_t(a[i])]);
        used[std::size_t(a[i])] = 1;
        got += w[i][std::size_t(a[i])];
      }
    // Brute force over column permutations with padding.
    std::vector<int> perm(std::max(R, C));
    std::iota(perm.begin(), perm.end(), 0);
    double best = 0;
    do {
      double s = 0;
      for (std::size_t i = 0; i < R; ++i)
        if (std::size_t(perm[i]) < C) s += w[i][std::size_t(perm[i])];
      best = std::max(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    EXPECT_DOUBLE_EQ(got, best);
  }
}

TEST(Der, IdenticalIsZero) {
  const std::vector<RttmSegment> ref = {seg("a", 0, 3), seg("b", 2, 4), seg("a", 7, 1.5)};
  const auto d = compute_der(ref, ref);
  EXPECT_EQ(d.errors(), 0u);
  EXPECT_EQ(d.der(), 0.0);
  EXPECT_EQ(compute_jer(ref, ref).jer, 0.0);
}

TEST(Der, EmptyHypothesisIsAllMiss) {
  const auto d = compute_der({seg("a", 0, 10)}, {});
  EXPECT_DOUBLE_EQ(d.der(), 100.0);
  EXPECT_EQ(d.miss, 1000u);
  EXPECT_EQ(d.false_alarm + d.confusion, 0u);
}

TEST(Der, OneSecondConfusionIsTenPercent) {
  const auto d = compute_der({seg("a", 0, 10)}, {seg("x", 0, 4), seg("y", 4, 1), seg("x", 5, 5)});
  EXPECT_NEAR(d.der(), 10.0, 1e-12);
  EXPECT_EQ(d.confusion, 100u);
  EXPECT_EQ(d.miss + d.false_alarm, 0u);
}

TEST(Der, EmptyReferenceIsUndefined) {
  EXPECT_THROW(compute_der({}, {seg("a", 0, 1)}), InputError);
  EXPECT_THROW(compute_jer({}, {}), InputError);
}

TEST(Der, RejectsForeignRecording) {
  EXPECT_THROW(compute_der({seg("a", 0, 1)}, {seg("a", 0, 1, "other")}), InputError);
}

TEST(Jer, HalfWhenOneSpeakerMissed) {
  const std::vector<RttmSegment> ref = {seg("a", 0, 5), seg("b", 5, 5)};
  const auto j = compute_jer(ref, {seg("x", 0, 5)});
  EXPECT_NEAR(j.jer, 50.0, 1e-12);
  EXPECT_NEAR(j.per_speaker.at("rec1/b"), 100.0, 1e-12);
}

TEST(Der, InvariantUnderHypothesisRenaming) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const auto ref = random_side(rng, 3, "r");
    auto hyp = random_side(rng, 3, "h");
    const auto base = compute_der(ref, hyp);
    for (auto& s : hyp) s.speaker = "renamed_" + std::string(1, char('z' - (s.speaker.back() - '0')));
    const auto renamed = compute_der(ref, hyp);
    EXPECT_EQ(base.errors(), renamed.errors());
    EXPECT_EQ(base.scored_speech, renamed.scored_speech);
  }
}

TEST(Der, LargerCollarNeverGrowsDenominator) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const auto ref = random_side(rng, 3, "r");
    const auto hyp = random_side(rng, 2, "h");
    std::size_t prev = std::numeric_limits<std::size_t>::max();
    for (double c : {0.0, 0.1, 0.25, 0.5, 1.0}) {
      ScoringConfig cfg;
      cfg.collar_s = c;
      std::size_t denom = 0;
      try {
        denom = compute_der(ref, hyp, cfg).scored_speech;
      } catch (const InputError&) {
        denom = 0;
      }
      EXPECT_LE(denom, prev);
      prev = denom;
    }
  }
}

TEST(Der, RandomisedCasesMatchBruteForce) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto ref = random_side(rng, 1 + int(rng() % 3), "r");
    const auto hyp = random_side(rng, int(rng() % 4), "h");
    for (double collar : {0.0, 0.25}) {
      ScoringConfig cfg;
      cfg.collar_s = collar;
      const Oracle o(ref, hyp, collar);
      DerResult d;
      try {
        d = compute_der(ref, hyp, cfg);
      } catch (const InputError&) {
        continue;  // collar swallowed all reference speech
      }
      EXPECT_EQ(d.miss + d.false_alarm + d.confusion, d.errors());
      EXPECT_NEAR(d.der(), o.der(), 0.1) << "trial " << trial << " collar " << collar;
      EXPECT_NEAR(compute_jer(ref, hyp, cfg).jer, o.jer(), 0.1) << "trial " << trial << " collar " << collar;
      ++checked;
    }
  }
  EXPECT_GT(checked, 150);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 30.0);
}
