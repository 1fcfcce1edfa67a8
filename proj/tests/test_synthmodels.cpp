#include "sdvg/engine.hpp"
#include "sdvg/hashing.hpp"
#include "sdvg/synthmodels.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace sdvg;

namespace {

const std::vector<QuantileKnot> kKnots{{-0.7, 0.731}, {-0.8, 0.749}, {-0.9, 0.764}, {-1.0, 0.780},
                                       {-1.5, 0.834}, {-2.0, 0.875}, {-2.5, 0.889}};

// Straight-line interpolation between the two knots bracketing tau.
double oracle_rate(double tau) {
  for (std::size_t i = 0; i + 1 < kKnots.size(); ++i) {
    const auto& a = kKnots[i];
    const auto& b = kKnots[i + 1];
    if (tau <= a.tau && tau >= b.tau) {
      return a.accept_rate + (b.accept_rate - a.accept_rate) * (a.tau - tau) / (a.tau - b.tau);
    }
  }
  return std::nan("");
}

double mc_survival(const DraftQualityModel& m, double tau, int n, int frames = 12) {
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    const auto s = sample_block_score(m, "mc", i, frames);
    hits += aggregate(s, AggregationMode::MinFrame) >= tau;
  }
  return static_cast<double>(hits) / n;
}

}  // namespace

TEST(DraftQuality, KnotsReproducedExactly) {
  const auto m = fit_quantile(kKnots);
  for (const auto& k : kKnots) EXPECT_EQ(m.accept_rate(k.tau), k.accept_rate) << k.tau;
}

TEST(DraftQuality, InterpolationOracle) {
  const auto m = fit_quantile(kKnots);
  EXPECT_NEAR(m.accept_rate(-1.25), 0.807, 1e-12);
  for (double tau = -2.5; tau <= -0.7; tau += 0.01) {
    EXPECT_NEAR(m.accept_rate(tau), oracle_rate(tau), 1e-12) << tau;
  }
}

TEST(DraftQuality, TailsAndInverse) {
  const auto m = fit_quantile(kKnots);
  EXPECT_NEAR(m.upper_tail_slope(), 0.18, 1e-12);
  EXPECT_NEAR(m.lower_tail_slope(), 0.028, 1e-12);
  EXPECT_EQ(m.accept_rate(m.upper_support() + 1.0), 0.0);
  EXPECT_EQ(m.accept_rate(m.lower_support() - 1.0), 1.0);
  for (double r = 0.01; r < 1.0; r += 0.01) {
    EXPECT_NEAR(m.accept_rate(m.tau_for_rate(r)), r, 1e-12) << r;
  }
  double prev = 1.0;
  for (double tau = -40.0; tau < 5.0; tau += 0.05) {
    const double s = m.accept_rate(tau);
    EXPECT_LE(s, prev);
    prev = s;
  }
}

TEST(DraftQuality, FitRejectsNonMonotoneKnots) {
  auto bad = kKnots;
  bad[3].accept_rate = 0.74;
  try {
    fit_quantile(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Calibration);
  }
  EXPECT_THROW(fit_quantile({{-0.7, 1.0}}), Error);
  EXPECT_THROW(fit_quantile({}), Error);
}

TEST(DraftQuality, MonteCarloMatchesKnots) {
  const auto m = fit_quantile(kKnots, {.mean_gap = 0.3});
  for (const auto& k : kKnots) {
    EXPECT_NEAR(mc_survival(m, k.tau, 100000), k.accept_rate, 0.005) << k.tau;
  }
}

TEST(DraftQuality, SampledMeanGap) {
  const auto m = fit_quantile(kKnots, {.mean_gap = 0.334});
  for (int F : {3, 9, 12}) {
    double gap = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      const auto s = sample_block_score(m, "gap", i, F);
      gap += aggregate(s, AggregationMode::MeanFrame) - aggregate(s, AggregationMode::MinFrame);
    }
    EXPECT_NEAR(gap / n, 0.334, 0.01) << F;
  }
}

TEST(DraftQuality, SamplingIsKeyed) {
  const auto m = fit_quantile(kKnots, {.mean_gap = 0.3});
  EXPECT_EQ(sample_block_score(m, "p", 3, 12), sample_block_score(m, "p", 3, 12));
  EXPECT_NE(sample_block_score(m, "p", 3, 12), sample_block_score(m, "p", 4, 12));
  EXPECT_NE(sample_block_score(m, "p", 3, 12), sample_block_score(m, "q", 3, 12));
  EXPECT_NE(sample_block_score(m, "p", 3, 12), sample_block_score(m.with_seed(5), "p", 3, 12));
  const auto one = sample_block_score(m, "p", 0, 1);
  ASSERT_EQ(one.scores.size(), 1u);
  EXPECT_THROW(sample_block_score(m, "p", 0, 0), Error);
}

TEST(DraftQuality, MeanGapFitInvertsForwardModel) {
  const auto m = fit_quantile(kKnots);
  const double g = 0.25;
  // Average-frame rate at tau is S(tau - g) when every block's gap equals g.
  std::vector<QuantileKnot> rows;
  for (double tau : {-0.2, -0.5, -0.7}) rows.push_back({tau, m.accept_rate(tau - g)});
  EXPECT_NEAR(fit_mean_gap(m, rows), g, 1e-12);
  EXPECT_EQ(fit_mean_gap(m, {}), 0.0);
}

TEST(QualityProxy, PenaltyIsPiecewiseConstant) {
  const QualityProxyModel q(0.08, {-0.7, -1.5}, {0.001, 0.002, 0.01}, 0.03);
  EXPECT_EQ(q.penalty(0.0), 0.001);
  EXPECT_EQ(q.penalty(-0.7), 0.001);
  EXPECT_EQ(q.penalty(-0.71), 0.002);
  EXPECT_EQ(q.penalty(-1.5), 0.002);
  EXPECT_EQ(q.penalty(-3.0), 0.01);
  EXPECT_THROW(QualityProxyModel(0.08, {-0.7}, {0.002, 0.001}, 0.0), Error);
  EXPECT_THROW(QualityProxyModel(0.08, {-0.7}, {0.002}, 0.0), Error);
}

TEST(QualityProxy, EvaluateByHand) {
  const QualityProxyModel q(0.08, {-1.0}, {0.001, 0.01}, 0.05);
  std::vector<BlockTrace> t(4);
  for (int b = 0; b < 4; ++b) t[b].block_index = b;
  t[0].decision.verdict = Verdict::Accept;
  t[0].frame_scores = FrameScoreVector{0, {0.0, 1.0}};
  t[2].decision.verdict = Verdict::Accept;
  t[2].frame_scores = FrameScoreVector{2, {0.3, -2.0}};
  // Block 0: 0.001 + anchor 0.05; block 2: 0.01.
  EXPECT_NEAR(q.evaluate(t), 0.08 - (0.001 + 0.05 + 0.01) / 4.0, 1e-15);
  t[3].decision.verdict = Verdict::Accept;
  EXPECT_THROW(q.evaluate(t), Error);
}

TEST(QualityProxy, ExpectationMatchesSimulation) {
  const auto m = fit_quantile(kKnots, {.mean_gap = 0.3});
  const QualityProxyModel q(0.0788, {-0.7, -1.0, -2.0}, {0.0001, 0.002, 0.004, 0.03}, 0.02);
  const int B = 9;
  const int prompts = 20000;
  double sum = 0.0;
  for (int p = 0; p < prompts; ++p) {
    std::vector<BlockTrace> t(B);
    for (int b = 0; b < B; ++b) {
      t[b].block_index = b;
      t[b].frame_scores = sample_block_score(m, "prompt-" + std::to_string(p), b, 12);
      const double qb = aggregate(*t[b].frame_scores, AggregationMode::MinFrame);
      t[b].decision = decide(ThresholdPolicy{-1.0, true}, b, qb);
    }
    sum += q.evaluate(t);
  }
  EXPECT_NEAR(sum / prompts, q.expected_threshold_quality(m, -1.0, B), 2e-5);
}

TEST(QualityProxy, FitRecoversPlantedModel) {
  const auto m = fit_quantile(kKnots, {.mean_gap = 0.3});
  std::vector<double> bps;
  for (const auto& k : kKnots) bps.push_back(k.tau);
  const QualityProxyModel truth(0.0788, bps, {0.0001, 0.001, 0.001, 0.003, 0.004, 0.004, 0.01, 0.1},
                                0.04);
  QualityFitInput in;
  in.target_only = 0.0788;
  in.draft_only = truth.expected_draft_only_quality(m, 9);
  for (const auto& k : kKnots) {
    in.threshold_rows.push_back({"t", k.tau, truth.expected_threshold_quality(m, k.tau, 9)});
  }
  in.forced_random = RandomArmRow{"fr", 0.7, truth.expected_random_quality(m, 0.7, true, 9)};
  in.plain_random = RandomArmRow{"r", 0.7, truth.expected_random_quality(m, 0.7, false, 9)};
  const auto fit = fit_quality_proxy(in, m);
  EXPECT_LT(fit.max_fit_residual(), 1e-10);
  for (std::size_t j = 0; j < truth.penalties().size(); ++j) {
    EXPECT_NEAR(fit.model.penalties()[j], truth.penalties()[j], 1e-8) << j;
  }
  EXPECT_NEAR(fit.model.anchor_penalty(), 0.04, 1e-8);
}

TEST(QualityProxy, FitNeedsThreeRows) {
  const auto m = fit_quantile(kKnots);
  QualityFitInput in;
  in.target_only = 0.08;
  in.draft_only = 0.06;
  in.threshold_rows = {{"a", -0.7, 0.079}, {"b", -1.0, 0.078}};
  EXPECT_THROW(fit_quality_proxy(in, m), Error);
}

TEST(Synthetic, ScorerReadsSampledScores) {
  const auto& cal = test_support::builtin_calibration();
  for (ScoreFrames mode : {ScoreFrames::Pixel, ScoreFrames::Latent}) {
    GenerationConfig c = default_config();
    c.score_frames = mode;
    const test_support::Pipeline pipe(c);
    const auto run = pipe.run("prompt-0007", AlwaysAcceptPolicy{});
    const auto reseeded = cal.quality.with_seed(hash_combine(cal.quality.rng_seed(), c.seed));
    for (const auto& t : run.summary.block_traces) {
      ASSERT_TRUE(t.frame_scores);
      const auto expected =
          sample_block_score(reseeded, "prompt-0007", t.block_index, scored_frame_count(c, t.block_index));
      ASSERT_EQ(t.frame_scores->scores.size(), expected.scores.size());
      for (std::size_t i = 0; i < expected.scores.size(); ++i) {
        EXPECT_NEAR(t.frame_scores->scores[i], expected.scores[i], 1e-12);
      }
    }
  }
}

TEST(Synthetic, GeneratorsAreDeterministic) {
  const GenerationConfig c = default_config();
  const auto& cal = test_support::builtin_calibration();
  const SyntheticDrafter d(c, cal.quality);
  const SyntheticTarget t(c);
  const KVCache kv(CacheOwner::Drafter);
  const PromptSpec p{"x", "a cat"};
  EXPECT_EQ(d.generate(7, kv, 0, p).data, d.generate(7, kv, 0, p).data);
  EXPECT_NE(d.generate(7, kv, 0, p).data, d.generate(8, kv, 0, p).data);
  EXPECT_EQ(t.generate(7, kv, 0, p).data, t.generate(7, kv, 0, p).data);
  EXPECT_EQ(d.cost_class(), Producer::Draft);
  EXPECT_EQ(t.cost_class(), Producer::Target);
}

TEST(Synthetic, DecoderRejectsOutOfOrderBlocks) {
  const GenerationConfig c = default_config();
  const SyntheticDecoder dec(c);
  const SyntheticTarget t(c);
  DecoderState s = dec.initial_state();
  const auto block = t.generate(1, KVCache(CacheOwner::Target), 1, PromptSpec{"x", "y"});
  EXPECT_THROW(dec.decode(block, s), Error);
}
