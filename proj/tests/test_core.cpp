#include "sdvg/core.hpp"
#include "sdvg/hashing.hpp"
#include "sdvg/kvfile.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace sdvg;

namespace {

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected sdvg::Error";
  return ErrorKind::Io;
}

}  // namespace

TEST(Config, DefaultsMatchReferenceSetup) {
  const GenerationConfig c = default_config();
  EXPECT_EQ(c.num_blocks, 9);
  EXPECT_EQ(c.denoise_steps, 4);
  EXPECT_EQ(c.timestep_schedule, (std::vector<int>{1000, 937, 833, 625, 0}));
  EXPECT_EQ(c.guidance_scale, 3.0);
  EXPECT_EQ(c.timestep_shift, 5.0);
  EXPECT_EQ(c.latent_frames_per_block, 3);
  EXPECT_EQ(c.pixel_frames_first_block, 9);
  EXPECT_EQ(c.pixel_frames_later_block, 12);
  EXPECT_EQ(c.threshold, -0.7);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.resolution, (Resolution{832, 480}));
  EXPECT_NO_THROW(validate(c));
}

TEST(Config, ValidationRejectsBadSchedules) {
  GenerationConfig c = default_config();
  c.timestep_schedule = {1000, 937, 937, 625, 0};
  EXPECT_EQ(kind_of([&] { validate(c); }), ErrorKind::Validation);

  c = default_config();
  c.timestep_schedule = {1000, 937, 833, 625};
  EXPECT_EQ(kind_of([&] { validate(c); }), ErrorKind::Validation);

  c = default_config();
  c.timestep_schedule = {1000, 937, 833, 625, 10};
  EXPECT_EQ(kind_of([&] { validate(c); }), ErrorKind::Validation);

  c = default_config();
  c.num_blocks = 0;
  EXPECT_EQ(kind_of([&] { validate(c); }), ErrorKind::Validation);

  c = default_config();
  c.latent_channels = 1;
  EXPECT_EQ(kind_of([&] { validate(c); }), ErrorKind::Validation);
}

TEST(Layout, FramesPerLatentDefault) {
  const GenerationConfig c = default_config();
  EXPECT_EQ(frames_per_latent(c, 0), (std::vector<int>{1, 4, 4}));
  EXPECT_EQ(frames_per_latent(c, 1), (std::vector<int>{4, 4, 4}));
  EXPECT_EQ(frames_per_latent(c, 8), (std::vector<int>{4, 4, 4}));
}

TEST(Layout, GroupsSumToPixelFrames) {
  GenerationConfig c = default_config();
  for (int first : {3, 5, 9, 10}) {
    for (int later : {3, 7, 12}) {
      c.pixel_frames_first_block = first;
      c.pixel_frames_later_block = later;
      for (int b : {0, 1, 5}) {
        const auto groups = frames_per_latent(c, b);
        EXPECT_EQ(std::accumulate(groups.begin(), groups.end(), 0), pixel_frame_count(c, b));
      }
    }
  }
}

TEST(Layout, TotalPixelFrames) {
  for (int B = 1; B <= 12; ++B) {
    GenerationConfig c = default_config();
    c.num_blocks = B;
    EXPECT_EQ(total_pixel_frames(c), 9 + (B - 1) * 12);
  }
  EXPECT_EQ(total_pixel_frames(default_config()), 105);
}

TEST(Layout, ScoredFrameCount) {
  GenerationConfig c = default_config();
  EXPECT_EQ(scored_frame_count(c, 0), 9);
  EXPECT_EQ(scored_frame_count(c, 3), 12);
  c.score_frames = ScoreFrames::Latent;
  EXPECT_EQ(scored_frame_count(c, 0), 3);
  EXPECT_EQ(scored_frame_count(c, 3), 3);
}

TEST(Layout, OutOfRangeBlockIsValidationError) {
  const GenerationConfig c = default_config();
  EXPECT_EQ(kind_of([&] { pixel_frame_count(c, 9); }), ErrorKind::Validation);
  EXPECT_EQ(kind_of([&] { pixel_frame_count(c, -1); }), ErrorKind::Validation);
}

TEST(ConfigFile, RoundTrip) {
  GenerationConfig c = default_config();
  c.num_blocks = 5;
  c.guidance_scale = 2.75;
  c.seed = 123456789012345ULL;
  c.score_frames = ScoreFrames::Latent;
  c.score_forced_rejections = true;
  c.resolution = {640, 360};
  EXPECT_EQ(parse_config(serialize_config(c)), c);
  EXPECT_EQ(parse_config(serialize_config(default_config())), default_config());
}

TEST(ConfigFile, MissingKeysKeepDefaults) {
  const GenerationConfig c = parse_config("# partial\nnum_blocks = 3\n");
  GenerationConfig expected = default_config();
  expected.num_blocks = 3;
  EXPECT_EQ(c, expected);
}

TEST(ConfigFile, Errors) {
  EXPECT_EQ(kind_of([] { parse_config("num_blocks = many\n"); }), ErrorKind::Parse);
  EXPECT_EQ(kind_of([] { parse_config("resolution = 832\n"); }), ErrorKind::Parse);
  EXPECT_EQ(kind_of([] { parse_config("num_blocks = 0\n"); }), ErrorKind::Validation);
  EXPECT_EQ(kind_of([] { parse_config("score_frames = some\n"); }), ErrorKind::Parse);
  EXPECT_EQ(kind_of([] { load_config("/nonexistent/sdvg.conf"); }), ErrorKind::Io);
}

TEST(Enums, RoundTrip) {
  for (auto r : {DecisionReason::AboveThreshold, DecisionReason::BelowThreshold,
                 DecisionReason::ForcedFirstBlock, DecisionReason::RandomPolicy,
                 DecisionReason::AlwaysAccept, DecisionReason::AlwaysReject}) {
    EXPECT_EQ(parse_reason(to_string(r)), r);
  }
  EXPECT_EQ(parse_verdict("accept"), Verdict::Accept);
  EXPECT_EQ(parse_producer("target"), Producer::Target);
  EXPECT_EQ(kind_of([] { parse_verdict("maybe"); }), ErrorKind::Parse);
}

TEST(AcceptRate, ExcludesBlockZero) {
  std::vector<BlockTrace> traces(9);
  for (int b = 0; b < 9; ++b) {
    traces[b].block_index = b;
    traces[b].decision.verdict = (b == 0 || b % 3 == 0) ? Verdict::Accept : Verdict::Reject;
  }
  // Accepted among 1..8: blocks 3 and 6.
  EXPECT_DOUBLE_EQ(accept_rate_excl_block0(traces), 2.0 / 8.0);
  traces.resize(1);
  EXPECT_EQ(accept_rate_excl_block0(traces), 0.0);
}

TEST(Numbers, ShortestRoundTrip) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng) * std::pow(10.0, static_cast<int>(rng() % 20) - 10);
    EXPECT_EQ(parse_double(format_double(x)), x);
  }
  EXPECT_EQ(parse_double("+0.5"), 0.5);
  EXPECT_EQ(kind_of([] { parse_double("0.5x"); }), ErrorKind::Parse);
  EXPECT_EQ(kind_of([] { parse_double(""); }), ErrorKind::Parse);
}

TEST(Errors, BlockIndexInMessage) {
  const Error e(ErrorKind::Generation, "boom", 4);
  EXPECT_EQ(e.block_index(), 4);
  EXPECT_NE(std::string(e.what()).find("block 4"), std::string::npos);
}

TEST(Hashing, StableAndSensitive) {
  EXPECT_EQ(hash_string(42, "prompt-0001"), hash_string(42, "prompt-0001"));
  EXPECT_NE(hash_string(42, "prompt-0001"), hash_string(43, "prompt-0001"));
  EXPECT_NE(hash_combine(1, 2), hash_combine(2, 1));
  Eigen::MatrixXd a = Eigen::MatrixXd::Ones(2, 3);
  Eigen::MatrixXd b = a;
  EXPECT_EQ(digest(a), digest(b));
  b(1, 2) = std::nextafter(1.0, 2.0);
  EXPECT_NE(digest(a), digest(b));
  EXPECT_NE(digest(Eigen::MatrixXd::Ones(3, 2)), digest(a));
  for (std::uint64_t bits : {0ULL, ~0ULL}) {
    const double u = to_unit_open(bits);
    EXPECT_GT(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(KeyValueFile, ParseAndDump) {
  const auto f = KeyValueFile::parse("# c\na = 1\nb=x, y\n\n");
  EXPECT_EQ(f.get("a"), "1");
  EXPECT_EQ(f.get("b"), "x, y");
  EXPECT_EQ(KeyValueFile::parse(f.dump("")).get("b"), "x, y");
  EXPECT_EQ(kind_of([] { KeyValueFile::parse("novalue\n"); }), ErrorKind::Parse);
}
