#pragma once

#include "sdvg/interfaces.hpp"
#include "sdvg/router.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sdvg {

struct QuantileKnot {
  double tau = 0.0;
  double accept_rate = 0.0;
  bool operator==(const QuantileKnot&) const = default;
};

// Distribution of the worst-frame draft score q, described by its survival
// function S(tau) = P(q >= tau).  S is piecewise linear through the knots and
// extended linearly beyond them until it reaches 0 (upper tail) or 1 (lower
// tail).
class DraftQualityModel {
 public:
  DraftQualityModel() = default;
  DraftQualityModel(std::vector<QuantileKnot> knots, double upper_tail_slope,
                    double lower_tail_slope, double mean_gap, std::uint64_t rng_seed);

  double accept_rate(double tau) const;
  // Inverse of accept_rate on (0, 1).
  double tau_for_rate(double rate) const;

  // Knots sorted by decreasing tau (increasing accept rate).
  const std::vector<QuantileKnot>& knots() const { return knots_; }
  double upper_tail_slope() const { return upper_slope_; }
  double lower_tail_slope() const { return lower_slope_; }
  double upper_support() const;
  double lower_support() const;

  // Expected mean-minus-min gap of a block's frame scores.
  double mean_gap() const { return mean_gap_; }
  std::uint64_t rng_seed() const { return rng_seed_; }

  DraftQualityModel with_mean_gap(double gap) const;
  DraftQualityModel with_seed(std::uint64_t seed) const;

  bool operator==(const DraftQualityModel&) const = default;

 private:
  std::vector<QuantileKnot> knots_;
  double upper_slope_ = 0.0;
  double lower_slope_ = 0.0;
  double mean_gap_ = 0.0;
  std::uint64_t rng_seed_ = 0;
};

struct QuantileFitOptions {
  // Default: continue the slope of the adjacent knot segment.
  std::optional<double> upper_tail_slope;
  std::optional<double> lower_tail_slope;
  double mean_gap = 0.0;
  std::uint64_t rng_seed = 0x5d7651a3ULL;
};

// Throws Error(Calibration) unless accept rates strictly increase as tau
// decreases and lie in (0, 1).
DraftQualityModel fit_quantile(std::vector<QuantileKnot> knots,
                               const QuantileFitOptions& options = {});

// Mean gap g such that S(tau - g) matches each observed average-frame accept
// rate, averaged over the rows.
double fit_mean_gap(const DraftQualityModel& model, std::span<const QuantileKnot> mean_frame_rows);

// Per-frame scores for one drafted block: one frame sits exactly at the
// sampled minimum, the others above it by uniform offsets whose mean equals
// the model's mean gap.  Deterministic in (rng_seed, prompt_id, block_index).
FrameScoreVector sample_block_score(const DraftQualityModel& model, std::string_view prompt_id,
                                    int block_index, int frame_count);

// Calibrated quality proxy.  Not a video-quality metric: a curve fit that
// charges each accepted draft block a penalty depending on its worst-frame
// score, plus an anchor penalty when block 0 is accepted.
class QualityProxyModel {
 public:
  QualityProxyModel() = default;
  // penalties[0] applies to q >= breakpoints[0]; penalties[j] to
  // breakpoints[j] <= q < breakpoints[j-1]; the last one below every breakpoint.
  QualityProxyModel(double base_quality, std::vector<double> breakpoints,
                    std::vector<double> penalties, double anchor_penalty);

  double base_quality() const { return base_quality_; }
  const std::vector<double>& breakpoints() const { return breakpoints_; }
  const std::vector<double>& penalties() const { return penalties_; }
  double anchor_penalty() const { return anchor_penalty_; }

  double penalty(double q) const;

  // Uses the worst frame score of every accepted block; throws if an accepted
  // block carries no frame scores.
  double evaluate(const std::vector<BlockTrace>& traces) const;

  // E[penalty(q) ; q >= tau] under the draft score distribution.
  double expected_penalty_above(const DraftQualityModel& dq, double tau) const;
  double expected_threshold_quality(const DraftQualityModel& dq, double tau, int num_blocks) const;
  double expected_random_quality(const DraftQualityModel& dq, double rate, bool force_first,
                                 int num_blocks) const;
  double expected_draft_only_quality(const DraftQualityModel& dq, int num_blocks) const;

  bool operator==(const QualityProxyModel&) const = default;

 private:
  double base_quality_ = 0.0;
  std::vector<double> breakpoints_;
  std::vector<double> penalties_;
  double anchor_penalty_ = 0.0;
};

struct QualityRow {
  std::string label;
  double tau = 0.0;
  double quality = 0.0;
};

struct RandomArmRow {
  std::string label;
  double accept_rate = 0.0;
  double quality = 0.0;
};

struct QualityFitInput {
  double target_only = 0.0;
  double draft_only = 0.0;
  std::vector<QualityRow> threshold_rows;  // worst-frame, block 0 forced
  // Force-reject+random and plain random arms; their quality gap identifies
  // the block-0 anchor penalty.  Optional.
  std::optional<RandomArmRow> forced_random;
  std::optional<RandomArmRow> plain_random;
  int num_blocks = 9;
  double tolerance = 0.0005;
  double random_gap_weight = 0.1;
};

struct QualityResidual {
  std::string label;
  double reported = 0.0;
  double predicted = 0.0;
  bool in_fit = true;
  double residual() const { return predicted - reported; }
};

struct QualityProxyFit {
  QualityProxyModel model;
  std::vector<QualityResidual> residuals;
  double tolerance = 0.0;
  // Largest |residual| over rows that were part of the fit.
  double max_fit_residual() const;
  bool within_tolerance() const { return max_fit_residual() <= tolerance; }
};

// Monotone (non-increasing in q) piecewise-constant penalty fitted by NNLS.
// Throws Error(Calibration) when fewer than three threshold rows are given.
QualityProxyFit fit_quality_proxy(const QualityFitInput& input, const DraftQualityModel& dq);

// ---------------------------------------------------------------------------
// Synthetic generator family.

class SyntheticDrafter final : public GeneratorInterface {
 public:
  // Draft scores are drawn from `quality` reseeded with config.seed.
  SyntheticDrafter(GenerationConfig config, const DraftQualityModel& quality);
  LatentBlock generate(std::uint64_t noise_seed, const KVCache& kv, int block_index,
                       const PromptSpec& prompt) const override;
  Producer cost_class() const override { return Producer::Draft; }

 private:
  GenerationConfig config_;
  DraftQualityModel quality_;
};

class SyntheticTarget final : public GeneratorInterface {
 public:
  explicit SyntheticTarget(GenerationConfig config, double fidelity = 1.5);
  LatentBlock generate(std::uint64_t noise_seed, const KVCache& kv, int block_index,
                       const PromptSpec& prompt) const override;
  Producer cost_class() const override { return Producer::Target; }

 private:
  GenerationConfig config_;
  double fidelity_;
};

class SyntheticDecoder final : public DecoderInterface {
 public:
  explicit SyntheticDecoder(GenerationConfig config);
  DecoderState initial_state() const override;
  DecodedFrames decode(const LatentBlock& latent, DecoderState& state) const override;

 private:
  GenerationConfig config_;
};

// Reads the fidelity plane (last channel) of a frame.
class SyntheticScorer final : public ScorerInterface {
 public:
  explicit SyntheticScorer(GenerationConfig config);
  double score(const Frame& frame, const PromptSpec& prompt) const override;

 private:
  GenerationConfig config_;
};

}  // namespace sdvg
