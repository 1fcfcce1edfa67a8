#pragma once

#include "sdvg/core.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>

namespace sdvg {

enum class AggregationMode { MinFrame, MeanFrame };

const char* to_string(AggregationMode mode);
AggregationMode parse_aggregation(const std::string& text);

// Worst-frame (min) or average-frame block score.  Throws on an empty vector
// or non-finite entries.
double aggregate(std::span<const double> scores, AggregationMode mode);
double aggregate(const FrameScoreVector& scores, AggregationMode mode);

struct ThresholdPolicy {
  double tau = -0.7;
  bool force_reject_block0 = true;
};

// Accepts with a fixed probability, independent of the score.  Draws come
// from a counter-based stream keyed by (rng_seed, stream key, block) so the
// policy never touches generator randomness.
struct RandomPolicy {
  double accept_prob = 0.0;
  bool force_reject_block0 = false;
  std::uint64_t rng_seed = 0;
};

struct AlwaysAcceptPolicy {
  bool force_reject_block0 = false;
};

struct AlwaysRejectPolicy {};

using Policy = std::variant<ThresholdPolicy, RandomPolicy, AlwaysAcceptPolicy, AlwaysRejectPolicy>;

Policy default_policy();

// True when block_index is rejected without looking at the score.
bool forces_reject(const Policy& policy, int block_index);

// True when the decision at block_index depends on the block score.
bool requires_score(const Policy& policy, int block_index);

RoutingDecision decide(const Policy& policy, int block_index, std::optional<double> q,
                       std::uint64_t stream_key = 0);

// Random policy with the given per-block accept probability; block 0 is not
// forced unless force_reject_block0 is set.
Policy matched_random_policy(double reference_accept_rate, std::uint64_t seed,
                             bool force_reject_block0 = false);

std::string describe(const Policy& policy);

}  // namespace sdvg
