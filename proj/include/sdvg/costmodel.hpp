#pragma once

#include "sdvg/core.hpp"

#include <string>
#include <vector>

namespace sdvg {

enum class OverlapMode { ScoringOverlapped, FullySequential };

const char* to_string(OverlapMode mode);
OverlapMode parse_overlap_mode(const std::string& text);

// Simulated per-block costs in seconds.  c_target covers the target forward
// pass plus decoding the regenerated block for emission.
struct LatencyParams {
  double c_draft = 0.0;
  double c_target = 0.0;
  double c_decode = 0.0;
  double c_score = 0.0;
  OverlapMode overlap_mode = OverlapMode::ScoringOverlapped;
  // Share of scoring time that cannot be hidden behind denoising when scoring
  // runs on a separate device.
  double score_residue = 0.0;

  bool operator==(const LatencyParams&) const = default;

  double overlap_factor() const {
    return overlap_mode == OverlapMode::FullySequential ? 1.0 : score_residue;
  }
  double draft_path() const { return c_draft + c_decode; }
};

void validate(const LatencyParams& params);

struct BlockCharge {
  double draft = 0.0;
  double decode = 0.0;
  double score = 0.0;
  double target = 0.0;
};

// Costs incurred by one block.  Under AlwaysReject the draft is never
// consulted, so only the target is charged.
BlockCharge charge(const LatencyParams& params, const RoutingDecision& decision, bool scored);

// Sum of block costs with scoring scaled by the overlap factor.  Throws when
// the trace is empty, non-contiguous or (if given) shorter than expected_blocks.
double simulate_time(const std::vector<BlockTrace>& trace, const LatencyParams& params,
                     int expected_blocks = -1);

double speedup(double t, double t_target_only);

enum class RunKind { TargetOnly, DraftOnly, Speculative };

struct LatencyObservation {
  std::string label;
  RunKind kind = RunKind::Speculative;
  double accept_rate = 0.0;  // excl. block 0; speculative rows only
  double time_s = 0.0;
  int num_blocks = 9;
  bool force_reject_block0 = true;
};

// Expected per-video time for a run of the given kind and accept rate.
double predict_time(const LatencyParams& params, const LatencyObservation& row);

struct LatencyFitOptions {
  // Neither split is identifiable from per-video totals; both are priors.
  double decode_share = 0.35;  // fraction of the draft path spent decoding
  double score_cost_s = 0.25;
  OverlapMode overlap_mode = OverlapMode::ScoringOverlapped;
  double score_residue = 0.0;
};

struct LatencyResidual {
  std::string label;
  double measured_s = 0.0;
  double predicted_s = 0.0;
  double relative_error = 0.0;
};

struct LatencyFit {
  LatencyParams params;
  std::vector<LatencyResidual> residuals;
  double max_relative_error() const;
};

// Non-negative least squares over (draft path, target) costs.  Needs at least
// four rows including both baselines.
LatencyFit fit_latencies(const std::vector<LatencyObservation>& rows,
                         const LatencyFitOptions& options = {});

}  // namespace sdvg
