#include "sdvg/costmodel.hpp"

#include "sdvg/nnls.hpp"

#include <algorithm>
#include <cmath>

namespace sdvg {

const char* to_string(OverlapMode mode) {
  return mode == OverlapMode::ScoringOverlapped ? "scoring_overlapped" : "fully_sequential";
}

OverlapMode parse_overlap_mode(const std::string& text) {
  if (text == "scoring_overlapped") return OverlapMode::ScoringOverlapped;
  if (text == "fully_sequential") return OverlapMode::FullySequential;
  throw Error(ErrorKind::Parse, "unknown overlap mode '" + text + "'");
}

void validate(const LatencyParams& p) {
  for (double v : {p.c_draft, p.c_target, p.c_decode, p.c_score, p.score_residue}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw Error(ErrorKind::Validation, "latency parameters must be finite and non-negative");
    }
  }
}

BlockCharge charge(const LatencyParams& params, const RoutingDecision& decision, bool scored) {
  BlockCharge c;
  if (decision.reason != DecisionReason::AlwaysReject) {
    c.draft = params.c_draft;
    c.decode = params.c_decode;
  }
  if (scored) c.score = params.c_score;
  if (decision.verdict == Verdict::Reject) c.target = params.c_target;
  return c;
}

double simulate_time(const std::vector<BlockTrace>& trace, const LatencyParams& params,
                     int expected_blocks) {
  if (trace.empty()) throw Error(ErrorKind::Validation, "empty block trace");
  if (expected_blocks >= 0 && static_cast<int>(trace.size()) != expected_blocks) {
    throw Error(ErrorKind::Validation, "incomplete trace: " + std::to_string(trace.size()) +
                                           " of " + std::to_string(expected_blocks) + " blocks");
  }
  double total = 0.0;
  const double factor = params.overlap_factor();
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const BlockTrace& t = trace[i];
    if (t.block_index != static_cast<int>(i)) {
      throw Error(ErrorKind::Validation, "incomplete trace: expected block " + std::to_string(i));
    }
    total += t.draft_time_s + t.decode_time_s + t.target_time_s + factor * t.score_time_s;
  }
  return total;
}

double speedup(double t, double t_target_only) {
  if (!(t > 0.0) || !(t_target_only > 0.0)) {
    throw Error(ErrorKind::Validation, "speedup needs positive times");
  }
  return t_target_only / t;
}

namespace {

// Expected (draft-path blocks, scored blocks, target blocks) per video.
Eigen::Vector3d expected_counts(const LatencyObservation& row) {
  const double B = row.num_blocks;
  switch (row.kind) {
    case RunKind::TargetOnly:
      return {0.0, 0.0, B};
    case RunKind::DraftOnly:
      return {B, B, 0.0};
    case RunKind::Speculative: {
      const double rejected_later = (B - 1.0) * (1.0 - row.accept_rate);
      if (row.force_reject_block0) return {B, B - 1.0, 1.0 + rejected_later};
      return {B, B, (1.0 - row.accept_rate) + rejected_later};
    }
  }
  return Eigen::Vector3d::Zero();
}

}  // namespace

double predict_time(const LatencyParams& p, const LatencyObservation& row) {
  const Eigen::Vector3d n = expected_counts(row);
  return n(0) * p.draft_path() + n(1) * p.c_score * p.overlap_factor() + n(2) * p.c_target;
}

double LatencyFit::max_relative_error() const {
  double worst = 0.0;
  for (const auto& r : residuals) worst = std::max(worst, std::abs(r.relative_error));
  return worst;
}

LatencyFit fit_latencies(const std::vector<LatencyObservation>& rows,
                         const LatencyFitOptions& options) {
  const bool has_target = std::any_of(rows.begin(), rows.end(), [](const auto& r) {
    return r.kind == RunKind::TargetOnly;
  });
  const bool has_draft = std::any_of(rows.begin(), rows.end(), [](const auto& r) {
    return r.kind == RunKind::DraftOnly;
  });
  if (rows.size() < 4 || !has_target || !has_draft) {
    throw Error(ErrorKind::Calibration,
                "latency fit needs >= 4 rows including target-only and draft-only baselines");
  }
  if (!(options.decode_share >= 0.0 && options.decode_share <= 1.0)) {
    throw Error(ErrorKind::Calibration, "decode_share must lie in [0, 1]");
  }

  const double score_factor =
      options.overlap_mode == OverlapMode::FullySequential ? 1.0 : options.score_residue;
  const auto m = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd A(m, 2);
  Eigen::VectorXd b(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    const Eigen::Vector3d n = expected_counts(row);
    A(i, 0) = n(0);
    A(i, 1) = n(2);
    // Scoring cost is a prior, not a fitted quantity.
    b(i) = row.time_s - n(1) * options.score_cost_s * score_factor;
  }
  const auto solved = nnls(A, b);
  if (!solved.converged || solved.x.isZero(0.0)) {
    throw Error(ErrorKind::Calibration, "latency fit is infeasible (all-zero solution)");
  }

  LatencyFit fit;
  fit.params.c_draft = solved.x(0) * (1.0 - options.decode_share);
  fit.params.c_decode = solved.x(0) * options.decode_share;
  fit.params.c_target = solved.x(1);
  fit.params.c_score = options.score_cost_s;
  fit.params.overlap_mode = options.overlap_mode;
  fit.params.score_residue = options.score_residue;

  for (const auto& row : rows) {
    const double predicted = predict_time(fit.params, row);
    fit.residuals.push_back(
        {row.label, row.time_s, predicted, (predicted - row.time_s) / row.time_s});
  }
  return fit;
}

}  // namespace sdvg
