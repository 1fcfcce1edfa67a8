#include "sdvg/router.hpp"

#include "sdvg/hashing.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace sdvg {

const char* to_string(AggregationMode mode) {
  return mode == AggregationMode::MinFrame ? "min" : "mean";
}

AggregationMode parse_aggregation(const std::string& text) {
  if (text == "min" || text == "min-frame") return AggregationMode::MinFrame;
  if (text == "mean" || text == "avg" || text == "avg-frame") return AggregationMode::MeanFrame;
  throw Error(ErrorKind::Parse, "unknown aggregation '" + text + "'");
}

double aggregate(std::span<const double> scores, AggregationMode mode) {
  if (scores.empty()) throw Error(ErrorKind::Validation, "cannot aggregate an empty score vector");
  for (double s : scores) {
    if (!std::isfinite(s)) throw Error(ErrorKind::Validation, "non-finite frame score");
  }
  const Eigen::Map<const Eigen::ArrayXd> v(scores.data(), static_cast<Eigen::Index>(scores.size()));
  return mode == AggregationMode::MinFrame ? v.minCoeff() : v.mean();
}

double aggregate(const FrameScoreVector& scores, AggregationMode mode) {
  return aggregate(std::span<const double>(scores.scores), mode);
}

Policy default_policy() { return ThresholdPolicy{}; }

bool forces_reject(const Policy& policy, int block_index) {
  return std::visit(
      [&](const auto& p) -> bool {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, AlwaysRejectPolicy>) {
          return true;
        } else {
          return p.force_reject_block0 && block_index == 0;
        }
      },
      policy);
}

bool requires_score(const Policy& policy, int block_index) {
  return std::holds_alternative<ThresholdPolicy>(policy) && !forces_reject(policy, block_index);
}

RoutingDecision decide(const Policy& policy, int block_index, std::optional<double> q,
                       std::uint64_t stream_key) {
  if (forces_reject(policy, block_index)) {
    return std::holds_alternative<AlwaysRejectPolicy>(policy)
               ? RoutingDecision{Verdict::Reject, DecisionReason::AlwaysReject}
               : RoutingDecision{Verdict::Reject, DecisionReason::ForcedFirstBlock};
  }
  return std::visit(
      [&](const auto& p) -> RoutingDecision {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, ThresholdPolicy>) {
          if (!q) {
            throw Error(ErrorKind::Validation, "threshold policy needs a block score",
                        block_index);
          }
          return *q >= p.tau ? RoutingDecision{Verdict::Accept, DecisionReason::AboveThreshold}
                             : RoutingDecision{Verdict::Reject, DecisionReason::BelowThreshold};
        } else if constexpr (std::is_same_v<P, RandomPolicy>) {
          const std::uint64_t key = hash_combine(hash_combine(p.rng_seed, stream_key),
                                                 static_cast<std::uint64_t>(block_index));
          const bool accept = to_unit_open(key) < p.accept_prob;
          return {accept ? Verdict::Accept : Verdict::Reject, DecisionReason::RandomPolicy};
        } else if constexpr (std::is_same_v<P, AlwaysAcceptPolicy>) {
          return {Verdict::Accept, DecisionReason::AlwaysAccept};
        } else {
          return {Verdict::Reject, DecisionReason::AlwaysReject};
        }
      },
      policy);
}

Policy matched_random_policy(double reference_accept_rate, std::uint64_t seed,
                             bool force_reject_block0) {
  if (!(reference_accept_rate >= 0.0 && reference_accept_rate <= 1.0)) {
    throw Error(ErrorKind::Validation, "accept rate must lie in [0, 1]");
  }
  return RandomPolicy{reference_accept_rate, force_reject_block0, seed};
}

std::string describe(const Policy& policy) {
  std::ostringstream out;
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, ThresholdPolicy>) {
          out << "threshold(tau=" << format_double(p.tau)
              << (p.force_reject_block0 ? ", force-reject-first" : "") << ")";
        } else if constexpr (std::is_same_v<P, RandomPolicy>) {
          out << "random(rate=" << format_double(p.accept_prob)
              << (p.force_reject_block0 ? ", force-reject-first" : "") << ")";
        } else if constexpr (std::is_same_v<P, AlwaysAcceptPolicy>) {
          out << "always-accept" << (p.force_reject_block0 ? "(force-reject-first)" : "");
        } else {
          out << "always-reject";
        }
      },
      policy);
  return out.str();
}

}  // namespace sdvg
