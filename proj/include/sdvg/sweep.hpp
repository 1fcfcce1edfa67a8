#pragma once

#include "sdvg/calibration.hpp"
#include "sdvg/router.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sdvg {

struct SweepArm {
  std::string label;
  RowKind kind = RowKind::Threshold;
  Policy policy;
  AggregationMode aggregation = AggregationMode::MinFrame;
  std::optional<double> tau;
};

struct SweepSpec {
  std::vector<SweepArm> arms;
  int num_prompts = 1003;
  std::uint64_t seed = 42;
  GenerationConfig config = default_config();
  // Worker threads; 0 picks the hardware concurrency.
  int jobs = 0;
};

SweepArm target_only_arm();
SweepArm draft_only_arm();
SweepArm threshold_arm(double tau, AggregationMode aggregation = AggregationMode::MinFrame);
SweepArm random_arm(const std::string& label, double rate, bool force_reject_block0);

std::vector<double> default_thresholds();

// Both baselines plus one worst-frame threshold arm per tau.
SweepSpec threshold_sweep_spec(const std::vector<double>& thresholds, int num_prompts,
                               std::uint64_t seed);

// Worst-frame default, three average-frame arms, force-reject+random and
// plain random at matched rates, both baselines.
SweepSpec ablation_sweep_spec(int num_prompts, std::uint64_t seed, double forced_random_rate = 0.703,
                              double plain_random_rate = 0.700);

struct SweepRow {
  std::string label;
  RowKind kind = RowKind::Threshold;
  AggregationMode aggregation = AggregationMode::MinFrame;
  std::optional<double> tau;
  double quality = 0.0;
  double time_s = 0.0;
  double speedup = 0.0;
  double accept_rate = 0.0;
  // Standard error of accept_rate across all scored blocks 1..B-1.
  double accept_rate_stderr = 0.0;

  bool operator==(const SweepRow&) const = default;
};

// One row per arm (baselines added when missing), in arm order.  Random arms
// get rng seeds derived from (spec.seed, label).  Results are reduced in
// prompt order and do not depend on the number of jobs.
std::vector<SweepRow> run_sweep(const SweepSpec& spec, const Calibration& calibration);

struct ParetoReport {
  bool passed = true;
  std::vector<std::string> violations;
};

// Along decreasing tau, within each aggregation mode: accept rate and speedup
// must not decrease, quality must not increase by more than the tolerance.
ParetoReport pareto_check(const std::vector<SweepRow>& rows, double quality_tolerance = 0.001);

std::vector<SweepRow> rows_from_reference(const std::vector<ReferenceRow>& rows,
                                          const std::string& table);

// CSV header: label,quality,time_s,speedup,accept_rate
std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string sweep_json(const std::vector<SweepRow>& rows, const ParetoReport& report,
                       const SweepSpec& spec);

}  // namespace sdvg
