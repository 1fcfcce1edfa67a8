#include "sdvg/sweep.hpp"

#include "test_support.hpp"

#include "json.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace sdvg;
using sdvg::test_support::builtin_calibration;

namespace {

SweepRow threshold_row(double tau, double accept, double speedup, double quality) {
  SweepRow r;
  r.label = "t" + std::to_string(tau);
  r.tau = tau;
  r.accept_rate = accept;
  r.speedup = speedup;
  r.quality = quality;
  return r;
}

}  // namespace

TEST(Sweep, SpecShapes) {
  const auto sweep = threshold_sweep_spec(default_thresholds(), 10, 42);
  ASSERT_EQ(sweep.arms.size(), 9u);
  EXPECT_EQ(sweep.arms.front().label, "target-only");
  EXPECT_EQ(sweep.arms[1].label, "sdvg(tau=-0.7)");
  EXPECT_EQ(sweep.arms.back().label, "draft-only");

  const auto ablation = ablation_sweep_spec(10, 42);
  std::vector<std::string> labels;
  for (const auto& a : ablation.arms) labels.push_back(a.label);
  EXPECT_EQ(labels, (std::vector<std::string>{"target-only", "sdvg(tau=-0.7)", "avg-frame(tau=-0.2)",
                                              "avg-frame(tau=-0.5)", "avg-frame(tau=-0.7)",
                                              "force-reject+random", "random", "draft-only"}));
}

TEST(Sweep, SinglePromptTargetOnlyHasUnitSpeedup) {
  SweepSpec spec;
  spec.num_prompts = 1;
  spec.arms = {target_only_arm()};
  const auto rows = run_sweep(spec, builtin_calibration());
  ASSERT_EQ(rows.size(), 2u);  // draft-only baseline is appended
  EXPECT_EQ(rows[0].speedup, 1.0);
  EXPECT_EQ(rows[0].accept_rate, 0.0);
  EXPECT_EQ(rows[1].label, "draft-only");
  EXPECT_EQ(rows[1].accept_rate, 1.0);
}

TEST(Sweep, IndependentOfJobCount) {
  auto spec = threshold_sweep_spec({-0.7, -1.5}, 40, 9);
  spec.jobs = 1;
  const auto serial = run_sweep(spec, builtin_calibration());
  spec.jobs = 4;
  EXPECT_EQ(run_sweep(spec, builtin_calibration()), serial);
  EXPECT_EQ(sweep_csv(run_sweep(spec, builtin_calibration())), sweep_csv(serial));
}

TEST(Sweep, AddingArmsDoesNotShiftExistingArms) {
  SweepSpec small;
  small.num_prompts = 30;
  small.arms = {target_only_arm(), random_arm("random", 0.7, false), draft_only_arm()};
  SweepSpec big = small;
  big.arms.insert(big.arms.begin() + 1, random_arm("other", 0.4, true));
  big.arms.insert(big.arms.begin() + 1, threshold_arm(-1.0));
  const auto a = run_sweep(small, builtin_calibration());
  const auto b = run_sweep(big, builtin_calibration());
  auto find = [](const std::vector<SweepRow>& rows, const std::string& label) {
    return *std::find_if(rows.begin(), rows.end(), [&](auto& r) { return r.label == label; });
  };
  EXPECT_EQ(find(a, "random"), find(b, "random"));
  EXPECT_EQ(find(a, "target-only"), find(b, "target-only"));
}

TEST(Sweep, SeedChangesResults) {
  const auto a = run_sweep(threshold_sweep_spec({-0.7}, 20, 1), builtin_calibration());
  const auto b = run_sweep(threshold_sweep_spec({-0.7}, 20, 2), builtin_calibration());
  EXPECT_NE(a[1].accept_rate, b[1].accept_rate);
}

TEST(Sweep, AcceptRatesConvergeToKnots) {
  const auto rows = run_sweep(threshold_sweep_spec({-0.7, -1.5, -2.5}, 400, 42), builtin_calibration());
  const auto& q = builtin_calibration().quality;
  for (const auto& r : rows) {
    if (!r.tau) continue;
    const double se = std::sqrt(q.accept_rate(*r.tau) * (1 - q.accept_rate(*r.tau)) / (400.0 * 8));
    EXPECT_NEAR(r.accept_rate, q.accept_rate(*r.tau), 4.0 * se) << r.label;
    EXPECT_NEAR(r.accept_rate_stderr, se, 0.3 * se) << r.label;
  }
}

TEST(Sweep, RandomRoutingBelowThresholdAtMatchedRate) {
  SweepSpec spec;
  spec.num_prompts = 300;
  spec.arms = {target_only_arm(), threshold_arm(-0.7), random_arm("random", 0.7, false),
               draft_only_arm()};
  const auto rows = run_sweep(spec, builtin_calibration());
  EXPECT_LT(rows[2].quality, rows[1].quality);
}

TEST(Pareto, ReferenceRowsPass) {
  const auto rows = rows_from_reference(builtin_reference_rows(), "main");
  EXPECT_EQ(rows.size(), 9u);
  const auto report = pareto_check(rows);
  EXPECT_TRUE(report.passed);
  for (const auto& v : report.violations) ADD_FAILURE() << v;
}

TEST(Pareto, AblationAggregationsCheckedSeparately) {
  EXPECT_TRUE(pareto_check(rows_from_reference(builtin_reference_rows(), "ablation")).passed);
}

TEST(Pareto, SingleRowPasses) {
  EXPECT_TRUE(pareto_check({threshold_row(-0.7, 0.7, 1.5, 0.07)}).passed);
  EXPECT_TRUE(pareto_check({}).passed);
}

TEST(Pareto, FlagsViolations) {
  const std::vector<SweepRow> rows{threshold_row(-0.7, 0.73, 1.59, 0.0773),
                                   threshold_row(-1.0, 0.72, 1.69, 0.0764),
                                   threshold_row(-1.5, 0.83, 1.60, 0.0757),
                                   threshold_row(-2.0, 0.87, 2.05, 0.0790)};
  const auto report = pareto_check(rows);
  EXPECT_FALSE(report.passed);
  EXPECT_EQ(report.violations.size(), 3u);
}

TEST(Pareto, OrderIndependent) {
  std::mt19937_64 rng(3);
  auto rows = rows_from_reference(builtin_reference_rows(), "main");
  rows.push_back(threshold_row(-3.0, 0.5, 1.0, 0.07));  // breaks monotonicity
  const bool sorted_verdict = pareto_check(rows).passed;
  EXPECT_FALSE(sorted_verdict);
  for (int i = 0; i < 20; ++i) {
    std::shuffle(rows.begin(), rows.end(), rng);
    EXPECT_EQ(pareto_check(rows).passed, sorted_verdict);
    EXPECT_EQ(pareto_check(rows).violations.size(), 2u);
  }
}

TEST(Output, CsvAndJson) {
  auto spec = threshold_sweep_spec({-0.7}, 3, 42);
  const auto rows = run_sweep(spec, builtin_calibration());
  const std::string csv = sweep_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "label,quality,time_s,speedup,accept_rate");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);

  const auto j = nlohmann::json::parse(sweep_json(rows, pareto_check(rows), spec));
  EXPECT_EQ(j.at("schema"), "sdvg-sweep/1");
  EXPECT_EQ(j.at("rows").size(), 3u);
  EXPECT_EQ(j.at("rows")[1].at("label"), "sdvg(tau=-0.7)");
}

TEST(Sweep, Validation) {
  SweepSpec spec = threshold_sweep_spec({-0.7}, 0, 42);
  EXPECT_THROW(run_sweep(spec, builtin_calibration()), Error);
  spec.num_prompts = 1;
  spec.arms.clear();
  EXPECT_THROW(run_sweep(spec, builtin_calibration()), Error);
}
