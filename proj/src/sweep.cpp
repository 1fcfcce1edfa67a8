#include "sdvg/sweep.hpp"

#include "sdvg/engine.hpp"
#include "sdvg/hashing.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

namespace sdvg {

namespace {

std::string tau_label(double tau) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", tau);
  return buf;
}

struct PromptResult {
  double quality = 0.0;
  double time_s = 0.0;
  int accepted = 0;
  int counted = 0;
};

}  // namespace

SweepArm target_only_arm() {
  return {"target-only", RowKind::TargetOnly, AlwaysRejectPolicy{}, AggregationMode::MinFrame, {}};
}

SweepArm draft_only_arm() {
  return {"draft-only", RowKind::DraftOnly, AlwaysAcceptPolicy{false}, AggregationMode::MinFrame, {}};
}

SweepArm threshold_arm(double tau, AggregationMode aggregation) {
  const std::string prefix = aggregation == AggregationMode::MinFrame ? "sdvg" : "avg-frame";
  return {prefix + "(tau=" + tau_label(tau) + ")", RowKind::Threshold,
          ThresholdPolicy{tau, true}, aggregation, tau};
}

SweepArm random_arm(const std::string& label, double rate, bool force_reject_block0) {
  return {label, force_reject_block0 ? RowKind::ForcedRandom : RowKind::Random,
          matched_random_policy(rate, 0, force_reject_block0), AggregationMode::MinFrame, {}};
}

std::vector<double> default_thresholds() { return {-0.7, -0.8, -0.9, -1.0, -1.5, -2.0, -2.5}; }

SweepSpec threshold_sweep_spec(const std::vector<double>& thresholds, int num_prompts,
                               std::uint64_t seed) {
  SweepSpec spec;
  spec.num_prompts = num_prompts;
  spec.seed = seed;
  spec.config.seed = seed;
  spec.arms.push_back(target_only_arm());
  for (double tau : thresholds) spec.arms.push_back(threshold_arm(tau));
  spec.arms.push_back(draft_only_arm());
  return spec;
}

SweepSpec ablation_sweep_spec(int num_prompts, std::uint64_t seed, double forced_random_rate,
                              double plain_random_rate) {
  SweepSpec spec;
  spec.num_prompts = num_prompts;
  spec.seed = seed;
  spec.config.seed = seed;
  spec.arms.push_back(target_only_arm());
  spec.arms.push_back(threshold_arm(-0.7));
  for (double tau : {-0.2, -0.5, -0.7}) {
    spec.arms.push_back(threshold_arm(tau, AggregationMode::MeanFrame));
  }
  spec.arms.push_back(random_arm("force-reject+random", forced_random_rate, true));
  spec.arms.push_back(random_arm("random", plain_random_rate, false));
  spec.arms.push_back(draft_only_arm());
  return spec;
}

std::vector<SweepRow> run_sweep(const SweepSpec& spec, const Calibration& calibration) {
  if (spec.num_prompts < 1) throw Error(ErrorKind::Validation, "num_prompts must be >= 1");
  if (spec.arms.empty()) throw Error(ErrorKind::Validation, "sweep has no arms");
  GenerationConfig config = spec.config;
  config.seed = spec.seed;
  validate(config);

  std::vector<SweepArm> arms = spec.arms;
  auto has_kind = [&](RowKind k) {
    return std::any_of(arms.begin(), arms.end(), [&](const SweepArm& a) { return a.kind == k; });
  };
  if (!has_kind(RowKind::TargetOnly)) arms.insert(arms.begin(), target_only_arm());
  if (!has_kind(RowKind::DraftOnly)) arms.push_back(draft_only_arm());
  for (auto& arm : arms) {
    if (auto* random = std::get_if<RandomPolicy>(&arm.policy)) {
      random->rng_seed = hash_string(spec.seed, arm.label);
    }
  }

  const SyntheticDrafter drafter(config, calibration.quality);
  const SyntheticTarget target(config);
  const SyntheticDecoder decoder(config);
  const SyntheticScorer scorer(config);
  RunOptions options;
  options.latency = calibration.latency;
  options.quality = &calibration.proxy;
  options.keep_artifacts = false;

  const std::size_t num_arms = arms.size();
  const auto num_prompts = static_cast<std::size_t>(spec.num_prompts);
  std::vector<PromptResult> results(num_arms * num_prompts);

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t task = next.fetch_add(1);
      if (task >= results.size()) return;
      const std::size_t arm = task / num_prompts;
      const std::size_t p = task % num_prompts;
      try {
        char id[32];
        std::snprintf(id, sizeof id, "prompt-%04zu", p);
        const PromptSpec prompt{id, std::string("synthetic prompt ") + id};
        const VideoRun run = run_video(config, prompt, drafter, target, decoder, scorer,
                                       arms[arm].policy, arms[arm].aggregation, options);
        PromptResult& r = results[task];
        r.quality = run.summary.quality_proxy;
        r.time_s = run.summary.total_time_s;
        for (std::size_t b = 1; b < run.summary.block_traces.size(); ++b) {
          r.accepted += run.summary.block_traces[b].decision.accepted() ? 1 : 0;
          r.counted += 1;
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(results.size());
      }
    }
  };

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t jobs =
      std::min<std::size_t>(spec.jobs > 0 ? static_cast<std::size_t>(spec.jobs) : hw, results.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t i = 1; i < jobs; ++i) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<SweepRow> rows;
  for (std::size_t a = 0; a < num_arms; ++a) {
    SweepRow row;
    row.label = arms[a].label;
    row.kind = arms[a].kind;
    row.aggregation = arms[a].aggregation;
    row.tau = arms[a].tau;
    long accepted = 0;
    long counted = 0;
    double quality = 0.0;
    double time = 0.0;
    for (std::size_t p = 0; p < num_prompts; ++p) {
      const PromptResult& r = results[a * num_prompts + p];
      quality += r.quality;
      time += r.time_s;
      accepted += r.accepted;
      counted += r.counted;
    }
    row.quality = quality / static_cast<double>(num_prompts);
    row.time_s = time / static_cast<double>(num_prompts);
    if (counted > 0) {
      row.accept_rate = static_cast<double>(accepted) / static_cast<double>(counted);
      row.accept_rate_stderr =
          std::sqrt(row.accept_rate * (1.0 - row.accept_rate) / static_cast<double>(counted));
    }
    rows.push_back(row);
  }
  const auto target_row = std::find_if(rows.begin(), rows.end(), [](const SweepRow& r) {
    return r.kind == RowKind::TargetOnly;
  });
  const double t_target = target_row->time_s;
  for (auto& row : rows) row.speedup = speedup(row.time_s, t_target);
  return rows;
}

ParetoReport pareto_check(const std::vector<SweepRow>& rows, double quality_tolerance) {
  ParetoReport report;
  std::map<AggregationMode, std::vector<const SweepRow*>> groups;
  for (const auto& r : rows) {
    if (r.kind == RowKind::Threshold && r.tau) groups[r.aggregation].push_back(&r);
  }
  for (auto& [mode, group] : groups) {
    std::sort(group.begin(), group.end(), [](const SweepRow* a, const SweepRow* b) {
      if (*a->tau != *b->tau) return *a->tau > *b->tau;
      return a->label < b->label;
    });
    for (std::size_t i = 1; i < group.size(); ++i) {
      const SweepRow& prev = *group[i - 1];
      const SweepRow& cur = *group[i];
      const std::string where = std::string(to_string(mode)) + " tau " +
                                format_double(*prev.tau) + " -> " + format_double(*cur.tau);
      if (cur.accept_rate < prev.accept_rate) {
        report.violations.push_back(where + ": accept rate decreased");
      }
      if (cur.speedup < prev.speedup) report.violations.push_back(where + ": speedup decreased");
      if (cur.quality > prev.quality + quality_tolerance) {
        report.violations.push_back(where + ": quality increased beyond tolerance");
      }
    }
  }
  report.passed = report.violations.empty();
  return report;
}

std::vector<SweepRow> rows_from_reference(const std::vector<ReferenceRow>& rows,
                                          const std::string& table) {
  std::vector<SweepRow> out;
  for (const auto& r : rows) {
    if (r.table != table) continue;
    SweepRow row;
    row.label = r.label;
    row.kind = r.kind;
    row.aggregation = r.aggregation;
    row.tau = r.tau;
    row.quality = r.quality;
    row.time_s = r.time_s;
    row.speedup = r.speedup.value_or(0.0);
    row.accept_rate = r.accept_rate.value_or(0.0);
    out.push_back(row);
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "label,quality,time_s,speedup,accept_rate\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.3f,%.4f,%.4f\n", r.label.c_str(), r.quality,
                  r.time_s, r.speedup, r.accept_rate);
    out += buf;
  }
  return out;
}

std::string sweep_json(const std::vector<SweepRow>& rows, const ParetoReport& report,
                       const SweepSpec& spec) {
  nlohmann::json j;
  j["schema"] = "sdvg-sweep/1";
  j["num_prompts"] = spec.num_prompts;
  j["seed"] = spec.seed;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row{{"label", r.label},
                       {"kind", to_string(r.kind)},
                       {"aggregation", to_string(r.aggregation)},
                       {"quality", r.quality},
                       {"time_s", r.time_s},
                       {"speedup", r.speedup},
                       {"accept_rate", r.accept_rate},
                       {"accept_rate_stderr", r.accept_rate_stderr}};
    row["tau"] = r.tau ? nlohmann::json(*r.tau) : nlohmann::json(nullptr);
    j["rows"].push_back(std::move(row));
  }
  j["pareto"] = {{"passed", report.passed}, {"violations", report.violations}};
  return j.dump(2) + "\n";
}

}  // namespace sdvg
