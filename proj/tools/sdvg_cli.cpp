#include "sdvg/calibration.hpp"
#include "sdvg/engine.hpp"
#include "sdvg/hashing.hpp"
#include "sdvg/json_io.hpp"
#include "sdvg/kvfile.hpp"
#include "sdvg/sweep.hpp"
#include "sdvg/traceio.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace {

enum ExitCode {
  kOk = 0,
  kRuntime = 1,
  kUsage = 2,
  kParse = 3,
  kValidation = 4,
  kCalibration = 5,
  kPareto = 6,
};

int exit_code_for(sdvg::ErrorKind kind) {
  switch (kind) {
    case sdvg::ErrorKind::Parse: return kParse;
    case sdvg::ErrorKind::Validation:
    case sdvg::ErrorKind::Contiguity:
    case sdvg::ErrorKind::Restore: return kValidation;
    case sdvg::ErrorKind::Calibration: return kCalibration;
    case sdvg::ErrorKind::Generation:
    case sdvg::ErrorKind::Io: return kRuntime;
  }
  return kRuntime;
}

struct Common {
  std::string calibration_path;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool ci = false;
  int jobs = 0;
  bool quiet = false;
};

void progress(const Common& common, const std::string& message) {
  if (!common.quiet) std::cerr << message << '\n';
}

sdvg::Calibration resolve_calibration(const Common& common) {
  std::string path = common.calibration_path;
  if (path.empty()) {
    if (const char* env = std::getenv("SDVG_CALIBRATION"); env && *env) path = env;
  }
  if (!path.empty()) {
    progress(common, "loading calibration from " + path);
    return sdvg::load_calibration(path);
  }
  progress(common, "fitting calibration from the bundled reference table");
  return sdvg::fit_calibration(sdvg::builtin_reference_rows()).calibration;
}

sdvg::GenerationConfig resolve_config(const Common& common) {
  sdvg::GenerationConfig config =
      common.config_path.empty() ? sdvg::default_config() : sdvg::load_config(common.config_path);
  if (common.seed) config.seed = *common.seed;
  sdvg::validate(config);
  return config;
}

double parse_tau(const std::string& text) {
  if (text == "inf" || text == "+inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  return sdvg::parse_double(text);
}

std::vector<double> parse_taus(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto first = item.find_first_not_of(' ');
    if (first == std::string::npos) continue;
    out.push_back(sdvg::parse_double(item.substr(first, item.find_last_not_of(' ') - first + 1)));
  }
  if (out.empty()) throw sdvg::Error(sdvg::ErrorKind::Parse, "--taus is empty");
  return out;
}

// Machine output goes to the named file, or stdout when the path is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
  } else {
    sdvg::write_file(path, text);
  }
}

struct FitArgs {
  std::string table;
  std::string out;
  std::string synthesize_table;
};

int run_fit(const Common& common, const FitArgs& args) {
  const auto rows = args.table.empty() ? sdvg::builtin_reference_rows()
                                       : sdvg::parse_reference_table(sdvg::read_file(args.table));
  const sdvg::CalibrationFit fit = sdvg::fit_calibration(rows);
  std::cerr << fit.report();
  emit(args.out, sdvg::serialize_calibration(fit.calibration));
  if (!args.synthesize_table.empty()) {
    sdvg::write_file(args.synthesize_table,
                     sdvg::serialize_reference_table(sdvg::synthesize_table(fit.calibration, rows)));
    progress(common, "wrote synthetic table to " + args.synthesize_table);
  }
  if (!fit.latency_ok()) {
    std::cerr << "error: latency residuals exceed tolerance\n";
    return kCalibration;
  }
  if (!fit.quality_ok()) {
    std::cerr << "error: quality residuals exceed tolerance\n";
    return kCalibration;
  }
  return kOk;
}

struct PolicyArgs {
  std::string policy = "threshold";
  std::string tau = "-0.7";
  bool force_reject_first = false;
  bool no_force_reject_first = false;
  double rate = 0.7;
  std::string aggregation = "min";
};

sdvg::Policy make_policy(const PolicyArgs& args, std::uint64_t seed) {
  if (args.policy == "threshold") {
    return sdvg::ThresholdPolicy{parse_tau(args.tau), !args.no_force_reject_first};
  }
  if (args.policy == "random") {
    if (!(args.rate >= 0.0 && args.rate <= 1.0)) {
      throw sdvg::Error(sdvg::ErrorKind::Validation, "--rate must lie in [0, 1]");
    }
    return sdvg::matched_random_policy(args.rate, sdvg::hash_string(seed, "random"),
                                       args.force_reject_first);
  }
  if (args.policy == "always-accept") return sdvg::AlwaysAcceptPolicy{args.force_reject_first};
  if (args.policy == "always-reject") return sdvg::AlwaysRejectPolicy{};
  throw sdvg::Error(sdvg::ErrorKind::Parse, "unknown policy '" + args.policy + "'");
}

struct SimulateArgs {
  PolicyArgs policy;
  std::string prompt_id = "prompt-0000";
  int n = 1;
  std::string out;
  std::string jsonl;
  std::string export_trace;
};

int run_simulate(const Common& common, const SimulateArgs& args) {
  sdvg::GenerationConfig config = resolve_config(common);
  if (!args.export_trace.empty()) config.score_forced_rejections = true;
  const sdvg::Calibration calibration = resolve_calibration(common);
  const sdvg::Policy policy = make_policy(args.policy, config.seed);
  const auto aggregation = sdvg::parse_aggregation(args.policy.aggregation);

  const sdvg::SyntheticDrafter drafter(config, calibration.quality);
  const sdvg::SyntheticTarget target(config);
  const sdvg::SyntheticDecoder decoder(config);
  const sdvg::SyntheticScorer scorer(config);
  sdvg::RunOptions options;
  options.latency = calibration.latency;
  options.quality = &calibration.proxy;
  options.keep_artifacts = false;

  progress(common, "policy: " + sdvg::describe(policy));
  std::vector<sdvg::RunSummary> summaries;
  for (int p = 0; p < args.n; ++p) {
    std::string id = args.prompt_id;
    if (args.n > 1) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "-%04d", p);
      id += buf;
    }
    const sdvg::PromptSpec prompt{id, "synthetic prompt " + id};
    summaries.push_back(sdvg::run_video(config, prompt, drafter, target, decoder, scorer, policy,
                                        aggregation, options)
                            .summary);
    const auto& s = summaries.back();
    char line[160];
    std::snprintf(line, sizeof line, "%s: accept %.3f  time %.2f s  quality %.4f",
                  s.prompt_id.c_str(), s.accept_rate_excl_block0, s.total_time_s, s.quality_proxy);
    progress(common, line);
  }

  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : summaries) out.push_back(sdvg::to_json(s));
  emit(args.out, (summaries.size() == 1 ? out[0] : out).dump(2) + "\n");
  if (!args.jsonl.empty()) sdvg::append_jsonl(args.jsonl, summaries);
  if (!args.export_trace.empty()) {
    std::string text;
    for (const auto& s : summaries) text += sdvg::serialize_trace(sdvg::export_trace(s));
    sdvg::write_file(args.export_trace, text);
    progress(common, "wrote trace to " + args.export_trace);
  }
  return kOk;
}

struct SweepArgs {
  int n = 1003;
  std::string taus;
  std::string out;
  std::string json;
};

int finish_sweep(const Common& common, const sdvg::SweepSpec& spec, const SweepArgs& args,
                 bool gate_on_pareto) {
  const sdvg::Calibration calibration = resolve_calibration(common);
  progress(common, "running " + std::to_string(spec.arms.size()) + " arms x " +
                       std::to_string(spec.num_prompts) + " prompts");
  const auto rows = sdvg::run_sweep(spec, calibration);
  const auto report = sdvg::pareto_check(rows);
  emit(args.out, sdvg::sweep_csv(rows));
  if (!args.json.empty()) sdvg::write_file(args.json, sdvg::sweep_json(rows, report, spec));
  for (const auto& v : report.violations) std::cerr << "pareto: " << v << '\n';
  if (gate_on_pareto && !report.passed) return kPareto;
  return kOk;
}

int run_sweep_cmd(const Common& common, const SweepArgs& args) {
  const sdvg::GenerationConfig config = resolve_config(common);
  sdvg::SweepSpec spec = sdvg::threshold_sweep_spec(
      args.taus.empty() ? sdvg::default_thresholds() : parse_taus(args.taus), args.n, config.seed);
  spec.config = config;
  spec.jobs = common.jobs;
  return finish_sweep(common, spec, args, true);
}

int run_ablate(const Common& common, const SweepArgs& args) {
  const sdvg::GenerationConfig config = resolve_config(common);
  sdvg::SweepSpec spec = sdvg::ablation_sweep_spec(args.n, config.seed);
  spec.config = config;
  spec.jobs = common.jobs;
  return finish_sweep(common, spec, args, false);
}

struct ReplayArgs {
  std::string trace;
  std::string tau = "-0.7";
  std::string aggregation = "min";
  bool no_force_reject_first = false;
  int num_blocks = 9;
  std::string out;
};

int run_replay(const Common& common, const ReplayArgs& args) {
  std::ifstream in(args.trace);
  if (!in) throw sdvg::Error(sdvg::ErrorKind::Io, "cannot open '" + args.trace + "'");
  const auto records = sdvg::parse_trace(in, args.num_blocks);
  const sdvg::Calibration calibration = resolve_calibration(common);

  sdvg::ReplayOptions options;
  options.tau = parse_tau(args.tau);
  options.aggregation = sdvg::parse_aggregation(args.aggregation);
  options.force_reject_block0 = !args.no_force_reject_first;
  options.latency = calibration.latency;
  options.quality = &calibration.proxy;
  const auto summaries = sdvg::replay(records, options);

  double accept = 0.0;
  double time = 0.0;
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& s : summaries) {
    accept += s.accept_rate_excl_block0;
    time += s.total_time_s;
    runs.push_back(sdvg::to_json(s));
  }
  const double n = static_cast<double>(summaries.size());
  nlohmann::json out;
  out["schema"] = "sdvg-replay/1";
  out["tau"] = std::isfinite(options.tau) ? nlohmann::json(options.tau)
                                          : nlohmann::json(options.tau > 0 ? "inf" : "-inf");
  out["aggregation"] = sdvg::to_string(options.aggregation);
  out["num_prompts"] = summaries.size();
  out["mean_accept_rate"] = n > 0 ? accept / n : 0.0;
  out["mean_time_s"] = n > 0 ? time / n : 0.0;
  out["runs"] = std::move(runs);
  emit(args.out, out.dump(2) + "\n");

  char line[160];
  std::snprintf(line, sizeof line, "replayed %zu prompts: mean accept %.3f, mean time %.2f s",
                summaries.size(), n > 0 ? accept / n : 0.0, n > 0 ? time / n : 0.0);
  progress(common, line);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block-level speculative routing simulator"};
  app.require_subcommand(1, 1);

  Common common;
  std::uint64_t seed = 0;
  app.add_option("--calibration", common.calibration_path,
                 "Calibration file (default: $SDVG_CALIBRATION, else fit the bundled table)");
  app.add_option("--config", common.config_path, "Generation config override file");
  auto* seed_opt = app.add_option("--seed", seed, "Master seed");
  app.add_flag("--ci", common.ci, "CI mode: --seed is mandatory");
  app.add_option("--jobs", common.jobs, "Worker threads (0 = hardware concurrency)")
      ->check(CLI::NonNegativeNumber);
  app.add_flag("-q,--quiet", common.quiet, "No progress output");

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a calibration from a reference table");
  fit_cmd->add_option("--table", fit.table, "Reference table CSV (default: bundled)");
  fit_cmd->add_option("-o,--out", fit.out, "Calibration output file (default: stdout)");
  fit_cmd->add_option("--synthesize-table", fit.synthesize_table,
                      "Also write the table implied by the fitted calibration");

  auto add_policy = [](CLI::App* cmd, PolicyArgs& p) {
    cmd->add_option("--policy", p.policy, "threshold | random | always-accept | always-reject")
        ->check(CLI::IsMember({"threshold", "random", "always-accept", "always-reject"}));
    cmd->add_option("--tau", p.tau, "Threshold (accepts inf / -inf)");
    cmd->add_flag("--force-reject-first", p.force_reject_first,
                  "Force-reject block 0 under random / always-accept");
    cmd->add_flag("--no-force-reject-first", p.no_force_reject_first,
                  "Let the threshold policy score block 0");
    cmd->add_option("--rate", p.rate, "Accept probability for the random policy");
    cmd->add_option("--aggregation", p.aggregation, "min | mean");
  };

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Run the synthetic pipeline on prompts");
  add_policy(sim_cmd, sim.policy);
  sim_cmd->add_option("--prompt-id", sim.prompt_id, "Prompt id (suffixed when --n > 1)");
  sim_cmd->add_option("--n", sim.n, "Number of prompts")->check(CLI::PositiveNumber);
  sim_cmd->add_option("-o,--out", sim.out, "Summary JSON output (default: stdout)");
  sim_cmd->add_option("--jsonl", sim.jsonl, "Append one summary per line to this file");
  sim_cmd->add_option("--export-trace", sim.export_trace, "Write a replayable trace");

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Threshold sweep; exit 6 on a Pareto violation");
  sweep_cmd->add_option("--n", sweep.n, "Prompts per arm")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--taus", sweep.taus, "Comma-separated thresholds");
  sweep_cmd->add_option("-o,--out", sweep.out, "CSV output (default: stdout)");
  sweep_cmd->add_option("--json", sweep.json, "JSON report output");

  SweepArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Ablation arms");
  ablate_cmd->add_option("--n", ablate.n, "Prompts per arm")->check(CLI::PositiveNumber);
  ablate_cmd->add_option("-o,--out", ablate.out, "CSV output (default: stdout)");
  ablate_cmd->add_option("--json", ablate.json, "JSON report output");

  ReplayArgs replay;
  auto* replay_cmd = app.add_subcommand("replay", "Counterfactual replay of a recorded trace");
  replay_cmd->add_option("trace", replay.trace, "Trace file (JSON lines)")->required();
  replay_cmd->add_option("--tau", replay.tau, "Threshold (accepts inf / -inf)");
  replay_cmd->add_option("--aggregation", replay.aggregation, "min | mean");
  replay_cmd->add_flag("--no-force-reject-first", replay.no_force_reject_first,
                       "Let block 0 be routed by its score");
  replay_cmd->add_option("--blocks", replay.num_blocks, "Blocks per video")
      ->check(CLI::PositiveNumber);
  replay_cmd->add_option("-o,--out", replay.out, "Replay JSON output (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  if (*seed_opt) common.seed = seed;
  if (common.ci && !common.seed) {
    std::cerr << "error: --seed is required with --ci\n";
    return kUsage;
  }

  try {
    if (*fit_cmd) return run_fit(common, fit);
    if (*sim_cmd) return run_simulate(common, sim);
    if (*sweep_cmd) return run_sweep_cmd(common, sweep);
    if (*ablate_cmd) return run_ablate(common, ablate);
    if (*replay_cmd) return run_replay(common, replay);
  } catch (const sdvg::Error& e) {
    std::cerr << "error (" << sdvg::to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
