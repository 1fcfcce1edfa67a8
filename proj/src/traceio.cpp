#include "sdvg/traceio.hpp"

#include "sdvg/json_io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace sdvg {

namespace {

std::optional<double> optional_time(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  const auto& v = j.at(key);
  if (!v.is_number()) throw Error(ErrorKind::Validation, std::string(key) + " must be a number");
  const double t = v.get<double>();
  if (!(t >= 0.0) || !std::isfinite(t)) {
    throw Error(ErrorKind::Validation, std::string(key) + " must be finite and non-negative");
  }
  return t;
}

}  // namespace

ExternalTraceRecord parse_trace_line(const std::string& line, int line_number, int num_blocks) {
  const std::string where = "trace line " + std::to_string(line_number) + ": ";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, where + "malformed JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw Error(ErrorKind::Parse, where + "record must be a JSON object");
  try {
    ExternalTraceRecord r;
    if (!j.contains("prompt_id") || !j.at("prompt_id").is_string()) {
      throw Error(ErrorKind::Validation, "prompt_id must be a string");
    }
    r.prompt_id = j.at("prompt_id").get<std::string>();
    if (!j.contains("block_index") || !j.at("block_index").is_number_integer()) {
      throw Error(ErrorKind::Validation, "block_index must be an integer");
    }
    const auto b = j.at("block_index").get<long long>();
    if (b < 0 || b >= num_blocks) {
      throw Error(ErrorKind::Validation, "block_index " + std::to_string(b) + " outside [0, " +
                                             std::to_string(num_blocks) + ")");
    }
    r.block_index = static_cast<int>(b);
    if (!j.contains("frame_scores") || !j.at("frame_scores").is_array()) {
      throw Error(ErrorKind::Validation, "frame_scores must be an array");
    }
    for (const auto& s : j.at("frame_scores")) {
      if (!s.is_number() || !std::isfinite(s.get<double>())) {
        throw Error(ErrorKind::Validation, "frame_scores entries must be finite numbers");
      }
      r.frame_scores.push_back(s.get<double>());
    }
    if (r.frame_scores.empty()) throw Error(ErrorKind::Validation, "frame_scores is empty");
    r.draft_time_s = optional_time(j, "draft_time_s");
    r.target_time_s = optional_time(j, "target_time_s");
    r.decode_time_s = optional_time(j, "decode_time_s");
    r.score_time_s = optional_time(j, "score_time_s");
    if (j.contains("producer_observed") && !j.at("producer_observed").is_null()) {
      r.producer_observed = parse_producer(j.at("producer_observed").get<std::string>());
    }
    return r;
  } catch (const Error& e) {
    throw Error(e.kind(), where + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Validation, where + e.what());
  }
}

std::vector<ExternalTraceRecord> parse_trace(std::istream& in, int num_blocks) {
  std::vector<ExternalTraceRecord> records;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    records.push_back(parse_trace_line(line, line_number, num_blocks));
  }
  return records;
}

std::vector<ExternalTraceRecord> parse_trace(const std::string& text, int num_blocks) {
  std::istringstream in(text);
  return parse_trace(in, num_blocks);
}

std::string serialize_record(const ExternalTraceRecord& r) {
  nlohmann::json j;
  j["prompt_id"] = r.prompt_id;
  j["block_index"] = r.block_index;
  j["frame_scores"] = r.frame_scores;
  if (r.draft_time_s) j["draft_time_s"] = *r.draft_time_s;
  if (r.target_time_s) j["target_time_s"] = *r.target_time_s;
  if (r.decode_time_s) j["decode_time_s"] = *r.decode_time_s;
  if (r.score_time_s) j["score_time_s"] = *r.score_time_s;
  if (r.producer_observed) j["producer_observed"] = to_string(*r.producer_observed);
  return j.dump();
}

std::string serialize_trace(const std::vector<ExternalTraceRecord>& records) {
  std::string out;
  for (const auto& r : records) out += serialize_record(r) + "\n";
  return out;
}

std::vector<ExternalTraceRecord> export_trace(const RunSummary& summary) {
  std::vector<ExternalTraceRecord> out;
  for (const auto& t : summary.block_traces) {
    if (!t.frame_scores) {
      throw Error(ErrorKind::Validation,
                  "block was not scored; export needs score_forced_rejections", t.block_index);
    }
    ExternalTraceRecord r;
    r.prompt_id = summary.prompt_id;
    r.block_index = t.block_index;
    r.frame_scores = t.frame_scores->scores;
    r.draft_time_s = t.draft_time_s;
    r.decode_time_s = t.decode_time_s;
    r.score_time_s = t.score_time_s;
    if (!t.decision.accepted()) r.target_time_s = t.target_time_s;
    r.producer_observed = t.decision.accepted() ? Producer::Draft : Producer::Target;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RunSummary> replay(const std::vector<ExternalTraceRecord>& records,
                               const ReplayOptions& options) {
  validate(options.latency);
  const Policy policy = options.tau == std::numeric_limits<double>::infinity()
                            ? Policy{AlwaysRejectPolicy{}}
                            : Policy{ThresholdPolicy{options.tau, options.force_reject_block0}};

  std::vector<std::string> order;
  std::map<std::string, std::map<int, const ExternalTraceRecord*>> by_prompt;
  for (const auto& r : records) {
    auto [it, inserted] = by_prompt.try_emplace(r.prompt_id);
    if (inserted) order.push_back(r.prompt_id);
    if (!it->second.emplace(r.block_index, &r).second) {
      throw Error(ErrorKind::Validation, "prompt '" + r.prompt_id + "' has duplicate block " +
                                             std::to_string(r.block_index));
    }
  }

  std::vector<RunSummary> out;
  for (const auto& prompt_id : order) {
    const auto& blocks = by_prompt.at(prompt_id);
    const int num_blocks = blocks.rbegin()->first + 1;
    std::string gaps;
    for (int b = 0; b < num_blocks; ++b) {
      if (!blocks.contains(b)) gaps += (gaps.empty() ? "" : ", ") + std::to_string(b);
    }
    if (!gaps.empty()) {
      throw Error(ErrorKind::Validation, "prompt '" + prompt_id + "' is missing blocks " + gaps);
    }

    RunSummary summary;
    summary.prompt_id = prompt_id;
    for (const auto& [b, record] : blocks) {
      BlockTrace t;
      t.block_index = b;
      t.frame_scores = FrameScoreVector{b, record->frame_scores};
      t.aggregate_score = aggregate(*t.frame_scores, options.aggregation);
      t.decision = decide(policy, b, t.aggregate_score);

      const BlockCharge modeled = charge(options.latency, t.decision, true);
      int recorded = 0;
      int fallback = 0;
      auto pick = [&](const std::optional<double>& rec, double model, bool needed) {
        if (!needed) return 0.0;
        if (rec) {
          ++recorded;
          return *rec;
        }
        ++fallback;
        return model;
      };
      const bool drafted = t.decision.reason != DecisionReason::AlwaysReject;
      t.draft_time_s = pick(record->draft_time_s, modeled.draft, drafted);
      t.decode_time_s = pick(record->decode_time_s, modeled.decode, drafted);
      t.score_time_s = pick(record->score_time_s, modeled.score, drafted);
      t.target_time_s = pick(record->target_time_s, modeled.target, !t.decision.accepted());
      t.timing_source = fallback == 0   ? TimingSource::Recorded
                        : recorded == 0 ? TimingSource::Simulated
                                        : TimingSource::Mixed;
      summary.block_traces.push_back(std::move(t));
    }
    summary.accept_rate_excl_block0 = accept_rate_excl_block0(summary.block_traces);
    summary.total_time_s = simulate_time(summary.block_traces, options.latency);
    summary.quality_proxy = options.quality ? options.quality->evaluate(summary.block_traces)
                                            : std::numeric_limits<double>::quiet_NaN();
    out.push_back(std::move(summary));
  }
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const BlockTrace& t) {
  nlohmann::json j;
  j["block_index"] = t.block_index;
  j["aggregate_score"] = t.aggregate_score ? nlohmann::json(*t.aggregate_score) : nlohmann::json();
  j["frame_scores"] = t.frame_scores ? nlohmann::json(t.frame_scores->scores) : nlohmann::json();
  j["verdict"] = to_string(t.decision.verdict);
  j["reason"] = to_string(t.decision.reason);
  j["draft_time_s"] = t.draft_time_s;
  j["score_time_s"] = t.score_time_s;
  j["target_time_s"] = t.target_time_s;
  j["decode_time_s"] = t.decode_time_s;
  j["timing_source"] = to_string(t.timing_source);
  j["noise_seed"] = t.noise_seed;
  j["draft_digest"] = t.draft_digest;
  j["committed_digest"] = t.committed_digest;
  j["target_noise_seed"] = t.target_noise_seed ? nlohmann::json(*t.target_noise_seed) : nlohmann::json();
  return j;
}

nlohmann::json to_json(const RunSummary& s) {
  nlohmann::json j;
  j["prompt_id"] = s.prompt_id;
  j["accept_rate_excl_block0"] = s.accept_rate_excl_block0;
  j["total_time_s"] = s.total_time_s;
  j["quality_proxy"] = std::isfinite(s.quality_proxy) ? nlohmann::json(s.quality_proxy) : nlohmann::json();
  j["block_traces"] = nlohmann::json::array();
  for (const auto& t : s.block_traces) j["block_traces"].push_back(to_json(t));
  return j;
}

RunSummary run_summary_from_json(const nlohmann::json& j) {
  try {
    RunSummary s;
    s.prompt_id = j.at("prompt_id").get<std::string>();
    s.accept_rate_excl_block0 = j.at("accept_rate_excl_block0").get<double>();
    s.total_time_s = j.at("total_time_s").get<double>();
    s.quality_proxy = j.at("quality_proxy").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                      : j.at("quality_proxy").get<double>();
    for (const auto& bt : j.at("block_traces")) {
      BlockTrace t;
      t.block_index = bt.at("block_index").get<int>();
      if (!bt.at("aggregate_score").is_null()) t.aggregate_score = bt.at("aggregate_score").get<double>();
      if (!bt.at("frame_scores").is_null()) {
        t.frame_scores = FrameScoreVector{t.block_index, bt.at("frame_scores").get<std::vector<double>>()};
      }
      t.decision.verdict = parse_verdict(bt.at("verdict").get<std::string>());
      t.decision.reason = parse_reason(bt.at("reason").get<std::string>());
      t.draft_time_s = bt.at("draft_time_s").get<double>();
      t.score_time_s = bt.at("score_time_s").get<double>();
      t.target_time_s = bt.at("target_time_s").get<double>();
      t.decode_time_s = bt.at("decode_time_s").get<double>();
      const std::string source = bt.at("timing_source").get<std::string>();
      t.timing_source = source == "recorded" ? TimingSource::Recorded
                        : source == "mixed"  ? TimingSource::Mixed
                                             : TimingSource::Simulated;
      t.noise_seed = bt.at("noise_seed").get<std::uint64_t>();
      t.draft_digest = bt.at("draft_digest").get<std::uint64_t>();
      t.committed_digest = bt.at("committed_digest").get<std::uint64_t>();
      if (!bt.at("target_noise_seed").is_null()) {
        t.target_noise_seed = bt.at("target_noise_seed").get<std::uint64_t>();
      }
      s.block_traces.push_back(std::move(t));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("invalid run summary JSON: ") + e.what());
  }
}

void append_jsonl(const std::string& path, const std::vector<RunSummary>& summaries) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error(ErrorKind::Io, "cannot open '" + path + "' for appending");
  for (const auto& s : summaries) out << to_json(s).dump() << '\n';
}

}  // namespace sdvg
