#pragma once

#include "sdvg/costmodel.hpp"
#include "sdvg/router.hpp"
#include "sdvg/synthmodels.hpp"

#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace sdvg {

// One block of an externally recorded run; one JSON object per line.
struct ExternalTraceRecord {
  std::string prompt_id;
  int block_index = 0;
  std::vector<double> frame_scores;
  std::optional<double> draft_time_s;
  std::optional<double> target_time_s;
  std::optional<double> decode_time_s;
  std::optional<double> score_time_s;
  std::optional<Producer> producer_observed;

  bool operator==(const ExternalTraceRecord&) const = default;
};

// Parses one line; errors name the line number.
ExternalTraceRecord parse_trace_line(const std::string& line, int line_number, int num_blocks);

// Streams records from `in`, skipping blank lines.
std::vector<ExternalTraceRecord> parse_trace(std::istream& in, int num_blocks);
std::vector<ExternalTraceRecord> parse_trace(const std::string& text, int num_blocks);

// Canonical single-line form: sorted keys, absent optionals omitted.
std::string serialize_record(const ExternalTraceRecord& record);
std::string serialize_trace(const std::vector<ExternalTraceRecord>& records);

// Records for every block of a finished run.  Throws if a block was not
// scored (run with score_forced_rejections to export forced blocks).
std::vector<ExternalTraceRecord> export_trace(const RunSummary& summary);

struct ReplayOptions {
  double tau = -0.7;
  AggregationMode aggregation = AggregationMode::MinFrame;
  bool force_reject_block0 = true;
  LatencyParams latency;
  const QualityProxyModel* quality = nullptr;
};

// Counterfactual routing of recorded scores, one summary per prompt in order
// of first appearance.  tau = +inf routes as always-reject.  Recorded timings
// are used where present, modeled ones otherwise; each block's
// timing_source says which.
std::vector<RunSummary> replay(const std::vector<ExternalTraceRecord>& records,
                               const ReplayOptions& options);

}  // namespace sdvg
