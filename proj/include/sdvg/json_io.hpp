#pragma once

#include "sdvg/core.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace sdvg {

nlohmann::json to_json(const BlockTrace& trace);
nlohmann::json to_json(const RunSummary& summary);
RunSummary run_summary_from_json(const nlohmann::json& j);

// Appends one compact line per summary.
void append_jsonl(const std::string& path, const std::vector<RunSummary>& summaries);

}  // namespace sdvg
