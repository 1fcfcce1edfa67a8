#include "sdvg/calibration.hpp"

#include "sdvg/kvfile.hpp"
#include "sdvg/reference_table_data.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace sdvg {

namespace {

constexpr const char* kTableHeader =
    "table,label,kind,aggregation,tau,quality,time_s,speedup,accept_rate";
constexpr const char* kCalibrationFormat = "sdvg-calibration/1";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::optional<double> optional_cell(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  return parse_double(cell);
}

std::string optional_text(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

}  // namespace

const char* to_string(RowKind kind) {
  switch (kind) {
    case RowKind::TargetOnly: return "target_only";
    case RowKind::DraftOnly: return "draft_only";
    case RowKind::Threshold: return "threshold";
    case RowKind::ForcedRandom: return "forced_random";
    case RowKind::Random: return "random";
  }
  return "unknown";
}

RowKind parse_row_kind(const std::string& text) {
  for (auto k : {RowKind::TargetOnly, RowKind::DraftOnly, RowKind::Threshold,
                 RowKind::ForcedRandom, RowKind::Random}) {
    if (text == to_string(k)) return k;
  }
  throw Error(ErrorKind::Parse, "unknown row kind '" + text + "'");
}

std::vector<ReferenceRow> parse_reference_table(const std::string& text) {
  std::vector<ReferenceRow> rows;
  std::istringstream in(text);
  std::string line;
  int line_number = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      if (line != kTableHeader) {
        throw Error(ErrorKind::Parse, "line " + std::to_string(line_number) +
                                          ": expected header '" + kTableHeader + "'");
      }
      header_seen = true;
      continue;
    }
    const auto cells = split_csv(line);
    if (cells.size() != 9) {
      throw Error(ErrorKind::Parse, "line " + std::to_string(line_number) + ": expected 9 cells");
    }
    try {
      ReferenceRow row;
      row.table = cells[0];
      row.label = cells[1];
      row.kind = parse_row_kind(cells[2]);
      row.aggregation = cells[3].empty() ? AggregationMode::MinFrame : parse_aggregation(cells[3]);
      row.tau = optional_cell(cells[4]);
      row.quality = parse_double(cells[5]);
      row.time_s = parse_double(cells[6]);
      row.speedup = optional_cell(cells[7]);
      row.accept_rate = optional_cell(cells[8]);
      if (row.kind == RowKind::Threshold && (!row.tau || !row.accept_rate)) {
        throw Error(ErrorKind::Validation, "threshold rows need tau and accept_rate");
      }
      if ((row.kind == RowKind::Random || row.kind == RowKind::ForcedRandom) && !row.accept_rate) {
        throw Error(ErrorKind::Validation, "random rows need accept_rate");
      }
      rows.push_back(std::move(row));
    } catch (const Error& e) {
      throw Error(e.kind(), "line " + std::to_string(line_number) + ": " + e.what());
    }
  }
  if (!header_seen) throw Error(ErrorKind::Parse, "reference table has no header");
  return rows;
}

std::string serialize_reference_table(const std::vector<ReferenceRow>& rows) {
  std::ostringstream out;
  out << kTableHeader << '\n';
  for (const auto& r : rows) {
    const bool has_agg = r.kind == RowKind::Threshold;
    out << r.table << ',' << r.label << ',' << to_string(r.kind) << ','
        << (has_agg ? to_string(r.aggregation) : "") << ',' << optional_text(r.tau) << ','
        << format_double(r.quality) << ',' << format_double(r.time_s) << ','
        << optional_text(r.speedup) << ',' << optional_text(r.accept_rate) << '\n';
  }
  return out.str();
}

std::vector<ReferenceRow> builtin_reference_rows() {
  return parse_reference_table(detail::kReferenceTableCsv);
}

// ---------------------------------------------------------------------------

namespace {

const ReferenceRow* find_row(const std::vector<ReferenceRow>& rows, const std::string& table,
                             RowKind kind) {
  auto it = std::find_if(rows.begin(), rows.end(), [&](const ReferenceRow& r) {
    return r.table == table && r.kind == kind;
  });
  return it == rows.end() ? nullptr : &*it;
}

bool is_min_threshold(const ReferenceRow& r) {
  return r.kind == RowKind::Threshold && r.aggregation == AggregationMode::MinFrame;
}

}  // namespace

CalibrationFit fit_calibration(const std::vector<ReferenceRow>& rows,
                               const CalibrationFitOptions& options) {
  const ReferenceRow* target_only = find_row(rows, "main", RowKind::TargetOnly);
  const ReferenceRow* draft_only = find_row(rows, "main", RowKind::DraftOnly);
  std::vector<const ReferenceRow*> thresholds;
  for (const auto& r : rows) {
    if (r.table == "main" && is_min_threshold(r)) thresholds.push_back(&r);
  }
  std::vector<std::string> missing;
  if (!target_only) missing.emplace_back("main/target-only");
  if (!draft_only) missing.emplace_back("main/draft-only");
  if (thresholds.size() < 3) missing.emplace_back("main/threshold (need >= 3 worst-frame rows)");
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw Error(ErrorKind::Calibration, "reference table is missing rows: " + names);
  }

  CalibrationFit fit;
  fit.latency_tolerance = options.latency_tolerance;
  Calibration& cal = fit.calibration;
  cal.num_blocks = options.num_blocks;

  std::vector<QuantileKnot> knots;
  for (const auto* r : thresholds) knots.push_back({*r->tau, *r->accept_rate});
  cal.quality = fit_quantile(knots, options.quantile);

  std::vector<QuantileKnot> mean_rows;
  for (const auto& r : rows) {
    if (r.kind == RowKind::Threshold && r.aggregation == AggregationMode::MeanFrame) {
      mean_rows.push_back({*r.tau, *r.accept_rate});
    }
  }
  if (!mean_rows.empty()) {
    fit.mean_gap = fit_mean_gap(cal.quality, mean_rows);
    cal.quality = cal.quality.with_mean_gap(fit.mean_gap);
  } else {
    fit.mean_gap = cal.quality.mean_gap();
  }

  std::vector<LatencyObservation> observations;
  observations.push_back({target_only->label, RunKind::TargetOnly, 0.0, target_only->time_s,
                          options.num_blocks, true});
  for (const auto* r : thresholds) {
    observations.push_back({r->label, RunKind::Speculative, *r->accept_rate, r->time_s,
                            options.num_blocks, true});
  }
  observations.push_back({draft_only->label, RunKind::DraftOnly, 0.0, draft_only->time_s,
                          options.num_blocks, false});
  fit.latency_fit = fit_latencies(observations, options.latency);
  cal.latency = fit.latency_fit.params;

  QualityFitInput q;
  q.target_only = target_only->quality;
  q.draft_only = draft_only->quality;
  for (const auto* r : thresholds) q.threshold_rows.push_back({r->label, *r->tau, r->quality});
  if (const auto* fr = find_row(rows, "ablation", RowKind::ForcedRandom)) {
    q.forced_random = RandomArmRow{fr->label, *fr->accept_rate, fr->quality};
  }
  if (const auto* pr = find_row(rows, "ablation", RowKind::Random)) {
    q.plain_random = RandomArmRow{pr->label, *pr->accept_rate, pr->quality};
  }
  q.num_blocks = options.num_blocks;
  q.tolerance = options.quality_tolerance;
  fit.quality_fit = fit_quality_proxy(q, cal.quality);
  cal.proxy = fit.quality_fit.model;
  return fit;
}

std::string CalibrationFit::report() const {
  std::ostringstream out;
  out << std::fixed;
  out << "latency fit (max relative error " << std::setprecision(2)
      << 100.0 * latency_fit.max_relative_error() << "%, tolerance "
      << 100.0 * latency_tolerance << "%): " << (latency_ok() ? "ok" : "FAILED") << '\n';
  out << "  c_draft=" << std::setprecision(4) << calibration.latency.c_draft
      << " c_decode=" << calibration.latency.c_decode
      << " c_target=" << calibration.latency.c_target
      << " c_score=" << calibration.latency.c_score << '\n';
  for (const auto& r : latency_fit.residuals) {
    out << "  " << std::left << std::setw(24) << r.label << std::right << " measured "
        << std::setprecision(1) << std::setw(6) << r.measured_s << " s  predicted "
        << std::setprecision(2) << std::setw(6) << r.predicted_s << " s  ("
        << std::showpos << 100.0 * r.relative_error << std::noshowpos << "%)\n";
  }
  out << "quality proxy fit (max residual " << std::setprecision(5)
      << quality_fit.max_fit_residual() << ", tolerance " << quality_fit.tolerance
      << "): " << (quality_ok() ? "ok" : "FAILED") << '\n';
  for (const auto& r : quality_fit.residuals) {
    out << "  " << std::left << std::setw(24) << r.label << std::right << " reported "
        << std::setprecision(4) << r.reported << "  predicted " << std::setprecision(5)
        << r.predicted << (r.in_fit ? "" : "  (not fitted)") << '\n';
  }
  out << "draft score model: mean-frame gap " << std::setprecision(4) << mean_gap
      << ", tail slopes " << calibration.quality.upper_tail_slope() << " / "
      << calibration.quality.lower_tail_slope() << '\n';
  return out.str();
}

std::vector<ReferenceRow> synthesize_table(const Calibration& cal,
                                           const std::vector<ReferenceRow>& layout) {
  const int B = cal.num_blocks;
  const LatencyObservation target_obs{"", RunKind::TargetOnly, 0.0, 0.0, B, true};
  const double t_target = predict_time(cal.latency, target_obs);

  std::vector<ReferenceRow> out;
  for (ReferenceRow row : layout) {
    LatencyObservation obs{row.label, RunKind::Speculative, 0.0, 0.0, B, true};
    switch (row.kind) {
      case RowKind::TargetOnly:
        obs.kind = RunKind::TargetOnly;
        row.quality = cal.proxy.base_quality();
        break;
      case RowKind::DraftOnly:
        obs.kind = RunKind::DraftOnly;
        obs.force_reject_block0 = false;
        row.quality = cal.proxy.expected_draft_only_quality(cal.quality, B);
        break;
      case RowKind::Threshold: {
        const double effective_tau = row.aggregation == AggregationMode::MeanFrame
                                         ? *row.tau - cal.quality.mean_gap()
                                         : *row.tau;
        row.accept_rate = cal.quality.accept_rate(effective_tau);
        obs.accept_rate = *row.accept_rate;
        row.quality = cal.proxy.expected_threshold_quality(cal.quality, effective_tau, B);
        break;
      }
      case RowKind::ForcedRandom:
      case RowKind::Random: {
        const bool forced = row.kind == RowKind::ForcedRandom;
        obs.accept_rate = *row.accept_rate;
        obs.force_reject_block0 = forced;
        row.quality = cal.proxy.expected_random_quality(cal.quality, *row.accept_rate, forced, B);
        break;
      }
    }
    row.time_s = predict_time(cal.latency, obs);
    row.speedup = t_target / row.time_s;
    out.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string serialize_calibration(const Calibration& cal) {
  KeyValueFile f;
  f.set("format", kCalibrationFormat);
  f.set("num_blocks", std::to_string(cal.num_blocks));

  std::vector<double> taus, rates;
  for (const auto& k : cal.quality.knots()) {
    taus.push_back(k.tau);
    rates.push_back(k.accept_rate);
  }
  f.set("quality.knot_tau", join_doubles(taus));
  f.set("quality.knot_accept_rate", join_doubles(rates));
  f.set("quality.upper_tail_slope", format_double(cal.quality.upper_tail_slope()));
  f.set("quality.lower_tail_slope", format_double(cal.quality.lower_tail_slope()));
  f.set("quality.mean_gap", format_double(cal.quality.mean_gap()));
  f.set("quality.rng_seed", std::to_string(cal.quality.rng_seed()));

  f.set("proxy.base_quality", format_double(cal.proxy.base_quality()));
  f.set("proxy.breakpoints", join_doubles(cal.proxy.breakpoints()));
  f.set("proxy.penalties", join_doubles(cal.proxy.penalties()));
  f.set("proxy.anchor_penalty", format_double(cal.proxy.anchor_penalty()));

  f.set("latency.c_draft", format_double(cal.latency.c_draft));
  f.set("latency.c_decode", format_double(cal.latency.c_decode));
  f.set("latency.c_score", format_double(cal.latency.c_score));
  f.set("latency.c_target", format_double(cal.latency.c_target));
  f.set("latency.overlap_mode", to_string(cal.latency.overlap_mode));
  f.set("latency.score_residue", format_double(cal.latency.score_residue));
  return f.dump(
      "# sdvg calibration: draft score distribution, quality proxy (a curve fit,\n"
      "# not a video-quality metric) and latency parameters.\n");
}

Calibration parse_calibration(const std::string& text) {
  const KeyValueFile f = KeyValueFile::parse(text);
  if (f.get_or("format", "") != kCalibrationFormat) {
    throw Error(ErrorKind::Calibration, std::string("calibration file format must be '") +
                                            kCalibrationFormat + "'");
  }
  try {
    Calibration cal;
    cal.num_blocks = static_cast<int>(f.get_int("num_blocks"));
    const auto taus = f.get_doubles("quality.knot_tau");
    const auto rates = f.get_doubles("quality.knot_accept_rate");
    if (taus.size() != rates.size()) {
      throw Error(ErrorKind::Calibration, "knot_tau and knot_accept_rate lengths differ");
    }
    std::vector<QuantileKnot> knots;
    for (std::size_t i = 0; i < taus.size(); ++i) knots.push_back({taus[i], rates[i]});
    cal.quality = DraftQualityModel(std::move(knots), f.get_double("quality.upper_tail_slope"),
                                    f.get_double("quality.lower_tail_slope"),
                                    f.get_double("quality.mean_gap"),
                                    f.get_uint("quality.rng_seed"));
    cal.proxy = QualityProxyModel(f.get_double("proxy.base_quality"),
                                  f.get_doubles("proxy.breakpoints"),
                                  f.get_doubles("proxy.penalties"),
                                  f.get_double("proxy.anchor_penalty"));
    cal.latency.c_draft = f.get_double("latency.c_draft");
    cal.latency.c_decode = f.get_double("latency.c_decode");
    cal.latency.c_score = f.get_double("latency.c_score");
    cal.latency.c_target = f.get_double("latency.c_target");
    cal.latency.overlap_mode = parse_overlap_mode(f.get("latency.overlap_mode"));
    cal.latency.score_residue = f.get_double("latency.score_residue");
    validate(cal.latency);
    return cal;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Calibration) throw;
    throw Error(ErrorKind::Calibration, std::string("invalid calibration file: ") + e.what());
  }
}

Calibration load_calibration(const std::string& path) {
  return parse_calibration(read_file(path));
}

void save_calibration(const Calibration& calibration, const std::string& path) {
  write_file(path, serialize_calibration(calibration));
}

}  // namespace sdvg
