#pragma once

#include "sdvg/costmodel.hpp"
#include "sdvg/router.hpp"
#include "sdvg/synthmodels.hpp"

#include <optional>
#include <string>
#include <vector>

namespace sdvg {

enum class RowKind { TargetOnly, DraftOnly, Threshold, ForcedRandom, Random };

const char* to_string(RowKind kind);
RowKind parse_row_kind(const std::string& text);

// One row of a reference results table.  `table` is "main" for the threshold
// sweep and "ablation" for the ablation arms.
struct ReferenceRow {
  std::string table;
  std::string label;
  RowKind kind = RowKind::Threshold;
  AggregationMode aggregation = AggregationMode::MinFrame;
  std::optional<double> tau;
  double quality = 0.0;
  double time_s = 0.0;
  std::optional<double> speedup;
  std::optional<double> accept_rate;

  bool operator==(const ReferenceRow&) const = default;
};

// CSV with header table,label,kind,aggregation,tau,quality,time_s,speedup,accept_rate.
// Empty cells are absent values; '#' lines are comments.
std::vector<ReferenceRow> parse_reference_table(const std::string& text);
std::string serialize_reference_table(const std::vector<ReferenceRow>& rows);

// Compiled-in copy of data/reference_tables.csv.
std::vector<ReferenceRow> builtin_reference_rows();

struct Calibration {
  DraftQualityModel quality;
  QualityProxyModel proxy;
  LatencyParams latency;
  int num_blocks = 9;

  bool operator==(const Calibration&) const = default;
};

struct CalibrationFitOptions {
  int num_blocks = 9;
  QuantileFitOptions quantile;
  LatencyFitOptions latency;
  double quality_tolerance = 0.0005;
  double latency_tolerance = 0.05;
};

struct CalibrationFit {
  Calibration calibration;
  LatencyFit latency_fit;
  QualityProxyFit quality_fit;
  double mean_gap = 0.0;
  double latency_tolerance = 0.05;

  bool latency_ok() const { return latency_fit.max_relative_error() < latency_tolerance; }
  bool quality_ok() const { return quality_fit.within_tolerance(); }
  std::string report() const;
};

// Fits draft-score distribution, latency parameters and quality proxy from a
// reference table.  Throws Error(Calibration) naming any missing rows.
CalibrationFit fit_calibration(const std::vector<ReferenceRow>& rows,
                               const CalibrationFitOptions& options = {});

// Replaces every measured column of `layout` with the calibration's expected
// value; refitting the result reproduces the calibration.
std::vector<ReferenceRow> synthesize_table(const Calibration& calibration,
                                           const std::vector<ReferenceRow>& layout);

std::string serialize_calibration(const Calibration& calibration);
Calibration parse_calibration(const std::string& text);
Calibration load_calibration(const std::string& path);
void save_calibration(const Calibration& calibration, const std::string& path);

}  // namespace sdvg
