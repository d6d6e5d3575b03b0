#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace kato {

/// The parts of a CSV trace row that reporting needs.
struct TraceRow {
  int iteration = 0;
  std::string arm;
  bool failed = false;
  std::optional<double> incumbent;
};

struct Trace {
  /// Read from the incumbent_min / incumbent_max header.
  bool minimize = false;
  std::vector<TraceRow> rows;
};

/// Parses a trace written by TraceWriter. Throws SpecError on malformed input.
[[nodiscard]] Trace parse_trace(std::istream& in, const std::string& name = "trace");
[[nodiscard]] Trace read_trace(const std::filesystem::path& path);

/// Incumbent after each iteration (0 is the initial design), with the
/// cumulative number of evaluations at that point.
struct ConvergencePoint {
  int iteration = 0;
  int evaluations = 0;
  std::optional<double> incumbent;
};

[[nodiscard]] std::vector<ConvergencePoint> convergence(const Trace& trace);
void write_convergence_csv(std::ostream& out, const std::vector<ConvergencePoint>& points);

/// Per-iteration statistics across runs. Runs that have not found a feasible
/// point yet are left out of median/min/max but counted in `runs`.
struct SummaryRow {
  int iteration = 0;
  int evaluations = 0;
  int runs = 0;
  int runs_with_incumbent = 0;
  std::optional<double> median;
  std::optional<double> min;
  std::optional<double> max;
};

/// Runs must share a direction; shorter runs simply stop contributing.
[[nodiscard]] std::vector<SummaryRow> summarize(const std::vector<Trace>& traces);
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows,
                       const std::string& group = {});
void write_summary_header(std::ostream& out, bool with_group);

/// 1-based count of evaluations until the incumbent first reaches `target`.
[[nodiscard]] std::optional<int> evaluations_to_reach(const Trace& trace, double target);

struct SpeedupRow {
  std::string label;
  std::optional<double> baseline_best;
  std::optional<int> baseline_evaluations;
  std::optional<int> transfer_evaluations;
  /// baseline_evaluations / transfer_evaluations; empty if either is missing.
  std::optional<double> speedup;
};

/// Evaluations the baseline needs to reach its own final best, divided by the
/// evaluations the transfer run needs to reach that same value.
[[nodiscard]] SpeedupRow speedup(const Trace& baseline, const Trace& transfer,
                                 const std::string& label);
/// Median speedup, counting a transfer run that never gets there as 0.
[[nodiscard]] std::optional<double> median_speedup(const std::vector<SpeedupRow>& rows);
void write_speedup_csv(std::ostream& out, const std::vector<SpeedupRow>& rows);

[[nodiscard]] double median(std::vector<double> values);

}  // namespace kato
