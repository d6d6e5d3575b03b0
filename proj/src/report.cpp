#include "kato/report.hpp"

#include "kato/common.hpp"
#include "kato/engine.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace kato {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& cell, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw SpecError(where + ": not a number: '" + cell + "'");
  }
}

std::string cell_or_empty(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

}  // namespace

Trace parse_trace(std::istream& in, const std::string& name) {
  std::string line;
  if (!std::getline(in, line)) throw SpecError(name + ": empty trace");
  const auto header = split(line);
  if (header.size() < 5 || header[0] != "iteration" || header[1] != "arm") {
    throw SpecError(name + ": not a trace file (bad header)");
  }
  Trace trace;
  if (header.back() == "incumbent_min") {
    trace.minimize = true;
  } else if (header.back() != "incumbent_max") {
    throw SpecError(name + ": last column must be incumbent_min or incumbent_max");
  }
  const std::size_t value_col = header.size() - 2;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line);
    const std::string where = name + ":" + std::to_string(line_no);
    if (cells.size() != header.size()) throw SpecError(where + ": wrong number of columns");
    TraceRow row;
    row.iteration = static_cast<int>(parse_number(cells[0], where));
    row.arm = cells[1];
    row.failed = cells[value_col].empty();
    if (!cells.back().empty()) row.incumbent = parse_number(cells.back(), where);
    if (!trace.rows.empty() && row.iteration < trace.rows.back().iteration) {
      throw SpecError(where + ": iterations out of order");
    }
    trace.rows.push_back(std::move(row));
  }
  return trace;
}

Trace read_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot read trace " + path.string());
  return parse_trace(in, path.string());
}

std::vector<ConvergencePoint> convergence(const Trace& trace) {
  std::vector<ConvergencePoint> out;
  for (std::size_t i = 0; i < trace.rows.size(); ++i) {
    const TraceRow& r = trace.rows[i];
    if (out.empty() || out.back().iteration != r.iteration) out.push_back({r.iteration, 0, {}});
    out.back().evaluations = static_cast<int>(i) + 1;
    out.back().incumbent = r.incumbent;
  }
  return out;
}

void write_convergence_csv(std::ostream& out, const std::vector<ConvergencePoint>& points) {
  out << "iteration,evaluations,incumbent\n";
  for (const auto& p : points) {
    out << p.iteration << "," << p.evaluations << "," << cell_or_empty(p.incumbent) << "\n";
  }
}

double median(std::vector<double> values) {
  if (values.empty()) throw ConfigError("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<SummaryRow> summarize(const std::vector<Trace>& traces) {
  std::vector<std::vector<ConvergencePoint>> curves;
  std::size_t longest = 0;
  for (const auto& t : traces) {
    if (t.minimize != traces.front().minimize) {
      throw SpecError("cannot summarize traces with different objective directions");
    }
    curves.push_back(convergence(t));
    longest = std::max(longest, curves.back().size());
  }
  std::vector<SummaryRow> rows;
  for (std::size_t i = 0; i < longest; ++i) {
    SummaryRow row;
    std::vector<double> values;
    std::vector<int> evals;
    for (const auto& c : curves) {
      if (i >= c.size()) continue;
      row.iteration = c[i].iteration;
      ++row.runs;
      evals.push_back(c[i].evaluations);
      if (c[i].incumbent) values.push_back(*c[i].incumbent);
    }
    row.evaluations = *std::max_element(evals.begin(), evals.end());
    row.runs_with_incumbent = static_cast<int>(values.size());
    if (!values.empty()) {
      row.median = median(values);
      row.min = *std::min_element(values.begin(), values.end());
      row.max = *std::max_element(values.begin(), values.end());
    }
    rows.push_back(row);
  }
  return rows;
}

void write_summary_header(std::ostream& out, bool with_group) {
  if (with_group) out << "group,";
  out << "iteration,evaluations,runs,runs_with_incumbent,median,min,max\n";
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows,
                       const std::string& group) {
  for (const auto& r : rows) {
    if (!group.empty()) out << group << ",";
    out << r.iteration << "," << r.evaluations << "," << r.runs << "," << r.runs_with_incumbent
        << "," << cell_or_empty(r.median) << "," << cell_or_empty(r.min) << ","
        << cell_or_empty(r.max) << "\n";
  }
}

std::optional<int> evaluations_to_reach(const Trace& trace, double target) {
  for (std::size_t i = 0; i < trace.rows.size(); ++i) {
    const auto& inc = trace.rows[i].incumbent;
    if (inc && (trace.minimize ? *inc <= target : *inc >= target)) return static_cast<int>(i) + 1;
  }
  return std::nullopt;
}

SpeedupRow speedup(const Trace& baseline, const Trace& transfer, const std::string& label) {
  if (baseline.minimize != transfer.minimize) {
    throw SpecError("baseline and transfer traces optimize in different directions");
  }
  SpeedupRow row;
  row.label = label;
  if (baseline.rows.empty() || !baseline.rows.back().incumbent) return row;
  row.baseline_best = baseline.rows.back().incumbent;
  row.baseline_evaluations = evaluations_to_reach(baseline, *row.baseline_best);
  row.transfer_evaluations = evaluations_to_reach(transfer, *row.baseline_best);
  if (row.transfer_evaluations) {
    row.speedup = static_cast<double>(*row.baseline_evaluations) / *row.transfer_evaluations;
  }
  return row;
}

std::optional<double> median_speedup(const std::vector<SpeedupRow>& rows) {
  std::vector<double> values;
  for (const auto& r : rows) {
    if (r.baseline_best) values.push_back(r.speedup.value_or(0.0));
  }
  if (values.empty()) return std::nullopt;
  return median(values);
}

void write_speedup_csv(std::ostream& out, const std::vector<SpeedupRow>& rows) {
  out << "seed,baseline_best,baseline_evaluations,transfer_evaluations,speedup\n";
  auto count = [](const std::optional<int>& v) { return v ? std::to_string(*v) : std::string(); };
  for (const auto& r : rows) {
    out << r.label << "," << cell_or_empty(r.baseline_best) << "," << count(r.baseline_evaluations)
        << "," << count(r.transfer_evaluations) << "," << cell_or_empty(r.speedup) << "\n";
  }
  out << "median,,,," << cell_or_empty(median_speedup(rows)) << "\n";
}

}  // namespace kato
