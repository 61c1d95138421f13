#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "opacgp/cli.hpp"
#include "opacgp/errors.hpp"

namespace opacgp::cli {

namespace {

constexpr int kTraceColumns = 10;

double parse_double(const std::string& cell, const std::string& where) {
  double v = 0.0;
  const char* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ParseError(where + ": not a number: '" + cell + "'");
  return v;
}

std::size_t parse_count(const std::string& cell, const std::string& where) {
  std::size_t v = 0;
  const char* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ParseError(where + ": not a count: '" + cell + "'");
  return v;
}

}  // namespace

std::string trace_header() {
  return "step,n_seen,train_mse,test_mse,empirical_term,kl_term,constant_term,train_bound,test_bound,wall_time";
}

std::string trace_row(const StepRecord& r, bool with_time) {
  return fmt::format("{},{},{},{},{},{},{},{},{},{}", r.step, r.n_seen, r.train_mse, r.test_mse, r.empirical_term,
                     r.kl_term, r.constant_term, r.train_bound_total, r.test_bound, with_time ? r.wall_time : 0.0);
}

void write_trace(std::ostream& out, const std::vector<StepRecord>& records, bool with_time) {
  out << trace_header() << '\n';
  for (const StepRecord& r : records) out << trace_row(r, with_time) << '\n';
}

std::vector<StepRecord> read_trace(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(source + ": empty trace");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != trace_header()) throw ParseError(source + " line 1: unexpected header");
  std::vector<StepRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = source + " line " + std::to_string(lineno);
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (static_cast<int>(cells.size()) != kTraceColumns) {
      throw ParseError(where + ": expected " + std::to_string(kTraceColumns) + " fields, got " +
                       std::to_string(cells.size()));
    }
    StepRecord r;
    r.step = parse_count(cells[0], where);
    r.n_seen = parse_count(cells[1], where);
    r.train_mse = parse_double(cells[2], where);
    r.test_mse = parse_double(cells[3], where);
    r.empirical_term = parse_double(cells[4], where);
    r.kl_term = parse_double(cells[5], where);
    r.constant_term = parse_double(cells[6], where);
    r.train_bound_total = parse_double(cells[7], where);
    r.test_bound = parse_double(cells[8], where);
    r.wall_time = parse_double(cells[9], where);
    r.failed = std::isnan(r.train_bound_total);
    out.push_back(r);
  }
  return out;
}

std::vector<ReportRow> report_rows(const std::vector<StepRecord>& trace) {
  std::vector<ReportRow> out;
  for (const StepRecord& r : trace) {
    if (r.failed || !std::isfinite(r.test_bound) || !std::isfinite(r.constant_term)) continue;
    const double cumulative = r.test_bound - r.constant_term;
    if (r.test_bound < cumulative) {
      throw NumericalError("report: bound below empirical loss at step " + std::to_string(r.step));
    }
    out.push_back({r.n_seen, cumulative, r.test_bound});
  }
  return out;
}

void write_report(std::ostream& out, const std::vector<std::vector<ReportRow>>& reports) {
  out << "trace,n_seen,cumulative_empirical,test_bound\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    for (const ReportRow& r : reports[i]) {
      out << fmt::format("{},{},{},{}\n", i, r.n_seen, r.cumulative_empirical, r.test_bound);
    }
  }
}

}  // namespace opacgp::cli
