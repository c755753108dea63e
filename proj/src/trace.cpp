#include "cbo/trace.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace cbo {

double RunTrace::final_best_merit() const {
  if (rows.empty()) return std::numeric_limits<double>::infinity();
  return rows.back().best_merit;
}

std::optional<int> RunTrace::iterations_to(double tol) const {
  for (const TraceRow& row : rows) {
    if (row.best_merit < tol) return row.eval_index;
  }
  return std::nullopt;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_field_double(const std::string& s, int line_no, const std::string& col) {
  double v = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  const auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ParseError("row " + std::to_string(line_no) + ", column '" + col +
                     "': cannot parse '" + s + "' as a number");
  }
  return v;
}

}  // namespace

std::string trace_to_csv(const RunTrace& trace) {
  std::string out = "eval";
  const int n_d = trace.dim();
  const int n_g = trace.n_ineq();
  const int n_h = trace.n_eq();
  for (int i = 1; i <= n_d; ++i) out += ",x_" + std::to_string(i);
  out += ",f";
  for (int i = 1; i <= n_g; ++i) out += ",g_" + std::to_string(i);
  for (int i = 1; i <= n_h; ++i) out += ",h_" + std::to_string(i);
  out += ",merit,best_merit,stage,tr_circle_ub,tr_sigma_ub\n";
  for (const TraceRow& row : trace.rows) {
    out += std::to_string(row.eval_index);
    for (int i = 0; i < n_d; ++i) out += "," + format_double(row.x[i]);
    out += "," + format_double(row.f);
    for (int i = 0; i < n_g; ++i) out += "," + format_double(row.g[i]);
    for (int i = 0; i < n_h; ++i) out += "," + format_double(row.h[i]);
    out += "," + format_double(row.merit);
    out += "," + format_double(row.best_merit);
    out += ",";
    if (row.stage) out += std::to_string(*row.stage);
    out += "," + format_double(row.tr_circle_ub);
    out += "," + format_double(row.tr_sigma_ub);
    out += "\n";
  }
  return out;
}

void write_trace_csv(const RunTrace& trace, const std::string& path) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw ParseError("cannot open '" + path + "' for writing");
  file << trace_to_csv(trace);
}

RunTrace parse_trace_csv(const std::string& text,
                         std::vector<std::string>* warnings) {
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line)) throw ParseError("trace is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv_line(line);

  int eval_col = -1, f_col = -1, merit_col = -1, best_col = -1, stage_col = -1;
  int circle_col = -1, sigma_col = -1;
  std::vector<int> x_cols, g_cols, h_cols;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const std::string& name = header[c];
    if (name == "eval") eval_col = c;
    else if (name == "f") f_col = c;
    else if (name == "merit") merit_col = c;
    else if (name == "best_merit") best_col = c;
    else if (name == "stage") stage_col = c;
    else if (name == "tr_circle_ub") circle_col = c;
    else if (name == "tr_sigma_ub") sigma_col = c;
    else if (name.rfind("x_", 0) == 0) x_cols.push_back(c);
    else if (name.rfind("g_", 0) == 0) g_cols.push_back(c);
    else if (name.rfind("h_", 0) == 0) h_cols.push_back(c);
  }
  const auto require = [&](int col, const char* name) {
    if (col < 0) throw ParseError(std::string("missing required column '") +
                                  name + "' in trace header");
  };
  require(eval_col, "eval");
  require(f_col, "f");
  require(merit_col, "merit");
  if (x_cols.empty()) throw ParseError("missing required column 'x_1' in trace header");

  RunTrace trace;
  int line_no = 1;
  while (std::getline(ss, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ParseError("row " + std::to_string(line_no) + " has " +
                       std::to_string(fields.size()) + " fields, expected " +
                       std::to_string(header.size()));
    }
    TraceRow row;
    row.eval_index = static_cast<int>(parse_field_double(fields[eval_col], line_no, "eval"));
    row.x.resize(x_cols.size());
    for (size_t i = 0; i < x_cols.size(); ++i) {
      row.x[i] = parse_field_double(fields[x_cols[i]], line_no, header[x_cols[i]]);
    }
    row.f = parse_field_double(fields[f_col], line_no, "f");
    row.g.resize(g_cols.size());
    for (size_t i = 0; i < g_cols.size(); ++i) {
      row.g[i] = parse_field_double(fields[g_cols[i]], line_no, header[g_cols[i]]);
    }
    row.h.resize(h_cols.size());
    for (size_t i = 0; i < h_cols.size(); ++i) {
      row.h[i] = parse_field_double(fields[h_cols[i]], line_no, header[h_cols[i]]);
    }
    row.merit = parse_field_double(fields[merit_col], line_no, "merit");
    row.best_merit = best_col >= 0
                         ? parse_field_double(fields[best_col], line_no, "best_merit")
                         : row.merit;
    if (stage_col >= 0 && !fields[stage_col].empty()) {
      row.stage = static_cast<int>(
          parse_field_double(fields[stage_col], line_no, "stage"));
    }
    if (circle_col >= 0) {
      row.tr_circle_ub = parse_field_double(fields[circle_col], line_no, "tr_circle_ub");
    }
    if (sigma_col >= 0) {
      row.tr_sigma_ub = parse_field_double(fields[sigma_col], line_no, "tr_sigma_ub");
    }
    trace.rows.push_back(std::move(row));
  }

  // External tools may log only the raw merit; repair a non-monotone
  // best_merit column instead of rejecting the trace.
  bool monotone = true;
  for (size_t i = 1; i < trace.rows.size(); ++i) {
    if (trace.rows[i].best_merit > trace.rows[i - 1].best_merit) {
      monotone = false;
      break;
    }
  }
  if (!monotone) {
    if (warnings) {
      warnings->push_back("best_merit is not non-increasing; recomputed as the "
                          "running minimum of merit");
    }
    double best = std::numeric_limits<double>::infinity();
    for (TraceRow& row : trace.rows) {
      best = std::min(best, row.merit);
      row.best_merit = best;
    }
  }
  return trace;
}

RunTrace ingest_external_trace(const std::string& path,
                               std::vector<std::string>* warnings) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw ParseError("cannot open trace file '" + path + "'");
  std::stringstream buf;
  buf << file.rdbuf();
  return parse_trace_csv(buf.str(), warnings);
}

}  // namespace cbo
