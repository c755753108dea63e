#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cbo/types.hpp"

namespace cbo {

// One optimization evaluation: the point, its objective/constraint values,
// the exact augmented-Lagrangian merit, the running best merit, the strong-
// enforcement stage that produced the point (when applicable), and the trust
// bounds in effect.
struct TraceRow {
  int eval_index = 0;  // contiguous from 1
  Vector x;
  double f = 0.0;
  Vector g;
  Vector h;
  double merit = 0.0;
  double best_merit = 0.0;
  std::optional<int> stage;
  double tr_circle_ub = 0.0;
  double tr_sigma_ub = 0.0;
};

struct RunTrace {
  std::vector<TraceRow> rows;
  bool converged = false;

  int dim() const { return rows.empty() ? 0 : static_cast<int>(rows.front().x.size()); }
  int n_ineq() const { return rows.empty() ? 0 : static_cast<int>(rows.front().g.size()); }
  int n_eq() const { return rows.empty() ? 0 : static_cast<int>(rows.front().h.size()); }
  double final_best_merit() const;
  // First eval index with best_merit < tol, if any.
  std::optional<int> iterations_to(double tol) const;
};

// Shortest round-trip decimal for a double (std::to_chars).
std::string format_double(double v);

// CSV schema:
//   eval,x_1..x_nd,f,g_1..g_ng,h_1..h_nh,merit,best_merit,stage,
//   tr_circle_ub,tr_sigma_ub
// stage is blank for rows produced without the staged method.
std::string trace_to_csv(const RunTrace& trace);
void write_trace_csv(const RunTrace& trace, const std::string& path);

// Parses a trace in the schema above.  Missing required columns raise a
// ParseError naming the column; a non-monotone best_merit column is repaired
// (recomputed as the running minimum) with a warning instead of rejection.
RunTrace parse_trace_csv(const std::string& text,
                         std::vector<std::string>* warnings = nullptr);
RunTrace ingest_external_trace(const std::string& path,
                               std::vector<std::string>* warnings = nullptr);

}  // namespace cbo
