#pragma once

#include <string>
#include <vector>

namespace cbo {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
};

struct AcceptanceOptions {
  std::vector<int> only;   // criterion ids to run; empty means all
  int threads = 0;         // 0: CBO_THREADS env, else hardware
  std::string scratch_dir; // working directory for file-based checks
  std::string cbo_binary;  // when set, criterion 8 shells out to the CLI
};

// Runs the acceptance criteria and returns one result per criterion, in id
// order.  Criteria 1-3 execute full optimization campaigns and dominate the
// runtime; 4-7 finish in seconds.
std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options = {});

}  // namespace cbo
