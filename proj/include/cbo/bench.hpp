#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cbo/optimizer.hpp"
#include "cbo/problems.hpp"
#include "cbo/trace.hpp"
#include "cbo/types.hpp"

namespace cbo {

// Plain Latin hypercube over the problem box: each of the n_runs strata per
// coordinate is hit exactly once.  Deterministic per seed.
std::vector<Vector> lhs_starts(const ConstrainedProblem& problem, int n_runs,
                               std::uint64_t seed);

struct RunKey {
  std::string problem;
  int dim = 0;
  std::string method;
  int run = 0;  // 0-based
};

struct LabeledTrace {
  RunKey key;
  RunTrace trace;
};

struct CampaignSpec {
  std::vector<std::string> problems = {"quad", "prod", "rosen"};
  std::vector<int> dims = {2, 5};
  std::vector<std::string> methods = {"strong"};
  int n_runs = 5;
  std::uint64_t seed = 0;
  int max_evals = 300;
  double tol = 1e-5;
  double rosen_a = 100.0;
  int threads = 0;  // 0: CBO_THREADS env var, else hardware concurrency
};

// One (problem, dim, method) cell of a campaign.
struct CampaignCell {
  std::string problem;
  int dim = 0;
  std::string method;
  int n_runs = 0;
  int n_converged = 0;
  std::optional<double> median_iters;  // over converged runs only
  std::vector<double> final_merits;    // one per executed run
  std::string note;                    // "unsupported", "run N failed: ..."
};

struct CampaignSummary {
  double tol = 1e-5;
  std::vector<CampaignCell> cells;
};

// Executes every (problem, dim, method, run) combination; methods share the
// same LHS starts per (problem, dim).  Combinations a method refuses (e.g.
// probability of feasibility with an equality constraint) are recorded as
// unsupported cells rather than run.  Individual run failures are recorded
// as non-converged; the campaign continues.
CampaignSummary run_campaign(const CampaignSpec& spec,
                             std::vector<LabeledTrace>* traces = nullptr);

// Per-cell counts and medians from labeled traces.
CampaignSummary summarize(const std::vector<LabeledTrace>& traces, double tol);

// Deterministic text rendering: a per-cell listing plus, when all three
// benchmark problems are present, a methods-by-dimensions table whose cells
// hold the converged-run counts for quad . prod . rosen.
std::string summary_to_text(const CampaignSummary& summary);

// run_campaign plus one trace CSV per run and a summary.txt in out_dir.
CampaignSummary write_campaign(const CampaignSpec& spec,
                               const std::string& out_dir);

std::string trace_filename(const RunKey& key);

// Thread cap: explicit spec value, else CBO_THREADS, else hardware.
int resolve_threads(int requested);

}  // namespace cbo
