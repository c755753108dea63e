#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "cbo/bench.hpp"
#include "test_util.hpp"

using namespace cbo;
namespace fs = std::filesystem;

namespace {

RunTrace tiny_trace() {
  RunTrace trace;
  for (int i = 1; i <= 3; ++i) {
    TraceRow row;
    row.eval_index = i;
    row.x = Vector::Constant(2, 1.0 / (3 * i));
    row.f = std::pow(10.0, -i) * 7.0;
    row.g = Vector::Constant(1, -0.123456789012345e-3 * i);
    row.h = Vector::Constant(0, 0.0);
    row.merit = 3.0 / i;
    row.best_merit = 3.0 / i;
    if (i > 1) row.stage = i;
    row.tr_circle_ub = 8.0 * i;
    row.tr_sigma_ub = 0.5 / i;
    trace.rows.push_back(row);
  }
  trace.converged = false;
  return trace;
}

}  // namespace

TEST_SUITE("bench") {

TEST_CASE("latin hypercube starts stratify every coordinate") {
  const TestProblem tp = make_quadratic(2);
  const int n_runs = 5;
  const std::vector<Vector> starts = lhs_starts(tp.problem, n_runs, 99);
  REQUIRE(starts.size() == n_runs);
  for (int d = 0; d < 2; ++d) {
    std::set<int> strata;
    for (const Vector& s : starts) {
      CHECK(s[d] >= tp.problem.lb[d]);
      CHECK(s[d] <= tp.problem.ub[d]);
      const double width = (tp.problem.ub[d] - tp.problem.lb[d]) / n_runs;
      strata.insert(static_cast<int>((s[d] - tp.problem.lb[d]) / width));
    }
    CHECK(strata.size() == n_runs);  // each stratum hit exactly once
  }
  const std::vector<Vector> again = lhs_starts(tp.problem, n_runs, 99);
  for (int k = 0; k < n_runs; ++k) {
    CHECK((starts[k] - again[k]).lpNorm<Eigen::Infinity>() == 0.0);
  }
  const std::vector<Vector> other = lhs_starts(tp.problem, n_runs, 100);
  CHECK((starts[0] - other[0]).lpNorm<Eigen::Infinity>() != 0.0);
}

TEST_CASE("trace CSV round-trips field for field") {
  const RunTrace trace = tiny_trace();
  const std::string csv = trace_to_csv(trace);
  const RunTrace parsed = parse_trace_csv(csv);
  REQUIRE(parsed.rows.size() == trace.rows.size());
  for (size_t i = 0; i < trace.rows.size(); ++i) {
    const TraceRow& a = trace.rows[i];
    const TraceRow& b = parsed.rows[i];
    CHECK(a.eval_index == b.eval_index);
    CHECK((a.x - b.x).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(a.f == b.f);
    CHECK((a.g - b.g).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(a.merit == b.merit);
    CHECK(a.best_merit == b.best_merit);
    CHECK(a.stage == b.stage);
    CHECK(a.tr_circle_ub == b.tr_circle_ub);
    CHECK(a.tr_sigma_ub == b.tr_sigma_ub);
  }
  // Round-trip through a file as well.
  const fs::path path = fs::temp_directory_path() / "cbo_trace_roundtrip.csv";
  write_trace_csv(trace, path.string());
  const RunTrace reread = ingest_external_trace(path.string());
  CHECK(trace_to_csv(reread) == csv);
  fs::remove(path);
}

TEST_CASE("ingest rejects a missing merit column by name") {
  const std::string csv =
      "eval,x_1,f,best_merit,stage,tr_circle_ub,tr_sigma_ub\n"
      "1,0.5,2.0,2.0,,1.0,0.5\n";
  CHECK_THROWS_WITH_AS(parse_trace_csv(csv),
                       doctest::Contains("merit"), ParseError);
}

TEST_CASE("ingest repairs a non-monotone best_merit with a warning") {
  const std::string csv =
      "eval,x_1,f,merit,best_merit,stage,tr_circle_ub,tr_sigma_ub\n"
      "1,0.5,2.0,2.0,2.0,,1.0,0.5\n"
      "2,0.4,1.0,1.0,5.0,,1.0,0.5\n"
      "3,0.3,4.0,4.0,4.0,,1.0,0.5\n";
  std::vector<std::string> warnings;
  const RunTrace trace = parse_trace_csv(csv, &warnings);
  REQUIRE(trace.rows.size() == 3);
  REQUIRE(warnings.size() == 1);
  CHECK(trace.rows[1].best_merit == doctest::Approx(1.0));
  CHECK(trace.rows[2].best_merit == doctest::Approx(1.0));
}

TEST_CASE("ingest validates field counts and numbers") {
  CHECK_THROWS_AS(parse_trace_csv(""), ParseError);
  const std::string short_row =
      "eval,x_1,f,merit,best_merit,stage,tr_circle_ub,tr_sigma_ub\n"
      "1,0.5,2.0\n";
  CHECK_THROWS_AS(parse_trace_csv(short_row), ParseError);
  const std::string bad_number =
      "eval,x_1,f,merit,best_merit,stage,tr_circle_ub,tr_sigma_ub\n"
      "1,0.5,zebra,2.0,2.0,,1.0,0.5\n";
  CHECK_THROWS_WITH_AS(parse_trace_csv(bad_number),
                       doctest::Contains("'f'"), ParseError);
}

TEST_CASE("summaries count and aggregate per cell") {
  const auto mk = [](const std::string& method, int run,
                     std::vector<double> best) {
    LabeledTrace lt;
    lt.key = {"quad", 2, method, run};
    for (size_t i = 0; i < best.size(); ++i) {
      TraceRow row;
      row.eval_index = static_cast<int>(i) + 1;
      row.x = Vector::Zero(2);
      row.g = Vector::Zero(0);
      row.h = Vector::Zero(0);
      row.merit = best[i];
      row.best_merit = best[i];
      lt.trace.rows.push_back(row);
    }
    return lt;
  };

  SUBCASE("single converged run") {
    std::vector<LabeledTrace> traces;
    std::vector<double> curve(40, 1.0);
    curve.back() = 1e-6;
    traces.push_back(mk("strong", 0, curve));
    const CampaignSummary summary = summarize(traces, 1e-5);
    REQUIRE(summary.cells.size() == 1);
    CHECK(summary.cells[0].n_converged == 1);
    CHECK(summary.cells[0].median_iters == doctest::Approx(40.0));
  }

  SUBCASE("median over three converged runs") {
    std::vector<LabeledTrace> traces;
    for (const auto& [run, n] : std::vector<std::pair<int, int>>{
             {0, 30}, {1, 50}, {2, 70}}) {
      std::vector<double> curve(n, 1.0);
      curve.back() = 1e-7;
      traces.push_back(mk("strong", run, curve));
    }
    const CampaignSummary summary = summarize(traces, 1e-5);
    CHECK(summary.cells[0].median_iters == doctest::Approx(50.0));
  }

  SUBCASE("failed runs count toward runs but not the median") {
    std::vector<LabeledTrace> traces;
    std::vector<double> good(25, 1.0);
    good.back() = 1e-8;
    traces.push_back(mk("strong", 0, good));
    traces.push_back(mk("strong", 1, std::vector<double>(25, 0.5)));
    const CampaignSummary summary = summarize(traces, 1e-5);
    CHECK(summary.cells[0].n_runs == 2);
    CHECK(summary.cells[0].n_converged == 1);
    CHECK(summary.cells[0].median_iters == doctest::Approx(25.0));
  }
}

TEST_CASE("campaigns write traces whose converged count matches the summary") {
  const fs::path out = fs::temp_directory_path() / "cbo_bench_campaign";
  fs::remove_all(out);
  CampaignSpec spec;
  spec.problems = {"quad"};
  spec.dims = {2};
  spec.methods = {"strong"};
  spec.n_runs = 2;
  spec.seed = 13;
  spec.max_evals = 40;
  spec.tol = 1e-5;
  const CampaignSummary summary = write_campaign(spec, out.string());
  REQUIRE(summary.cells.size() == 1);

  int files_converged = 0;
  int files_total = 0;
  for (const auto& entry : fs::directory_iterator(out)) {
    if (entry.path().extension() != ".csv") continue;
    ++files_total;
    const RunTrace trace = ingest_external_trace(entry.path().string());
    if (trace.final_best_merit() < spec.tol) ++files_converged;
  }
  CHECK(files_total == 2);
  CHECK(summary.cells[0].n_converged == files_converged);
  CHECK(fs::exists(out / "summary.txt"));
  fs::remove_all(out);
}

TEST_CASE("unsupported method-problem pairs are recorded, not run") {
  CampaignSpec spec;
  spec.problems = {"prod"};
  spec.dims = {2};
  spec.methods = {"cei"};
  spec.n_runs = 3;
  spec.max_evals = 10;
  const CampaignSummary summary = run_campaign(spec);
  REQUIRE(summary.cells.size() == 1);
  CHECK(summary.cells[0].n_converged == 0);
  CHECK(summary.cells[0].note.find("unsupported") != std::string::npos);
  CHECK(summary.cells[0].final_merits.empty());
}

TEST_CASE("summary text is deterministic and shaped like the results table") {
  CampaignSummary summary;
  summary.tol = 1e-5;
  for (const char* p : {"quad", "prod", "rosen"}) {
    CampaignCell cell;
    cell.problem = p;
    cell.dim = 2;
    cell.method = "strong";
    cell.n_runs = 5;
    cell.n_converged = 5;
    cell.median_iters = 20.0;
    cell.final_merits = {1e-7, 2e-7, 3e-7, 4e-7, 5e-7};
    summary.cells.push_back(cell);
  }
  const std::string text = summary_to_text(summary);
  CHECK(text == summary_to_text(summary));
  CHECK(text.find("5.5.5") != std::string::npos);
  CHECK(text.find("d=2") != std::string::npos);
}

}  // TEST_SUITE
