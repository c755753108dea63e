#include "cbo/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <thread>

#include "cbo/rng.hpp"

namespace cbo {

std::vector<Vector> lhs_starts(const ConstrainedProblem& problem, int n_runs,
                               std::uint64_t seed) {
  if (n_runs < 1) throw InputError("need at least one run");
  const int n_d = problem.dim();
  Rng rng(derive_seed(seed, "lhs"));
  Matrix pts(n_runs, n_d);
  for (int d = 0; d < n_d; ++d) {
    const std::vector<int> perm = rng.permutation(n_runs);
    const double width = (problem.ub[d] - problem.lb[d]) / n_runs;
    for (int k = 0; k < n_runs; ++k) {
      pts(k, d) = problem.lb[d] + (perm[k] + rng.uniform()) * width;
    }
  }
  std::vector<Vector> starts;
  starts.reserve(n_runs);
  for (int k = 0; k < n_runs; ++k) starts.push_back(pts.row(k));
  return starts;
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CBO_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

std::string trace_filename(const RunKey& key) {
  return key.problem + "_d" + std::to_string(key.dim) + "_" + key.method +
         "_run" + std::to_string(key.run) + ".csv";
}

namespace {

struct Job {
  RunKey key;
  Vector start;
  BoConfig config;
};

bool method_supports(Method method, const TestProblem& tp) {
  if (method != Method::cei && method != Method::cuc) return true;
  return tp.problem.n_nonlinear_eq() == 0;
}

}  // namespace

CampaignSummary run_campaign(const CampaignSpec& spec,
                             std::vector<LabeledTrace>* traces) {
  std::vector<Job> jobs;
  std::vector<CampaignCell> unsupported;
  for (const std::string& pname : spec.problems) {
    for (int dim : spec.dims) {
      const TestProblem tp = make_problem(pname, dim, spec.rosen_a);
      const std::vector<Vector> starts = lhs_starts(
          tp.problem, spec.n_runs,
          derive_seed(derive_seed(spec.seed, pname),
                      {0x6c6873ULL, static_cast<std::uint64_t>(dim)}));
      for (const std::string& mname : spec.methods) {
        const Method method = method_from_string(mname);
        if (!method_supports(method, tp)) {
          CampaignCell cell;
          cell.problem = pname;
          cell.dim = dim;
          cell.method = mname;
          cell.n_runs = spec.n_runs;
          cell.note = "unsupported: equality constraints";
          unsupported.push_back(std::move(cell));
          continue;
        }
        for (int run = 0; run < spec.n_runs; ++run) {
          Job job;
          job.key = {pname, dim, mname, run};
          job.start = starts[run];
          job.config.method = method;
          job.config.max_evals = spec.max_evals;
          job.config.merit_tol = spec.tol;
          job.config.seed = derive_seed(
              derive_seed(derive_seed(spec.seed, pname), mname),
              {static_cast<std::uint64_t>(dim), static_cast<std::uint64_t>(run)});
          jobs.push_back(std::move(job));
        }
      }
    }
  }

  struct Outcome {
    RunTrace trace;
    std::string error;
  };
  std::vector<Outcome> outcomes(jobs.size());
  const int n_threads =
      std::min<int>(resolve_threads(spec.threads), static_cast<int>(jobs.size()));
  std::atomic<size_t> next{0};
  const auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const Job& job = jobs[i];
      try {
        const TestProblem tp = make_problem(job.key.problem, job.key.dim,
                                            spec.rosen_a);
        outcomes[i].trace = run(tp.problem, job.start, job.config);
      } catch (const std::exception& e) {
        outcomes[i].error = e.what();
      }
    }
  };
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  std::vector<LabeledTrace> labeled;
  labeled.reserve(jobs.size());
  std::vector<std::string> run_notes;
  for (size_t i = 0; i < jobs.size(); ++i) {
    if (!outcomes[i].error.empty()) {
      // Failed runs keep an empty trace: counted as non-converged.
      LabeledTrace lt;
      lt.key = jobs[i].key;
      labeled.push_back(std::move(lt));
      run_notes.push_back(trace_filename(jobs[i].key) + " failed: " +
                          outcomes[i].error);
      continue;
    }
    labeled.push_back({jobs[i].key, std::move(outcomes[i].trace)});
  }

  CampaignSummary summary = summarize(labeled, spec.tol);
  for (CampaignCell& cell : unsupported) summary.cells.push_back(std::move(cell));
  std::sort(summary.cells.begin(), summary.cells.end(),
            [](const CampaignCell& a, const CampaignCell& b) {
              return std::tie(a.problem, a.dim, a.method) <
                     std::tie(b.problem, b.dim, b.method);
            });
  if (!run_notes.empty()) {
    for (CampaignCell& cell : summary.cells) {
      for (const std::string& note : run_notes) {
        const std::string prefix =
            cell.problem + "_d" + std::to_string(cell.dim) + "_" + cell.method;
        if (note.rfind(prefix, 0) == 0) {
          cell.note += (cell.note.empty() ? "" : "; ") + note;
        }
      }
    }
  }
  if (traces) *traces = std::move(labeled);
  return summary;
}

CampaignSummary summarize(const std::vector<LabeledTrace>& traces, double tol) {
  CampaignSummary summary;
  summary.tol = tol;

  std::vector<std::tuple<std::string, int, std::string>> keys;
  for (const LabeledTrace& lt : traces) {
    const auto key = std::make_tuple(lt.key.problem, lt.key.dim, lt.key.method);
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      keys.push_back(key);
    }
  }
  std::sort(keys.begin(), keys.end());

  for (const auto& [pname, dim, mname] : keys) {
    CampaignCell cell;
    cell.problem = pname;
    cell.dim = dim;
    cell.method = mname;
    std::vector<double> iters;
    for (const LabeledTrace& lt : traces) {
      if (lt.key.problem != pname || lt.key.dim != dim || lt.key.method != mname) {
        continue;
      }
      ++cell.n_runs;
      cell.final_merits.push_back(lt.trace.final_best_merit());
      if (const auto reached = lt.trace.iterations_to(tol)) {
        ++cell.n_converged;
        iters.push_back(static_cast<double>(*reached));
      }
    }
    if (!iters.empty()) {
      std::sort(iters.begin(), iters.end());
      const size_t n = iters.size();
      cell.median_iters = (n % 2 == 1)
                              ? iters[n / 2]
                              : 0.5 * (iters[n / 2 - 1] + iters[n / 2]);
    }
    summary.cells.push_back(std::move(cell));
  }
  return summary;
}

std::string summary_to_text(const CampaignSummary& summary) {
  std::string out = "# campaign summary\n";
  out += "tol=" + format_double(summary.tol) + "\n";
  out += "problem,dim,method,runs,converged,median_iters,final_merits,note\n";
  for (const CampaignCell& cell : summary.cells) {
    out += cell.problem + "," + std::to_string(cell.dim) + "," + cell.method +
           "," + std::to_string(cell.n_runs) + "," +
           std::to_string(cell.n_converged) + ",";
    out += cell.median_iters ? format_double(*cell.median_iters) : "none";
    out += ",";
    for (size_t i = 0; i < cell.final_merits.size(); ++i) {
      if (i) out += ";";
      out += std::isfinite(cell.final_merits[i])
                 ? format_double(cell.final_merits[i])
                 : "inf";
    }
    out += "," + cell.note + "\n";
  }

  // Table-shaped view: rows are methods, columns dimensions, each cell the
  // converged counts for quad . prod . rosen.
  std::vector<std::string> methods;
  std::vector<int> dims;
  bool have_all = true;
  for (const char* p : {"quad", "prod", "rosen"}) {
    bool found = false;
    for (const CampaignCell& cell : summary.cells) {
      if (cell.problem == p) found = true;
    }
    have_all = have_all && found;
  }
  if (have_all) {
    for (const CampaignCell& cell : summary.cells) {
      if (std::find(methods.begin(), methods.end(), cell.method) == methods.end()) {
        methods.push_back(cell.method);
      }
      if (std::find(dims.begin(), dims.end(), cell.dim) == dims.end()) {
        dims.push_back(cell.dim);
      }
    }
    std::sort(methods.begin(), methods.end());
    std::sort(dims.begin(), dims.end());
    const auto count = [&](const std::string& m, int d,
                           const std::string& p) -> std::string {
      for (const CampaignCell& cell : summary.cells) {
        if (cell.method == m && cell.dim == d && cell.problem == p) {
          return std::to_string(cell.n_converged);
        }
      }
      return "-";
    };
    out += "\n# converged runs (quad.prod.rosen)\n";
    out += "method";
    for (int d : dims) out += "\td=" + std::to_string(d);
    out += "\n";
    for (const std::string& m : methods) {
      out += m;
      for (int d : dims) {
        out += "\t" + count(m, d, "quad") + "." + count(m, d, "prod") + "." +
               count(m, d, "rosen");
      }
      out += "\n";
    }
  }
  return out;
}

CampaignSummary write_campaign(const CampaignSpec& spec,
                               const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<LabeledTrace> traces;
  const CampaignSummary summary = run_campaign(spec, &traces);
  for (const LabeledTrace& lt : traces) {
    if (lt.trace.rows.empty()) continue;  // failed run
    write_trace_csv(lt.trace,
                    (std::filesystem::path(out_dir) / trace_filename(lt.key)).string());
  }
  std::ofstream file(std::filesystem::path(out_dir) / "summary.txt",
                     std::ios::binary);
  if (!file) throw ParseError("cannot write summary in '" + out_dir + "'");
  file << summary_to_text(summary);
  return summary;
}

}  // namespace cbo
