#include <CLI11.hpp>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cbo/acceptance.hpp"
#include "cbo/bench.hpp"
#include "cbo/optimizer.hpp"
#include "cbo/problems.hpp"
#include "cbo/rng.hpp"
#include "cbo/trace.hpp"

namespace {

namespace fs = std::filesystem;

// Flat key=value config file; '#' starts a comment.
std::map<std::string, std::string> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw cbo::ParseError("cannot open config file '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto strip = [](std::string s) {
      const size_t a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      const size_t b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    line = strip(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw cbo::ParseError("config line " + std::to_string(line_no) +
                            ": expected key=value");
    }
    kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
  }
  return kv;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int run_single(const std::string& problem, int dim, const std::string& method,
               std::uint64_t seed, int max_evals, double tol, double rosen_a,
               const std::string& out_dir) {
  const cbo::TestProblem tp = cbo::make_problem(problem, dim, rosen_a);
  const std::vector<cbo::Vector> starts = cbo::lhs_starts(
      tp.problem, 1,
      cbo::derive_seed(cbo::derive_seed(seed, problem),
                       {0x6c6873ULL, static_cast<std::uint64_t>(dim)}));
  cbo::BoConfig config;
  config.method = cbo::method_from_string(method);
  config.seed = seed;
  config.max_evals = max_evals;
  config.merit_tol = tol;
  const cbo::RunTrace trace = cbo::run(tp.problem, starts[0], config);

  cbo::RunKey key{problem, dim, method, 0};
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    cbo::write_trace_csv(trace,
                         (fs::path(out_dir) / cbo::trace_filename(key)).string());
  } else {
    std::cout << cbo::trace_to_csv(trace);
  }
  const double final_merit = trace.final_best_merit();
  std::cerr << problem << " d=" << dim << " " << method << ": "
            << trace.rows.size() << " evaluations, final merit "
            << cbo::format_double(final_merit)
            << (trace.converged ? " (converged)" : " (budget reached)") << "\n";
  return trace.converged ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local gradient-enhanced Bayesian optimization with nonlinear "
               "constraints: benchmark harness"};
  app.require_subcommand(1);

  // --- run ---
  auto* run_cmd = app.add_subcommand("run", "single optimization run");
  std::string problem = "rosen", method = "strong", out_dir;
  int dim = 5, max_evals = 300;
  std::uint64_t seed = 0;
  double tol = 1e-5, rosen_a = 100.0;
  run_cmd->add_option("--problem", problem, "quad, prod, or rosen");
  run_cmd->add_option("--dim", dim, "problem dimension")->check(CLI::PositiveNumber);
  run_cmd->add_option("--method", method,
                      "exact_lagrangian, strong, l2_penalty, cei, cuc");
  run_cmd->add_option("--seed", seed, "random seed");
  run_cmd->add_option("--max-evals", max_evals, "evaluation budget");
  run_cmd->add_option("--tol", tol, "merit convergence tolerance");
  run_cmd->add_option("--rosen-a", rosen_a, "Rosenbrock curvature coefficient");
  run_cmd->add_option("--out", out_dir, "directory for the trace CSV (stdout if unset)");

  // --- campaign ---
  auto* campaign_cmd = app.add_subcommand("campaign", "grid of runs with a summary");
  std::string config_path, campaign_out = "results";
  std::string problems_arg, dims_arg, methods_arg;
  int runs = 5, threads = 0;
  std::uint64_t campaign_seed = 0;
  int campaign_evals = 300;
  double campaign_tol = 1e-5, campaign_rosen_a = 100.0;
  campaign_cmd->add_option("--config", config_path, "key=value config file");
  campaign_cmd->add_option("--problems", problems_arg, "comma list (default quad,prod,rosen)");
  campaign_cmd->add_option("--dims", dims_arg, "comma list (default 2,5)");
  campaign_cmd->add_option("--methods", methods_arg, "comma list (default strong)");
  campaign_cmd->add_option("--runs", runs, "runs per cell");
  campaign_cmd->add_option("--seed", campaign_seed, "campaign seed");
  campaign_cmd->add_option("--max-evals", campaign_evals, "budget per run");
  campaign_cmd->add_option("--tol", campaign_tol, "merit tolerance");
  campaign_cmd->add_option("--rosen-a", campaign_rosen_a, "Rosenbrock coefficient");
  campaign_cmd->add_option("--threads", threads, "parallel workers (0: CBO_THREADS)");
  campaign_cmd->add_option("--out", campaign_out, "output directory");

  // --- summarize ---
  auto* summarize_cmd = app.add_subcommand("summarize", "summarize a directory of trace CSVs");
  std::string traces_dir;
  double summarize_tol = 1e-5;
  summarize_cmd->add_option("--traces", traces_dir, "directory of *.csv traces")
      ->required();
  summarize_cmd->add_option("--tol", summarize_tol, "merit tolerance");

  // --- check ---
  auto* check_cmd = app.add_subcommand("check", "acceptance suite");
  std::vector<int> only;
  int check_threads = 0;
  check_cmd->add_option("--only", only, "criterion ids to run (default all)");
  check_cmd->add_option("--threads", check_threads, "parallel workers");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      return run_single(problem, dim, method, seed, max_evals, tol, rosen_a,
                        out_dir);
    }

    if (campaign_cmd->parsed()) {
      cbo::CampaignSpec spec;
      if (!config_path.empty()) {
        const auto kv = read_config(config_path);
        const auto get = [&](const char* key) -> const std::string* {
          const auto it = kv.find(key);
          return it == kv.end() ? nullptr : &it->second;
        };
        if (const auto* v = get("problems")) spec.problems = split_list(*v);
        if (const auto* v = get("problem")) spec.problems = split_list(*v);
        if (const auto* v = get("dims")) {
          spec.dims.clear();
          for (const std::string& d : split_list(*v)) spec.dims.push_back(std::stoi(d));
        }
        if (const auto* v = get("dim")) spec.dims = {std::stoi(*v)};
        if (const auto* v = get("methods")) spec.methods = split_list(*v);
        if (const auto* v = get("method")) spec.methods = split_list(*v);
        if (const auto* v = get("runs")) spec.n_runs = std::stoi(*v);
        if (const auto* v = get("seed")) spec.seed = std::stoull(*v);
        if (const auto* v = get("max_evals")) spec.max_evals = std::stoi(*v);
        if (const auto* v = get("tol")) spec.tol = std::stod(*v);
        if (const auto* v = get("rosen_a")) spec.rosen_a = std::stod(*v);
        if (const auto* v = get("threads")) spec.threads = std::stoi(*v);
      }
      // CLI flags override file keys.
      if (!problems_arg.empty()) spec.problems = split_list(problems_arg);
      if (!dims_arg.empty()) {
        spec.dims.clear();
        for (const std::string& d : split_list(dims_arg)) spec.dims.push_back(std::stoi(d));
      }
      if (!methods_arg.empty()) spec.methods = split_list(methods_arg);
      if (campaign_cmd->count("--runs")) spec.n_runs = runs;
      if (campaign_cmd->count("--seed")) spec.seed = campaign_seed;
      if (campaign_cmd->count("--max-evals")) spec.max_evals = campaign_evals;
      if (campaign_cmd->count("--tol")) spec.tol = campaign_tol;
      if (campaign_cmd->count("--rosen-a")) spec.rosen_a = campaign_rosen_a;
      if (campaign_cmd->count("--threads")) spec.threads = threads;

      const cbo::CampaignSummary summary = cbo::write_campaign(spec, campaign_out);
      std::cout << cbo::summary_to_text(summary);
      return 0;
    }

    if (summarize_cmd->parsed()) {
      std::vector<cbo::LabeledTrace> traces;
      std::vector<fs::path> files;
      for (const auto& entry : fs::directory_iterator(traces_dir)) {
        if (entry.path().extension() == ".csv") files.push_back(entry.path());
      }
      std::sort(files.begin(), files.end());
      for (const fs::path& file : files) {
        // <problem>_d<dim>_<method>_run<k>.csv
        const std::string stem = file.stem().string();
        cbo::RunKey key;
        const size_t d_pos = stem.find("_d");
        const size_t run_pos = stem.rfind("_run");
        if (d_pos == std::string::npos || run_pos == std::string::npos) {
          std::cerr << "skipping '" << stem << "': unrecognized trace name\n";
          continue;
        }
        key.problem = stem.substr(0, d_pos);
        const size_t method_pos = stem.find('_', d_pos + 2);
        key.dim = std::stoi(stem.substr(d_pos + 2, method_pos - d_pos - 2));
        key.method = stem.substr(method_pos + 1, run_pos - method_pos - 1);
        key.run = std::stoi(stem.substr(run_pos + 4));
        std::vector<std::string> warnings;
        cbo::LabeledTrace lt;
        lt.key = key;
        lt.trace = cbo::ingest_external_trace(file.string(), &warnings);
        for (const std::string& w : warnings) {
          std::cerr << file.filename().string() << ": " << w << "\n";
        }
        traces.push_back(std::move(lt));
      }
      if (traces.empty()) {
        std::cerr << "no traces found in '" << traces_dir << "'\n";
        return 1;
      }
      std::cout << cbo::summary_to_text(cbo::summarize(traces, summarize_tol));
      return 0;
    }

    if (check_cmd->parsed()) {
      cbo::AcceptanceOptions options;
      options.only = only;
      options.threads = check_threads;
      options.cbo_binary = argv[0];
      const std::vector<cbo::CriterionResult> results =
          cbo::run_acceptance(options);
      bool all_passed = true;
      for (const cbo::CriterionResult& r : results) {
        std::cout << "criterion " << r.id << " [" << (r.passed ? "PASS" : "FAIL")
                  << "] " << r.name << ": " << r.detail << "\n";
        all_passed = all_passed && r.passed;
      }
      return all_passed ? 0 : 3;
    }
  } catch (const cbo::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const cbo::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
