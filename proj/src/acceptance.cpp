#include "cbo/acceptance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cbo/acquisition.hpp"
#include "cbo/bench.hpp"
#include "cbo/constraints.hpp"
#include "cbo/gp.hpp"
#include "cbo/kernels.hpp"
#include "cbo/optimizer.hpp"
#include "cbo/problems.hpp"
#include "cbo/rng.hpp"
#include "cbo/trust.hpp"

namespace cbo {

namespace {

namespace fs = std::filesystem;

int converged_count(const CampaignSummary& summary, const std::string& problem,
                    int dim, const std::string& method) {
  for (const CampaignCell& cell : summary.cells) {
    if (cell.problem == problem && cell.dim == dim && cell.method == method) {
      return cell.n_converged;
    }
  }
  return -1;
}

// Central finite difference of a scalar function.
template <typename F>
Vector central_fd(const F& f, const Vector& x, double step) {
  Vector g(x.size());
  for (int i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    g[i] = (f(xp) - f(xm)) / (2.0 * step);
  }
  return g;
}

bool grad_close(const Vector& analytic, const Vector& fd, double rel_tol) {
  const double scale = 1.0 + std::max(analytic.norm(), fd.norm());
  return (analytic - fd).norm() <= rel_tol * scale;
}

CriterionResult criterion_table1_strong(int threads) {
  CriterionResult res;
  res.id = 1;
  res.name = "strong method: 5-start convergence at d in {2, 5}";
  CampaignSpec spec;
  spec.problems = {"quad", "prod", "rosen"};
  spec.dims = {2, 5};
  spec.methods = {"strong"};
  spec.n_runs = 5;
  spec.seed = 0;
  spec.max_evals = 300;
  spec.tol = 1e-5;
  spec.threads = threads;
  const CampaignSummary summary = run_campaign(spec);
  res.passed = true;
  std::string notes;
  for (const std::string& p : spec.problems) {
    for (int d : spec.dims) {
      const int n = converged_count(summary, p, d, "strong");
      const bool ok = n >= 4;
      res.passed = res.passed && ok;
      notes += p + " d=" + std::to_string(d) + ": " + std::to_string(n) +
                "/5" + (ok ? "" : " [FAIL: need >= 4]") + "; ";
    }
  }
  res.detail = notes;
  return res;
}

CriterionResult criterion_exact_lagrangian_d5(int threads) {
  CriterionResult res;
  res.id = 2;
  res.name = "exact-Lagrangian method at d = 5";
  CampaignSpec spec;
  spec.problems = {"quad", "prod", "rosen"};
  spec.dims = {5};
  spec.methods = {"exact_lagrangian"};
  spec.n_runs = 5;
  spec.seed = 0;
  spec.max_evals = 300;
  spec.tol = 1e-5;
  spec.threads = threads;
  const CampaignSummary summary = run_campaign(spec);
  const int quad = converged_count(summary, "quad", 5, "exact_lagrangian");
  const int prod = converged_count(summary, "prod", 5, "exact_lagrangian");
  const int rosen = converged_count(summary, "rosen", 5, "exact_lagrangian");
  res.passed = quad >= 4 && prod >= 4 && rosen >= 3;
  res.detail = "quad: " + std::to_string(quad) + "/5 (need 4), prod: " +
               std::to_string(prod) + "/5 (need 4), rosen: " +
               std::to_string(rosen) + "/5 (need 3)";
  return res;
}

// The paper's comparison finds the probability-of-feasibility acquisitions
// either stall with a high merit or take significantly more iterations than
// l2+UC; the assertion here is that ordering on the quadratic problem.
CriterionResult criterion_method_ordering(int threads) {
  CriterionResult res;
  res.id = 3;
  res.name = "method ordering at d = 5: l2+UC beats cEI (stall or >= 2x iterations)";
  CampaignSpec spec;
  spec.problems = {"quad"};
  spec.dims = {5};
  spec.methods = {"l2_penalty", "cei"};
  spec.n_runs = 5;
  spec.seed = 0;
  spec.max_evals = 300;
  spec.tol = 1e-5;
  spec.threads = threads;
  std::vector<LabeledTrace> traces;
  const CampaignSummary summary = run_campaign(spec, &traces);
  const int l2 = converged_count(summary, "quad", 5, "l2_penalty");

  std::optional<double> l2_median;
  for (const CampaignCell& cell : summary.cells) {
    if (cell.method == "l2_penalty") l2_median = cell.median_iters;
  }
  int cei_stalled = 0;
  int cei_worse = 0;
  for (const LabeledTrace& lt : traces) {
    if (lt.key.method != "cei") continue;
    const bool stalled = lt.trace.final_best_merit() > 1e-3;
    if (stalled) ++cei_stalled;
    const auto iters = lt.trace.iterations_to(spec.tol);
    const bool slow =
        l2_median && iters && static_cast<double>(*iters) >= 2.0 * *l2_median;
    if (stalled || slow) ++cei_worse;
  }
  res.passed = l2 >= 3 && cei_worse >= 3;
  res.detail = "l2_penalty converged " + std::to_string(l2) +
               "/5, median iters " +
               (l2_median ? format_double(*l2_median) : std::string("-")) +
               "; cEI stalled above 1e-3 on " + std::to_string(cei_stalled) +
               "/5, stalled-or->=2x-slower on " + std::to_string(cei_worse) +
               "/5 (need 3)";
  return res;
}

CriterionResult criterion_multiplier_oracle() {
  CriterionResult res;
  res.id = 4;
  res.name = "multiplier solve matches brute-force Psi minimization";
  Rng rng(424242);
  int checked = 0;
  double worst = 0.0;
  for (int inst = 0; inst < 200; ++inst) {
    const int n_d = 1 + static_cast<int>(rng.below(6));
    int n_g = static_cast<int>(rng.below(6));
    int n_h = static_cast<int>(rng.below(static_cast<std::uint64_t>(6 - n_g)));
    if (n_g + n_h == 0) n_g = 1;
    ConstraintEval eval;
    eval.g_vals.resize(n_g);
    eval.h_vals.resize(n_h);
    eval.g_grads.resize(n_g, n_d);
    eval.h_grads.resize(n_h, n_d);
    for (int i = 0; i < n_g; ++i) {
      eval.g_vals[i] = rng.uniform(-1.0, 1.0);
      for (int j = 0; j < n_d; ++j) eval.g_grads(i, j) = rng.normal();
    }
    for (int i = 0; i < n_h; ++i) {
      eval.h_vals[i] = rng.uniform(-1.0, 1.0);
      for (int j = 0; j < n_d; ++j) eval.h_grads(i, j) = rng.normal();
    }
    Vector f_grad(n_d);
    for (int j = 0; j < n_d; ++j) f_grad[j] = rng.normal();
    const double alpha1 = 100.0, alpha2 = 100.0;

    const Multipliers psi = solve_multipliers(eval, f_grad, alpha1, alpha2);

    // Extract the quadratic Psi(psi) = psi^T Q psi + 2 b^T psi + c from value
    // evaluations only, then minimize it densely.
    const int m = n_g + n_h;
    const auto value = [&](const Vector& v) {
      return psi_value(v.head(n_g), v.tail(n_h), eval, f_grad, alpha1, alpha2);
    };
    const double c0 = value(Vector::Zero(m));
    Matrix Q(m, m);
    Vector b(m);
    // value(e_i) = Q_ii + 2 b_i + c0 and value(-e_i) = Q_ii - 2 b_i + c0.
    for (int i = 0; i < m; ++i) {
      Vector ei = Vector::Zero(m);
      ei[i] = 1.0;
      const double vi = value(ei);
      const double vmi = value(-ei);
      Q(i, i) = 0.5 * (vi + vmi) - c0;
      b[i] = (vi - vmi) / 4.0;
    }
    for (int i = 0; i < m; ++i) {
      for (int j = i + 1; j < m; ++j) {
        Vector eij = Vector::Zero(m);
        eij[i] = 1.0;
        eij[j] = 1.0;
        const double vij = value(eij);
        Q(i, j) = 0.5 * (vij - c0 - Q(i, i) - Q(j, j) - 2.0 * (b[i] + b[j]));
        Q(j, i) = Q(i, j);
      }
    }
    const Vector oracle = Q.ldlt().solve(-b);
    Vector solved(m);
    solved.head(n_g) = psi.psi_g;
    solved.tail(n_h) = psi.psi_h;
    worst = std::max(worst, (solved - oracle).lpNorm<Eigen::Infinity>());
    ++checked;
  }
  res.passed = worst <= 1e-8;
  res.detail = std::to_string(checked) + " instances, max |psi - oracle| = " +
               format_double(worst) + " (tol 1e-8)";
  return res;
}

CriterionResult criterion_conditioning() {
  CriterionResult res;
  res.id = 5;
  res.name = "preconditioned covariance condition number <= condmax";
  Rng rng(515151);
  const double condmax = 1e10;
  double worst_ratio = 0.0;
  int checked = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const int n_x = 1 + static_cast<int>(rng.below(10));
    const int n_d = 1 + static_cast<int>(rng.below(4));
    Matrix X(n_x, n_d);
    for (int i = 0; i < n_x; ++i) {
      for (int j = 0; j < n_d; ++j) X(i, j) = rng.uniform(-2.0, 2.0);
    }
    Vector gamma(n_d);
    for (int j = 0; j < n_d; ++j) {
      gamma[j] = std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
    }
    Matrix Kg;
    try {
      Kg = build_grad_kernel_matrix(X, KernelParams{gamma});
    } catch (const InputError&) {
      continue;  // coincident random points; astronomically unlikely
    }
    const Preconditioner pre = precondition(Kg, condmax);
    const int m = static_cast<int>(Kg.rows());
    Matrix C = Kg;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) C(i, j) /= pre.P[i] * pre.P[j];
    }
    C.diagonal().array() += pre.eta;
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(C);
    const double ratio = eig.eigenvalues()[m - 1] / eig.eigenvalues()[0];
    worst_ratio = std::max(worst_ratio, ratio);
    ++checked;
  }
  res.passed = worst_ratio <= condmax * (1.0 + 1e-6);
  res.detail = std::to_string(checked) + " training sets, max eigenvalue ratio " +
               format_double(worst_ratio) + " (condmax 1e10)";
  return res;
}

CriterionResult criterion_gp_and_gradients() {
  CriterionResult res;
  res.id = 6;
  res.name = "GP interpolation and analytic-gradient checks";
  std::string notes;
  bool ok = true;
  Rng rng(616161);

  // Noise-free interpolation of values and gradients at training points,
  // on data drawn from a GP whose length scales keep the covariance well
  // conditioned (the regime where the nugget perturbation is negligible).
  for (const int n_d : {1, 2, 3}) {
    const int n_x = 8;
    Matrix X(n_x, n_d);
    for (int i = 0; i < n_x; ++i) {
      for (int j = 0; j < n_d; ++j) X(i, j) = rng.uniform(-2.0, 2.0);
    }
    const KernelParams truth{Vector::Constant(n_d, 1.5)};
    Matrix Kg = build_grad_kernel_matrix(X, truth);
    Kg.diagonal().array() += 1e-12;
    const Eigen::LLT<Matrix> llt(Kg);
    Vector z(Kg.rows());
    for (int i = 0; i < z.size(); ++i) z[i] = rng.normal();
    TrainingSet ts;
    ts.X = X;
    ts.f_grad = Matrix(llt.matrixL()) * z;

    HyperSearchOptions opts;
    opts.n_starts = 20;
    opts.seed = 99 + n_d;
    const KernelParams params = select_hyperparameters(ts, 1e10, opts);
    const GpModel model = GpModel::fit(ts, params, 1e10);
    for (int i = 0; i < n_x; ++i) {
      const GpModel::Posterior post = model.posterior(X.row(i));
      const double fi = ts.f_grad[i];
      if (std::abs(post.mean - fi) > 1e-4 * (1.0 + std::abs(fi))) {
        ok = false;
        notes += "value interpolation failed at d=" + std::to_string(n_d) + "; ";
      }
      Vector gi(n_d);
      for (int j = 0; j < n_d; ++j) gi[j] = ts.f_grad[(j + 1) * n_x + i];
      if ((post.mean_grad - gi).norm() > 1e-3 * (1.0 + gi.norm())) {
        ok = false;
        notes += "gradient interpolation failed at d=" + std::to_string(n_d) + "; ";
      }
      if (post.var > 1e-4 * model.sigK2()) {
        ok = false;
        notes += "variance not collapsed at d=" + std::to_string(n_d) + "; ";
      }
    }
  }

  // Kernel derivatives against finite differences.
  for (int rep = 0; rep < 25; ++rep) {
    const int n_d = 1 + static_cast<int>(rng.below(4));
    Vector x(n_d), y(n_d), gamma(n_d);
    for (int j = 0; j < n_d; ++j) {
      x[j] = rng.uniform(-2.0, 2.0);
      y[j] = rng.uniform(-2.0, 2.0);
      gamma[j] = std::exp(rng.uniform(std::log(0.2), std::log(5.0)));
    }
    const KernelParams params{gamma};
    const KernelDerivatives kd = kernel_derivatives(x, y, params);
    const Vector fd_x = central_fd(
        [&](const Vector& xx) { return kernel_value(xx, y, params); }, x, 1e-6);
    if (!grad_close(kd.d_dx, fd_x, 1e-4)) {
      ok = false;
      notes += "kernel d_dx FD mismatch; ";
    }
  }

  // Posterior and acquisition gradients on a fitted bundle.  Moderate fixed
  // length scales keep the covariance condition number far below condmax, so
  // the finite-difference oracle is not polluted by amplified roundoff.
  {
    const TestProblem tp = make_quadratic(2);
    Rng datarng(777);
    const int n_x = 8;
    Matrix X(n_x, 2);
    for (int i = 0; i < n_x; ++i) {
      for (int j = 0; j < 2; ++j) X(i, j) = datarng.uniform(-3.0, 3.0);
    }
    const auto fit_on = [&](const DifferentiableFn& fn, double gamma) {
      Vector vals(n_x);
      Matrix grads(n_x, 2);
      Vector grad(2);
      for (int i = 0; i < n_x; ++i) {
        vals[i] = fn(X.row(i), &grad);
        grads.row(i) = grad;
      }
      const TrainingSet ts = TrainingSet::from_values(X, vals, grads);
      return GpModel::fit(ts, KernelParams{Vector::Constant(2, gamma)}, 1e10);
    };
    SurrogateBundle bundle;
    bundle.f_model = fit_on(tp.problem.objective, 0.9);
    bundle.g_models.push_back(fit_on(tp.problem.g[0], 1.3));

    const double f_best = 0.5;
    int fd_failures = 0;
    for (int rep = 0; rep < 50; ++rep) {
      Vector x(2);
      x[0] = rng.uniform(-3.0, 3.0);
      x[1] = rng.uniform(-3.0, 3.0);

      const GpModel::Posterior post = bundle.f_model.posterior(x);
      const Vector fd_mean = central_fd(
          [&](const Vector& xx) { return bundle.f_model.posterior(xx).mean; }, x,
          1e-6);
      if (!grad_close(post.mean_grad, fd_mean, 1e-4)) ++fd_failures;
      const Vector fd_var = central_fd(
          [&](const Vector& xx) { return bundle.f_model.posterior(xx).var; }, x,
          1e-6);
      if (!grad_close(post.var_grad, fd_var, 1e-4)) ++fd_failures;

      // sigma = sqrt(var) has unbounded curvature at var = 0; keep a margin.
      const double sigma_f = std::sqrt(std::max(post.var, 0.0));
      if (sigma_f > 1e-3) {
        const ValueGrad uc = acq_uc(bundle, x, 1.0);
        if (!grad_close(uc.grad,
                        central_fd([&](const Vector& xx) {
                          return acq_uc(bundle, xx, 1.0).value;
                        }, x, 1e-6),
                        1e-4)) {
          ++fd_failures;
        }
        const ValueGrad ei = acq_ei(bundle, x, f_best);
        if (!grad_close(ei.grad,
                        central_fd([&](const Vector& xx) {
                          return acq_ei(bundle, xx, f_best).value;
                        }, x, 1e-6),
                        1e-4)) {
          ++fd_failures;
        }
      }
      // Seam margin for the piecewise-defined penalties.
      const GpModel::Posterior pg = bundle.g_models[0].posterior(x);
      const double sg = std::sqrt(std::max(pg.var, 0.0));
      if (std::abs(pg.mean) > 1e-3) {
        const ValueGrad pen = acq_l2_penalty(bundle, x);
        if (!grad_close(pen.grad,
                        central_fd([&](const Vector& xx) {
                          return acq_l2_penalty(bundle, xx).value;
                        }, x, 1e-6),
                        1e-4)) {
          ++fd_failures;
        }
      }
      if (std::abs(pg.mean - sg) > 1e-3) {
        const ValueGrad exp = acq_exploration(bundle, x);
        if (!grad_close(exp.grad,
                        central_fd([&](const Vector& xx) {
                          return acq_exploration(bundle, xx).value;
                        }, x, 1e-6),
                        1e-4)) {
          ++fd_failures;
        }
      }
      const ValueGrad cei = acq_cei(bundle, x, f_best);
      if (!grad_close(cei.grad,
                      central_fd([&](const Vector& xx) {
                        return acq_cei(bundle, xx, f_best).value;
                      }, x, 1e-6),
                      1e-4)) {
        ++fd_failures;
      }
      const ValueGrad cuc = acq_cuc(bundle, x, 0.5);
      if (!grad_close(cuc.grad,
                      central_fd([&](const Vector& xx) {
                        return acq_cuc(bundle, xx, 0.5).value;
                      }, x, 1e-6),
                      1e-4)) {
        ++fd_failures;
      }
      // Exact-Lagrangian gradient in its frozen-multiplier sense.
      const detail::QlagAnchor anchor = detail::qlag_anchor(bundle, tp.problem, x);
      const ValueGrad lag = acq_exact_lagrangian(bundle, tp.problem, x, 100.0);
      if (!grad_close(lag.grad,
                      central_fd([&](const Vector& xx) {
                        return detail::qlag_value_frozen(bundle, tp.problem, xx,
                                                         100.0, anchor);
                      }, x, 1e-6),
                      1e-4)) {
        ++fd_failures;
      }
      // Trust regions.
      Vector tr_grad;
      const Vector center = Vector::Zero(2);
      tr_circle(x, center, &tr_grad);
      if (!grad_close(tr_grad,
                      central_fd([&](const Vector& xx) {
                        return tr_circle(xx, center);
                      }, x, 1e-6),
                      1e-4)) {
        ++fd_failures;
      }
      Vector sig_grad;
      bundle.f_model.normalized_variance(x, &sig_grad);
      if (!grad_close(sig_grad,
                      central_fd([&](const Vector& xx) {
                        return bundle.f_model.normalized_variance(xx);
                      }, x, 1e-6),
                      1e-4)) {
        ++fd_failures;
      }
    }
    if (fd_failures > 0) {
      ok = false;
      notes += std::to_string(fd_failures) + " acquisition/posterior FD mismatches; ";
    }
  }

  // Test-problem gradients.
  for (const std::string& name : problem_names()) {
    for (const int n_d : {2, 5}) {
      const TestProblem tp = make_problem(name, n_d);
      int failures = 0;
      for (int rep = 0; rep < 20; ++rep) {
        Vector x(n_d);
        for (int j = 0; j < n_d; ++j) {
          x[j] = rng.uniform(tp.problem.lb[j], tp.problem.ub[j]);
        }
        Vector grad(n_d);
        tp.problem.objective(x, &grad);
        if (!grad_close(grad,
                        central_fd([&](const Vector& xx) {
                          return tp.problem.objective(xx, nullptr);
                        }, x, 1e-5),
                        1e-4)) {
          ++failures;
        }
        for (const DifferentiableFn& c : tp.problem.g) {
          c(x, &grad);
          if (!grad_close(grad,
                          central_fd([&](const Vector& xx) {
                            return c(xx, nullptr);
                          }, x, 1e-5),
                          1e-4)) {
            ++failures;
          }
        }
        for (const DifferentiableFn& c : tp.problem.h) {
          c(x, &grad);
          if (!grad_close(grad,
                          central_fd([&](const Vector& xx) {
                            return c(xx, nullptr);
                          }, x, 1e-5),
                          1e-4)) {
            ++failures;
          }
        }
      }
      if (failures > 0) {
        ok = false;
        notes += name + " d=" + std::to_string(n_d) + " gradient FD failures; ";
      }
    }
  }

  res.passed = ok;
  res.detail = ok ? "interpolation and all finite-difference checks passed"
                  : notes;
  return res;
}

CriterionResult criterion_analytic_optima() {
  CriterionResult res;
  res.id = 7;
  res.name = "exact merit <= 1e-8 at every closed-form optimum";
  bool ok = true;
  std::string notes;
  for (const std::string& name : problem_names()) {
    for (const int n_d : {2, 5, 10}) {
      const TestProblem tp = make_problem(name, n_d);
      for (const Vector& opt : tp.optima) {
        const double merit = merit_exact_aug_lagrangian(tp.problem, opt, 100.0);
        notes += name + " d=" + std::to_string(n_d) + ": " +
                  format_double(merit) + "; ";
        if (!(std::abs(merit) <= 1e-8)) ok = false;
      }
    }
  }
  res.passed = ok;
  res.detail = notes;
  return res;
}

CriterionResult criterion_determinism(const AcceptanceOptions& options) {
  CriterionResult res;
  res.id = 8;
  res.name = "campaign determinism: identical spec/seed, byte-identical summary";
  const fs::path scratch = options.scratch_dir.empty()
                               ? fs::temp_directory_path() / "cbo_acceptance"
                               : fs::path(options.scratch_dir);
  fs::create_directories(scratch);
  const fs::path dir_a = scratch / "determinism_a";
  const fs::path dir_b = scratch / "determinism_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);

  const auto read_file = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };

  if (!options.cbo_binary.empty()) {
    const std::string base = "\"" + options.cbo_binary +
                             "\" campaign --problems quad --dims 2 --methods "
                             "strong --runs 2 --seed 7 --max-evals 25 --out ";
    const int rc_a = std::system((base + dir_a.string() + " >/dev/null").c_str());
    const int rc_b = std::system((base + dir_b.string() + " >/dev/null").c_str());
    if (rc_a != 0 || rc_b != 0) {
      res.passed = false;
      res.detail = "cbo campaign invocation failed";
      return res;
    }
  } else {
    CampaignSpec spec;
    spec.problems = {"quad"};
    spec.dims = {2};
    spec.methods = {"strong"};
    spec.n_runs = 2;
    spec.seed = 7;
    spec.max_evals = 25;
    spec.threads = options.threads;
    write_campaign(spec, dir_a.string());
    write_campaign(spec, dir_b.string());
  }
  const std::string a = read_file(dir_a / "summary.txt");
  const std::string b = read_file(dir_b / "summary.txt");
  res.passed = !a.empty() && a == b;
  res.detail = res.passed ? "summary files are byte-identical"
                          : "summary files differ or are empty";
  return res;
}

}  // namespace

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options) {
  const auto wants = [&](int id) {
    return options.only.empty() ||
           std::find(options.only.begin(), options.only.end(), id) !=
               options.only.end();
  };
  std::vector<CriterionResult> results;
  if (wants(1)) results.push_back(criterion_table1_strong(options.threads));
  if (wants(2)) results.push_back(criterion_exact_lagrangian_d5(options.threads));
  if (wants(3)) results.push_back(criterion_method_ordering(options.threads));
  if (wants(4)) results.push_back(criterion_multiplier_oracle());
  if (wants(5)) results.push_back(criterion_conditioning());
  if (wants(6)) results.push_back(criterion_gp_and_gradients());
  if (wants(7)) results.push_back(criterion_analytic_optima());
  if (wants(8)) results.push_back(criterion_determinism(options));
  return results;
}

}  // namespace cbo
