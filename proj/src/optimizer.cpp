#include "cbo/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cbo/rng.hpp"

namespace cbo {

namespace {

constexpr double kMeritRho = 100.0;
constexpr double kActiveTol = 1e-6;
constexpr double kProgressTol = 1e-12;

}  // namespace

Method method_from_string(const std::string& name) {
  if (name == "exact_lagrangian") return Method::exact_lagrangian;
  if (name == "strong") return Method::strong;
  if (name == "l2_penalty") return Method::l2_penalty;
  if (name == "cei") return Method::cei;
  if (name == "cuc") return Method::cuc;
  throw InputError("unknown method '" + name + "'");
}

std::string method_to_string(Method method) {
  switch (method) {
    case Method::exact_lagrangian: return "exact_lagrangian";
    case Method::strong: return "strong";
    case Method::l2_penalty: return "l2_penalty";
    case Method::cei: return "cei";
    case Method::cuc: return "cuc";
  }
  throw InputError("invalid method enum value");
}

std::vector<std::string> method_names() {
  return {"exact_lagrangian", "strong", "l2_penalty", "cei", "cuc"};
}

void BoConfig::validate(const ConstrainedProblem& problem) const {
  if (omega < 0.0) throw InputError("omega must be >= 0");
  if (!(rho1 > 0.0) || !(rho2 >= 0.0)) throw InputError("rho1/rho2 must be positive");
  if (!(nu1 > 0.0) || !(nu2 > 0.0)) throw InputError("nu1/nu2 must be positive");
  if (!(eps_l2 > 0.0)) throw InputError("eps_l2 must be positive");
  if (data_region_size < 1 || min_recent < 0 || stage1_until < 1) {
    throw InputError("data-region/stage parameters must be positive");
  }
  if (!(condmax > 1.0)) throw InputError("condmax must exceed 1");
  if (n_hyper_starts < 1 || n_acq_starts < 1 || max_evals < 1) {
    throw InputError("start counts and budget must be positive");
  }
  if (!(merit_tol > 0.0)) throw InputError("merit_tol must be positive");
  if ((method == Method::cei || method == Method::cuc) &&
      problem.n_nonlinear_eq() > 0) {
    throw UnsupportedError(
        "probability-of-feasibility methods cannot handle equality "
        "constraints (satisfaction probability has measure zero)");
  }
}

std::vector<int> select_data_region(const std::vector<EvalRecord>& history,
                                    const Vector& x_best, int size,
                                    int min_recent) {
  const int n = static_cast<int>(history.size());
  if (n == 0) throw InputError("history is empty");
  std::vector<int> selected;
  if (n <= size) {
    selected.resize(n);
    for (int i = 0; i < n; ++i) selected[i] = i;
    return selected;
  }

  // Forced: the last min_recent evaluations and the incumbent itself.
  std::vector<bool> forced(n, false);
  for (int i = std::max(0, n - min_recent); i < n; ++i) forced[i] = true;
  int best_index = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  std::vector<std::pair<double, int>> by_distance;
  by_distance.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double d = (history[i].x - x_best).squaredNorm();
    by_distance.emplace_back(d, i);
    if (d < best_dist) {
      best_dist = d;
      best_index = i;
    }
  }
  forced[best_index] = true;

  // Ties broken by lower history index for determinism.
  std::sort(by_distance.begin(), by_distance.end());

  int n_forced = 0;
  for (int i = 0; i < n; ++i) n_forced += forced[i] ? 1 : 0;
  const int room = std::max(0, size - n_forced);
  int taken = 0;
  std::vector<bool> keep = forced;
  for (const auto& [dist, idx] : by_distance) {
    if (taken >= room) break;
    if (keep[idx]) continue;
    keep[idx] = true;
    ++taken;
  }
  for (int i = 0; i < n; ++i) {
    if (keep[i]) selected.push_back(i);
  }
  return selected;
}

double sigmoid_shrink(double z, double nu1, double nu2) {
  if (!(z > 0.0)) return 0.0;
  const double t = std::pow(nu1 * z, nu2);
  return t / (t + 1.0);
}

namespace {

EvalRecord evaluate_problem(const ConstrainedProblem& problem, const Vector& x) {
  const int n_d = problem.dim();
  const int n_g = problem.n_nonlinear_ineq();
  const int n_h = problem.n_nonlinear_eq();
  EvalRecord rec;
  rec.x = x;
  rec.f_grad.resize(n_d);
  rec.f = problem.objective(x, &rec.f_grad);
  rec.g_vals.resize(n_g);
  rec.g_grads.resize(n_g, n_d);
  rec.h_vals.resize(n_h);
  rec.h_grads.resize(n_h, n_d);
  Vector grad(n_d);
  for (int i = 0; i < n_g; ++i) {
    rec.g_vals[i] = problem.g[i](x, &grad);
    rec.g_grads.row(i) = grad;
  }
  for (int i = 0; i < n_h; ++i) {
    rec.h_vals[i] = problem.h[i](x, &grad);
    rec.h_grads.row(i) = grad;
  }
  rec.merit = merit_exact_aug_lagrangian(problem, x, rec.f, rec.f_grad,
                                         rec.g_vals, rec.g_grads, rec.h_vals,
                                         rec.h_grads, kMeritRho);
  return rec;
}

// Training sets for the objective and each nonlinear constraint over the
// selected region, with exact-duplicate points dropped.
struct RegionData {
  TrainingSet objective;
  std::vector<TrainingSet> g;
  std::vector<TrainingSet> h;
};

RegionData build_region_data(const std::vector<EvalRecord>& history,
                             const std::vector<int>& region) {
  std::vector<int> kept;
  for (int idx : region) {
    bool dup = false;
    for (int prev : kept) {
      if ((history[idx].x - history[prev].x).squaredNorm() == 0.0) {
        dup = true;
        break;
      }
    }
    if (!dup) kept.push_back(idx);
  }
  const int n_x = static_cast<int>(kept.size());
  const int n_d = static_cast<int>(history.front().x.size());
  const int n_g = static_cast<int>(history.front().g_vals.size());
  const int n_h = static_cast<int>(history.front().h_vals.size());

  Matrix X(n_x, n_d);
  for (int r = 0; r < n_x; ++r) X.row(r) = history[kept[r]].x;

  RegionData data;
  {
    Vector f(n_x);
    Matrix grads(n_x, n_d);
    for (int r = 0; r < n_x; ++r) {
      f[r] = history[kept[r]].f;
      grads.row(r) = history[kept[r]].f_grad;
    }
    data.objective = TrainingSet::from_values(X, f, grads);
  }
  for (int i = 0; i < n_g; ++i) {
    Vector vals(n_x);
    Matrix grads(n_x, n_d);
    for (int r = 0; r < n_x; ++r) {
      vals[r] = history[kept[r]].g_vals[i];
      grads.row(r) = history[kept[r]].g_grads.row(i);
    }
    data.g.push_back(TrainingSet::from_values(X, vals, grads));
  }
  for (int i = 0; i < n_h; ++i) {
    Vector vals(n_x);
    Matrix grads(n_x, n_d);
    for (int r = 0; r < n_x; ++r) {
      vals[r] = history[kept[r]].h_vals[i];
      grads.row(r) = history[kept[r]].h_grads.row(i);
    }
    data.h.push_back(TrainingSet::from_values(X, vals, grads));
  }
  return data;
}

SurrogateBundle fit_bundle(const RegionData& data,
                           const ConstrainedProblem& problem,
                           const BoConfig& config, int iteration,
                           std::vector<Vector>& warm_gammas) {
  const int n_models = 1 + static_cast<int>(data.g.size() + data.h.size());
  if (static_cast<int>(warm_gammas.size()) != n_models) {
    warm_gammas.assign(n_models, Vector());
  }
  const Vector box_range = problem.ub - problem.lb;

  const auto fit_one = [&](const TrainingSet& ts, int model_idx) {
    HyperSearchOptions opts;
    opts.n_starts = config.n_hyper_starts;
    opts.seed = derive_seed(config.seed,
                            {0x68797065ULL, static_cast<std::uint64_t>(iteration),
                             static_cast<std::uint64_t>(model_idx)});
    opts.fallback_range = box_range;
    if (warm_gammas[model_idx].size() == ts.dim()) {
      opts.warm_start = warm_gammas[model_idx];
    }
    const KernelParams params = select_hyperparameters(ts, config.condmax, opts);
    warm_gammas[model_idx] = params.gamma;
    return GpModel::fit(ts, params, config.condmax);
  };

  SurrogateBundle bundle;
  int model_idx = 0;
  bundle.f_model = fit_one(data.objective, model_idx++);
  for (const TrainingSet& ts : data.g) bundle.g_models.push_back(fit_one(ts, model_idx++));
  for (const TrainingSet& ts : data.h) bundle.h_models.push_back(fit_one(ts, model_idx++));
  return bundle;
}

InnerProblem base_inner_problem(const BoState& state,
                                const SurrogateBundle& bundle,
                                const ConstrainedProblem& problem) {
  InnerProblem inner;
  inner.lb = problem.lb;
  inner.ub = problem.ub;
  inner.Ag = problem.Ag;
  inner.bg = problem.bg;
  inner.Ah = problem.Ah;
  inner.bh = problem.bh;

  const Vector x_best = state.x_best();
  InnerConstraint circle;
  circle.kind = InnerConstraint::Kind::inequality;
  circle.bound = state.trust.ub_circle;
  circle.fn = [x_best](const Vector& x, Vector* grad) {
    return tr_circle(x, x_best, grad);
  };
  inner.nonlinear.push_back(std::move(circle));

  const GpModel* f_model = &bundle.f_model;
  InnerConstraint sigma;
  sigma.kind = InnerConstraint::Kind::inequality;
  sigma.bound = state.trust.ub_sigma;
  sigma.fn = [f_model](const Vector& x, Vector* grad) {
    return f_model->normalized_variance(x, grad);
  };
  inner.nonlinear.push_back(std::move(sigma));
  return inner;
}

StepResult finish_step(const BoState& state, const SurrogateBundle& bundle,
                       InnerProblem inner, const BoConfig& config,
                       std::optional<int> stage) {
  const std::vector<Vector> starts = default_starts(
      state.x_best(), state.trust, inner.lb, inner.ub, config.n_acq_starts,
      derive_seed(config.seed,
                  {0x73746172ULL, static_cast<std::uint64_t>(state.iteration)}));
  InnerOptions options;
  options.tol = 1e-8;
  const InnerResult result = minimize(inner, starts, options);

  StepResult out;
  out.x = result.x;
  out.stage = stage;
  out.feasible = result.feasible;
  out.circle_active =
      tr_circle(result.x, state.x_best()) >= state.trust.ub_circle - kActiveTol;
  out.sigma_active = bundle.f_model.normalized_variance(result.x) >=
                     state.trust.ub_sigma - kActiveTol;
  return out;
}

}  // namespace

StepResult step_exact_lagrangian(const BoState& state,
                                 const SurrogateBundle& bundle,
                                 const ConstrainedProblem& problem,
                                 const BoConfig& config) {
  InnerProblem inner = base_inner_problem(state, bundle, problem);
  const SurrogateBundle* b = &bundle;
  const ConstrainedProblem* p = &problem;
  const double rho1 = config.rho1;
  const double rho2 = config.rho2;
  const double eps_g = config.eps_g;
  inner.objective = [b, p, rho1, rho2, eps_g](const Vector& x, Vector* grad) {
    const ValueGrad lag = acq_exact_lagrangian(*b, *p, x, rho1, eps_g);
    const ValueGrad exp = acq_exploration(*b, x);
    if (grad) *grad = lag.grad + rho2 * exp.grad;
    return lag.value + rho2 * exp.value;
  };
  return finish_step(state, bundle, std::move(inner), config, std::nullopt);
}

StepResult step_strong(const BoState& state, const SurrogateBundle& bundle,
                       const ConstrainedProblem& problem,
                       const BoConfig& config) {
  InnerProblem inner = base_inner_problem(state, bundle, problem);
  const SurrogateBundle* b = &bundle;
  const double omega = config.omega;
  inner.objective = [b, omega](const Vector& x, Vector* grad) {
    const ValueGrad uc = acq_uc(*b, x, omega);
    const ValueGrad pen = acq_l2_penalty(*b, x);
    const ValueGrad exp = acq_exploration(*b, x);
    if (grad) *grad = uc.grad + 100.0 * pen.grad + 100.0 * exp.grad;
    return uc.value + 100.0 * pen.value + 100.0 * exp.value;
  };

  const int n_x = static_cast<int>(state.history.size());
  if (n_x < config.stage1_until) {
    return finish_step(state, bundle, std::move(inner), config, 1);
  }

  const double q_best = acq_l2_penalty(bundle, state.x_best()).value;
  if (q_best >= config.eps_l2) {
    // Stage 2: one scalar bound on the surrogate feasibility penalty.
    InnerConstraint row;
    row.kind = InnerConstraint::Kind::inequality;
    row.bound = sigmoid_shrink(q_best, config.nu1, config.nu2) * q_best;
    row.fn = [b](const Vector& x, Vector* grad) {
      const ValueGrad pen = acq_l2_penalty(*b, x);
      if (grad) *grad = pen.grad;
      return pen.value;
    };
    inner.nonlinear.push_back(std::move(row));
    return finish_step(state, bundle, std::move(inner), config, 2);
  }

  // Stage 3: per-constraint surrogate bounds, shrunk toward zero.
  for (size_t i = 0; i < bundle.g_models.size(); ++i) {
    const double mu_best =
        std::max(bundle.g_models[i].posterior(state.x_best()).mean, 0.0);
    InnerConstraint row;
    row.kind = InnerConstraint::Kind::inequality;
    row.bound = sigmoid_shrink(mu_best, config.nu1, config.nu2) * mu_best;
    const GpModel* model = &bundle.g_models[i];
    row.fn = [model](const Vector& x, Vector* grad) {
      const GpModel::Posterior post = model->posterior(x);
      if (grad) *grad = post.mean_grad;
      return post.mean;
    };
    inner.nonlinear.push_back(std::move(row));
  }
  for (size_t i = 0; i < bundle.h_models.size(); ++i) {
    const double mu_abs =
        std::abs(bundle.h_models[i].posterior(state.x_best()).mean);
    const double bound = sigmoid_shrink(mu_abs, config.nu1, config.nu2) * mu_abs;
    const GpModel* model = &bundle.h_models[i];
    InnerConstraint upper;
    upper.kind = InnerConstraint::Kind::inequality;
    upper.bound = bound;
    upper.fn = [model](const Vector& x, Vector* grad) {
      const GpModel::Posterior post = model->posterior(x);
      if (grad) *grad = post.mean_grad;
      return post.mean;
    };
    inner.nonlinear.push_back(std::move(upper));
    InnerConstraint lower;
    lower.kind = InnerConstraint::Kind::inequality;
    lower.bound = bound;
    lower.fn = [model](const Vector& x, Vector* grad) {
      const GpModel::Posterior post = model->posterior(x);
      if (grad) *grad = -post.mean_grad;
      return -post.mean;
    };
    inner.nonlinear.push_back(std::move(lower));
  }
  return finish_step(state, bundle, std::move(inner), config, 3);
}

namespace {

StepResult step_penalty_family(const BoState& state,
                               const SurrogateBundle& bundle,
                               const ConstrainedProblem& problem,
                               const BoConfig& config) {
  InnerProblem inner = base_inner_problem(state, bundle, problem);
  const SurrogateBundle* b = &bundle;
  const double omega = config.omega;
  const double f_best = state.history[state.best_index].f;
  switch (config.method) {
    case Method::l2_penalty:
      inner.objective = [b, omega](const Vector& x, Vector* grad) {
        const ValueGrad uc = acq_uc(*b, x, omega);
        const ValueGrad pen = acq_l2_penalty(*b, x);
        if (grad) *grad = uc.grad + 100.0 * pen.grad;
        return uc.value + 100.0 * pen.value;
      };
      break;
    case Method::cei:
      inner.objective = [b, f_best](const Vector& x, Vector* grad) {
        const ValueGrad v = acq_cei(*b, x, f_best);
        if (grad) *grad = v.grad;
        return v.value;
      };
      break;
    case Method::cuc:
      inner.objective = [b, omega](const Vector& x, Vector* grad) {
        const ValueGrad v = acq_cuc(*b, x, omega);
        if (grad) *grad = v.grad;
        return v.value;
      };
      break;
    default:
      throw InputError("step_penalty_family called with a staged method");
  }
  return finish_step(state, bundle, std::move(inner), config, std::nullopt);
}

StepResult dispatch_step(const BoState& state, const SurrogateBundle& bundle,
                         const ConstrainedProblem& problem,
                         const BoConfig& config) {
  switch (config.method) {
    case Method::exact_lagrangian:
      return step_exact_lagrangian(state, bundle, problem, config);
    case Method::strong:
      return step_strong(state, bundle, problem, config);
    default:
      return step_penalty_family(state, bundle, problem, config);
  }
}

}  // namespace

RunTrace run(const ConstrainedProblem& problem, const Vector& x0,
             const BoConfig& config) {
  problem.validate();
  config.validate(problem);
  if (x0.size() != problem.dim()) throw InputError("x0 has wrong dimension");
  for (int i = 0; i < x0.size(); ++i) {
    if (x0[i] < problem.lb[i] - 1e-12 || x0[i] > problem.ub[i] + 1e-12) {
      throw InputError("x0 violates the bounds");
    }
  }

  BoState state;
  state.trust = TrustState::initial(problem.lb, problem.ub);
  std::vector<Vector> warm_gammas;

  RunTrace trace;
  Vector x_cur = x0;
  std::optional<int> pending_stage;
  bool pending_circle_active = false;
  bool pending_sigma_active = false;

  // The exact augmented Lagrangian certifies optimality only near KKT
  // points, where it equals the objective; far away the inactive-row
  // correction -psi^2/(4 rho) can push it arbitrarily negative.  Points
  // whose merit falls below -merit_tol carry no certificate and are not
  // eligible to anchor the incumbent or to trigger convergence.
  const auto eligible = [&](double merit) { return merit >= -config.merit_tol; };

  // Best merit as seen by the stopping rule: +inf until an eligible
  // (certificate-carrying) point exists.  Until then the incumbent is
  // anchored by the plain l2 penalty merit, which stays meaningful at any
  // scale (deeply infeasible points can drive the exact-Lagrangian merit
  // below any bound through the multiplier terms alone).
  const auto recompute_best = [&]() -> double {
    int best_idx = -1;
    double best_val = std::numeric_limits<double>::infinity();
    for (int i = 0; i < static_cast<int>(state.history.size()); ++i) {
      const double m = state.history[i].merit;
      if (eligible(m) && m < best_val) {
        best_val = m;
        best_idx = i;
      }
    }
    if (best_idx < 0) {
      double best_l2 = std::numeric_limits<double>::infinity();
      for (int i = 0; i < static_cast<int>(state.history.size()); ++i) {
        const EvalRecord& rec = state.history[i];
        const double l2 = rec.f + kMeritRho * (rec.h_vals.squaredNorm() +
                                               g_plus(rec.g_vals).squaredNorm());
        if (l2 < best_l2) {
          best_l2 = l2;
          best_idx = i;
        }
      }
      state.best_index = best_idx;
      return std::numeric_limits<double>::infinity();
    }
    state.best_index = best_idx;
    return best_val;
  };

  double old_best = std::numeric_limits<double>::infinity();
  for (int eval = 1; eval <= config.max_evals; ++eval) {
    state.iteration = eval;
    EvalRecord rec = evaluate_problem(problem, x_cur);
    state.history.push_back(std::move(rec));
    const int new_index = static_cast<int>(state.history.size()) - 1;
    const double new_best = recompute_best();

    TraceRow row;
    row.eval_index = eval;
    row.x = state.history[new_index].x;
    row.f = state.history[new_index].f;
    row.g = state.history[new_index].g_vals;
    row.h = state.history[new_index].h_vals;
    row.merit = state.history[new_index].merit;
    row.best_merit = new_best;
    row.stage = pending_stage;
    row.tr_circle_ub = state.trust.ub_circle;
    row.tr_sigma_ub = state.trust.ub_sigma;
    trace.rows.push_back(std::move(row));

    if (eval > 1) {
      const bool progress =
          (old_best - new_best) >= kProgressTol * std::max(1.0, std::abs(old_best));
      const bool any_active = pending_circle_active || pending_sigma_active;
      state.trust = update_bounds(state.trust, progress, any_active);
      state.trust.last_circle_active = pending_circle_active;
      state.trust.last_sigma_active = pending_sigma_active;
    }
    old_best = new_best;

    if (new_best < config.merit_tol) {
      trace.converged = true;
      break;
    }
    if (eval == config.max_evals) break;

    const std::vector<int> region =
        select_data_region(state.history, state.x_best(),
                           config.data_region_size, config.min_recent);
    const RegionData data = build_region_data(state.history, region);
    const SurrogateBundle bundle =
        fit_bundle(data, problem, config, eval, warm_gammas);

    StepResult step;
    try {
      step = dispatch_step(state, bundle, problem, config);
    } catch (const SolverError&) {
      // Shrink the trust bounds once and retry before giving up.
      state.trust.ub_circle /= TrustState::kGrowCircle;
      state.trust.ub_sigma = std::max(TrustState::kSigmaFloor,
                                      state.trust.ub_sigma / TrustState::kGrowSigma);
      step = dispatch_step(state, bundle, problem, config);
    }
    x_cur = step.x;
    pending_stage = step.stage;
    pending_circle_active = step.circle_active;
    pending_sigma_active = step.sigma_active;
  }
  return trace;
}

}  // namespace cbo
