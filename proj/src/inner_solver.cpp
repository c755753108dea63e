#include "cbo/inner_solver.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "cbo/rng.hpp"

namespace cbo {

namespace {

constexpr double kPenaltyInit = 10.0;
constexpr double kPenaltyGrow = 5.0;
constexpr double kPenaltyMax = 1e12;

Vector clamp_to_box(Vector x, const Vector& lb, const Vector& ub) {
  for (int i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], lb[i], ub[i]);
  return x;
}

// All equality and inequality rows in one flat view: linear rows first, then
// nonlinear rows shifted by their bound/target.
struct RowSet {
  const InnerProblem* p;
  int n_eq;  // linear eq + nonlinear eq
  int n_in;  // linear ineq + nonlinear ineq
  std::vector<int> eq_rows;  // indices into p->nonlinear
  std::vector<int> in_rows;

  explicit RowSet(const InnerProblem& problem) : p(&problem) {
    for (int i = 0; i < static_cast<int>(problem.nonlinear.size()); ++i) {
      if (problem.nonlinear[i].kind == InnerConstraint::Kind::equality) {
        eq_rows.push_back(i);
      } else {
        in_rows.push_back(i);
      }
    }
    n_eq = static_cast<int>(problem.bh.size() + eq_rows.size());
    n_in = static_cast<int>(problem.bg.size() + in_rows.size());
  }

  // c_eq(x) = 0 rows and c_in(x) <= 0 rows; jacobians optional.
  void evaluate(const Vector& x, Vector& c_eq, Vector& c_in, Matrix* J_eq,
                Matrix* J_in) const {
    const int n_d = p->dim();
    const int n_lin_h = static_cast<int>(p->bh.size());
    const int n_lin_g = static_cast<int>(p->bg.size());
    c_eq.resize(n_eq);
    c_in.resize(n_in);
    if (J_eq) J_eq->resize(n_eq, n_d);
    if (J_in) J_in->resize(n_in, n_d);
    if (n_lin_h > 0) {
      c_eq.head(n_lin_h) = p->Ah * x - p->bh;
      if (J_eq) J_eq->topRows(n_lin_h) = p->Ah;
    }
    Vector grad(n_d);
    for (int r = 0; r < static_cast<int>(eq_rows.size()); ++r) {
      const InnerConstraint& c = p->nonlinear[eq_rows[r]];
      c_eq[n_lin_h + r] = c.fn(x, J_eq ? &grad : nullptr) - c.bound;
      if (J_eq) J_eq->row(n_lin_h + r) = grad;
    }
    if (n_lin_g > 0) {
      c_in.head(n_lin_g) = p->Ag * x - p->bg;
      if (J_in) J_in->topRows(n_lin_g) = p->Ag;
    }
    for (int r = 0; r < static_cast<int>(in_rows.size()); ++r) {
      const InnerConstraint& c = p->nonlinear[in_rows[r]];
      c_in[n_lin_g + r] = c.fn(x, J_in ? &grad : nullptr) - c.bound;
      if (J_in) J_in->row(n_lin_g + r) = grad;
    }
  }

  static double violation(const Vector& c_eq, const Vector& c_in) {
    double v = 0.0;
    for (int i = 0; i < c_eq.size(); ++i) v = std::max(v, std::abs(c_eq[i]));
    for (int i = 0; i < c_in.size(); ++i) v = std::max(v, c_in[i]);
    return v;
  }
};

struct AlEval {
  double value;
  Vector grad;
  double objective;
  Vector c_eq, c_in;
};

AlEval eval_al(const InnerProblem& p, const RowSet& rows, const Vector& x,
               const Vector& lambda, const Vector& mu, double rho) {
  AlEval out;
  Vector fgrad(p.dim());
  out.objective = p.objective(x, &fgrad);
  out.value = out.objective;
  out.grad = fgrad;
  Matrix J_eq, J_in;
  rows.evaluate(x, out.c_eq, out.c_in, &J_eq, &J_in);
  for (int i = 0; i < out.c_eq.size(); ++i) {
    const double c = out.c_eq[i];
    out.value += lambda[i] * c + 0.5 * rho * c * c;
    out.grad += (lambda[i] + rho * c) * J_eq.row(i).transpose();
  }
  for (int i = 0; i < out.c_in.size(); ++i) {
    const double shifted = mu[i] / rho + out.c_in[i];
    if (shifted > 0.0) {
      out.value += 0.5 * rho * (shifted * shifted - (mu[i] / rho) * (mu[i] / rho));
      out.grad += rho * shifted * J_in.row(i).transpose();
    } else {
      out.value -= 0.5 * mu[i] * mu[i] / rho;
    }
  }
  return out;
}

// Two-loop L-BFGS direction from the stored curvature pairs.
Vector lbfgs_direction(const std::deque<std::pair<Vector, Vector>>& memory,
                       const Vector& g) {
  Vector q = -g;
  if (memory.empty()) return q;
  const int k = static_cast<int>(memory.size());
  std::vector<double> alpha(k), rho_m(k);
  for (int i = k - 1; i >= 0; --i) {
    const auto& [s, y] = memory[i];
    rho_m[i] = 1.0 / s.dot(y);
    alpha[i] = rho_m[i] * s.dot(q);
    q -= alpha[i] * y;
  }
  const auto& [s_last, y_last] = memory.back();
  q *= s_last.dot(y_last) / y_last.squaredNorm();
  for (int i = 0; i < k; ++i) {
    const auto& [s, y] = memory[i];
    const double beta = rho_m[i] * y.dot(q);
    q += (alpha[i] - beta) * s;
  }
  return q;
}

// Projected L-BFGS minimization of the augmented Lagrangian on the box.
// Returns the projected-gradient infinity norm at the final iterate.
double minimize_al_inner(const InnerProblem& p, const RowSet& rows,
                         const Vector& lambda, const Vector& mu, double rho,
                         double tol_inner, int max_inner, Vector& x) {
  const int n_d = p.dim();
  AlEval cur = eval_al(p, rows, x, lambda, mu, rho);
  std::deque<std::pair<Vector, Vector>> memory;
  double pg_norm = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_inner; ++it) {
    const Vector pg = x - clamp_to_box(x - cur.grad, p.lb, p.ub);
    pg_norm = pg.lpNorm<Eigen::Infinity>();
    if (pg_norm <= tol_inner) break;

    Vector d = lbfgs_direction(memory, cur.grad);
    for (int i = 0; i < n_d; ++i) {
      const double span = p.ub[i] - p.lb[i];
      const bool at_lb = x[i] - p.lb[i] <= 1e-12 * span;
      const bool at_ub = p.ub[i] - x[i] <= 1e-12 * span;
      if ((at_lb && d[i] < 0.0) || (at_ub && d[i] > 0.0)) d[i] = 0.0;
    }
    if (d.dot(cur.grad) >= -1e-14 * d.norm() * cur.grad.norm()) d = -pg;
    if (d.lpNorm<Eigen::Infinity>() == 0.0) break;

    double t = 1.0;
    bool accepted = false;
    Vector x_new;
    AlEval next;
    for (int ls = 0; ls < 40; ++ls) {
      x_new = clamp_to_box(x + t * d, p.lb, p.ub);
      const Vector step = x_new - x;
      if (step.lpNorm<Eigen::Infinity>() == 0.0) break;
      next = eval_al(p, rows, x_new, lambda, mu, rho);
      if (next.value <= cur.value + 1e-4 * std::min(0.0, cur.grad.dot(step))) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;

    const Vector s = x_new - x;
    const Vector y = next.grad - cur.grad;
    const double sy = s.dot(y);
    if (sy > 1e-10 * s.norm() * y.norm()) {
      memory.emplace_back(s, y);
      if (memory.size() > 8) memory.pop_front();
    }
    x = x_new;
    cur = next;
  }
  return pg_norm;
}

struct SingleResult {
  Vector x;
  double objective;
  double max_violation;
  double kkt_residual;
  bool feasible;
};

SingleResult solve_from(const InnerProblem& p, const RowSet& rows,
                        const Vector& start, const InnerOptions& opt) {
  Vector x = clamp_to_box(start, p.lb, p.ub);
  Vector lambda = Vector::Zero(rows.n_eq);
  Vector mu = Vector::Zero(rows.n_in);
  double rho = kPenaltyInit;

  Vector c_eq, c_in;
  rows.evaluate(x, c_eq, c_in, nullptr, nullptr);
  double violation = RowSet::violation(c_eq, c_in);

  // Track the best near-feasible iterate in case the final one is worse.
  Vector g0(p.dim());
  double best_feasible_obj = std::numeric_limits<double>::infinity();
  Vector best_feasible_x;
  const double f_start = p.objective(x, &g0);
  if (violation <= opt.tol) {
    best_feasible_obj = f_start;
    best_feasible_x = x;
  }

  const double scale = 1.0 + g0.lpNorm<Eigen::Infinity>();
  const double gtol_final = std::max(opt.grad_tol * scale, 1e-13);
  double pg_norm = std::numeric_limits<double>::infinity();
  double loose = 1e-2 * scale;
  for (int outer = 0; outer < opt.max_outer; ++outer) {
    // Solve tight as soon as the iterate is feasible; loose tolerances are
    // only worthwhile while the multiplier estimates are still moving.
    const double tol_inner = violation <= opt.tol ? gtol_final
                                                  : std::max(gtol_final, loose);
    const Vector x_before = x;
    pg_norm = minimize_al_inner(p, rows, lambda, mu, rho, tol_inner,
                                opt.max_inner, x);
    rows.evaluate(x, c_eq, c_in, nullptr, nullptr);
    const double new_violation = RowSet::violation(c_eq, c_in);
    const bool moved =
        (x - x_before).lpNorm<Eigen::Infinity>() >
        1e-13 * (1.0 + x.lpNorm<Eigen::Infinity>());

    if (new_violation <= opt.tol) {
      Vector unused(p.dim());
      const double f = p.objective(x, &unused);
      if (f < best_feasible_obj) {
        best_feasible_obj = f;
        best_feasible_x = x;
      }
      if (pg_norm <= gtol_final * 1.01 || !moved) break;
    } else if (!moved && rho >= kPenaltyMax) {
      break;  // infeasible stall with the penalty maxed out
    }

    lambda += rho * c_eq;
    for (int i = 0; i < mu.size(); ++i) {
      mu[i] = std::max(0.0, mu[i] + rho * c_in[i]);
    }
    if (new_violation > 0.25 * violation && new_violation > opt.tol) {
      rho = std::min(kPenaltyMax, rho * kPenaltyGrow);
    }
    violation = new_violation;
    loose *= 0.1;
  }

  SingleResult out;
  rows.evaluate(x, c_eq, c_in, nullptr, nullptr);
  double final_violation = RowSet::violation(c_eq, c_in);
  Vector fgrad(p.dim());
  double f = p.objective(x, &fgrad);
  const bool final_feasible = final_violation <= opt.tol;
  const bool have_feasible = best_feasible_x.size() > 0;
  if (have_feasible && (!final_feasible || best_feasible_obj < f)) {
    x = best_feasible_x;
    rows.evaluate(x, c_eq, c_in, nullptr, nullptr);
    final_violation = RowSet::violation(c_eq, c_in);
    f = p.objective(x, &fgrad);
  }

  // Projected gradient of the Lagrangian with the final multiplier estimates.
  Matrix J_eq, J_in;
  Vector ce, ci;
  rows.evaluate(x, ce, ci, &J_eq, &J_in);
  Vector lag_grad = fgrad;
  for (int i = 0; i < ce.size(); ++i) {
    lag_grad += (lambda[i] + rho * ce[i]) * J_eq.row(i).transpose();
  }
  for (int i = 0; i < ci.size(); ++i) {
    const double m_hat = std::max(0.0, mu[i] + rho * ci[i]);
    lag_grad += m_hat * J_in.row(i).transpose();
  }
  out.kkt_residual =
      (x - clamp_to_box(x - lag_grad, p.lb, p.ub)).lpNorm<Eigen::Infinity>();
  out.x = x;
  out.objective = f;
  out.max_violation = final_violation;
  out.feasible = final_violation <= opt.tol;
  return out;
}

}  // namespace

InnerResult minimize(const InnerProblem& problem,
                     const std::vector<Vector>& starts,
                     const InnerOptions& options) {
  if (starts.empty()) throw InputError("inner solver needs at least one start");
  if (!problem.objective) throw InputError("inner problem has no objective");
  const RowSet rows(problem);

  std::vector<SingleResult> results;
  results.reserve(starts.size());
  int failures = 0;
  for (const Vector& start : starts) {
    try {
      results.push_back(solve_from(problem, rows, start, options));
    } catch (const std::exception&) {
      ++failures;
    }
  }
  if (results.empty()) {
    throw SolverError("all " + std::to_string(failures) +
                      " inner-solver starts failed");
  }

  const SingleResult* best = nullptr;
  for (const SingleResult& r : results) {
    if (!best) {
      best = &r;
      continue;
    }
    if (r.feasible != best->feasible) {
      if (r.feasible) best = &r;
      continue;
    }
    if (r.feasible) {
      if (r.objective < best->objective) best = &r;
    } else {
      if (r.max_violation < best->max_violation) best = &r;
    }
  }

  InnerResult out;
  out.x = best->x;
  out.value = best->objective;
  out.kkt_residual = best->kkt_residual;
  out.feasible = best->feasible;
  out.max_violation = best->max_violation;
  return out;
}

std::vector<Vector> default_starts(const Vector& x_best, const TrustState& trust,
                                   const Vector& lb, const Vector& ub,
                                   int n_starts, std::uint64_t seed) {
  if (n_starts < 1) throw InputError("need at least one start");
  const int n_d = static_cast<int>(x_best.size());
  std::vector<Vector> starts;
  starts.reserve(n_starts);
  starts.push_back(clamp_to_box(x_best, lb, ub));
  Rng rng(seed);
  const double radius = std::sqrt(std::max(trust.ub_circle, 0.0));
  for (int k = 1; k < n_starts; ++k) {
    Vector dir(n_d);
    for (int i = 0; i < n_d; ++i) dir[i] = rng.normal();
    const double norm = dir.norm();
    if (norm > 0.0) {
      dir /= norm;
    } else {
      dir.setZero();
      dir[0] = 1.0;
    }
    const double r = radius * std::pow(rng.uniform(), 1.0 / n_d);
    // Clamping can only shrink the distance to x_best, so the draw stays
    // inside both the ball and the box.
    starts.push_back(clamp_to_box(x_best + r * dir, lb, ub));
  }
  return starts;
}

}  // namespace cbo
