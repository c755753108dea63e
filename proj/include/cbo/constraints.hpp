#pragma once

#include <vector>

#include "cbo/types.hpp"

namespace cbo {

// min f(x) over [lb, ub] subject to Ag x <= bg, Ah x = bh, g_i(x) <= 0 and
// h_i(x) = 0, with gradients available for the objective and every nonlinear
// constraint.
struct ConstrainedProblem {
  Vector lb, ub;
  Matrix Ag;
  Vector bg;
  Matrix Ah;
  Vector bh;
  std::vector<DifferentiableFn> g;
  std::vector<DifferentiableFn> h;
  DifferentiableFn objective;

  int dim() const { return static_cast<int>(lb.size()); }
  int n_linear_ineq() const { return static_cast<int>(bg.size()); }
  int n_linear_eq() const { return static_cast<int>(bh.size()); }
  int n_nonlinear_ineq() const { return static_cast<int>(g.size()); }
  int n_nonlinear_eq() const { return static_cast<int>(h.size()); }
  void validate() const;
};

// Values and gradients for a set of inequality and equality rows.
struct ConstraintEval {
  Vector g_vals;
  Vector h_vals;
  Matrix g_grads;  // n_g x n_d, one gradient per row
  Matrix h_grads;  // n_h x n_d
};

struct Multipliers {
  Vector psi_g;
  Vector psi_h;
  std::vector<int> active_index_map;  // original row of each retained inequality
};

// Elementwise max(v_i, 0).
Vector g_plus(const Vector& vals);

// f + rho (||h||^2 + ||g+||^2)
double merit_l2(double f, const ConstraintEval& eval, double rho);

// Augmented Lagrangian with fixed multipliers:
// f + psi_h.h + psi_g.g + rho (||h||^2 + ||g||^2 - sum min(0, psi_g/(2 rho) + g)^2)
double merit_aug_lagrangian(double f, const ConstraintEval& eval,
                            const Vector& psi_h, const Vector& psi_g,
                            double rho);

// Stacks the full inequality/equality systems at x: bound rows (lb - x and
// x - ub), linear rows, then the supplied nonlinear values and gradients.
ConstraintEval assemble_all(const ConstrainedProblem& problem, const Vector& x,
                            const Vector& g_vals, const Matrix& g_grads,
                            const Vector& h_vals, const Matrix& h_grads);

// Drops inequality rows with value below `threshold` (retains g_i >=
// threshold), recording the retained original indices.
struct FilteredEval {
  ConstraintEval eval;
  std::vector<int> index_map;
};
FilteredEval filter_active(const ConstraintEval& eval, double threshold = -0.1);

// Minimizer of Psi over the multipliers: solves
//   M [psi_g; psi_h] = -[grad g; grad h] grad_f
// with M11 = Jg Jg^T + alpha1 diag(g)^2 + alpha2 w I,
//      M12 = Jg Jh^T, M22 = Jh Jh^T + alpha2 w I,
//      w = ||g+||^2 + ||h||^2.
Multipliers solve_multipliers(const ConstraintEval& eval_all,
                              const Vector& f_grad, double alpha1,
                              double alpha2);

// The quadratic the multipliers minimize:
// ||grad_f + Jg^T psi_g + Jh^T psi_h||^2 + alpha1 ||diag(g) psi_g||^2
//   + alpha2 w (||psi_g||^2 + ||psi_h||^2)
double psi_value(const Vector& psi_g, const Vector& psi_h,
                 const ConstraintEval& eval_all, const Vector& f_grad,
                 double alpha1, double alpha2);

// Exact augmented Lagrangian merit at x: true constraint evaluations, bound
// and linear rows included, inactive inequalities filtered at -0.1, and
// multipliers solved with alpha1 = alpha2 = 100.  The reporting merit uses
// rho = 100.
double merit_exact_aug_lagrangian(const ConstrainedProblem& problem,
                                  const Vector& x, double rho);

// Same merit from already-evaluated objective/constraint data (used when an
// optimization trace re-ranks recorded points without re-evaluating).
double merit_exact_aug_lagrangian(const ConstrainedProblem& problem,
                                  const Vector& x, double f,
                                  const Vector& f_grad, const Vector& g_vals,
                                  const Matrix& g_grads, const Vector& h_vals,
                                  const Matrix& h_grads, double rho);

}  // namespace cbo
