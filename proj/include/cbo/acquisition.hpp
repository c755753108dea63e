#pragma once

#include <vector>

#include "cbo/constraints.hpp"
#include "cbo/gp.hpp"
#include "cbo/types.hpp"

namespace cbo {

// One GP per modeled function: the objective plus each nonlinear inequality
// and equality constraint, all fitted on the same data-region points.
struct SurrogateBundle {
  GpModel f_model;
  std::vector<GpModel> g_models;
  std::vector<GpModel> h_models;
};

struct ValueGrad {
  double value = 0.0;
  Vector grad;
};

// Upper confidence: mu_f(x) - omega sigma_f(x).
ValueGrad acq_uc(const SurrogateBundle& bundle, const Vector& x, double omega);

// Expected improvement in minimization form; value <= 0 everywhere and the
// degenerate sigma -> 0 limit is -max(f_best - mu_f, 0).
ValueGrad acq_ei(const SurrogateBundle& bundle, const Vector& x, double f_best);

// ||mu_h(x)||^2 + ||mu_g+(x)||^2, the surrogate l2 feasibility penalty.
ValueGrad acq_l2_penalty(const SurrogateBundle& bundle, const Vector& x);

// Product over inequality surrogates of P(g_i <= 0).  Unsupported when
// equality constraints are present (their satisfaction probability has
// measure zero).
double prob_feasibility(const SurrogateBundle& bundle, const Vector& x);

// Expected improvement / upper confidence weighted by the probability of
// feasibility.
ValueGrad acq_cei(const SurrogateBundle& bundle, const Vector& x, double f_best);
ValueGrad acq_cuc(const SurrogateBundle& bundle, const Vector& x, double omega);

// Exploration penalty: sum_g max(mu_g - sigma_g, 0)^2
//                    + sum_h max(|mu_h| - sigma_h, 0)^2.
// Zero whenever the posterior spread covers the constraint residual.
ValueGrad acq_exploration(const SurrogateBundle& bundle, const Vector& x);

// Exact augmented Lagrangian acquisition: surrogate means replace the
// nonlinear constraints in the stacked inequality/equality systems, inactive
// rows are filtered at `activity_threshold`, and the multipliers are solved
// against the surrogate objective gradient with alpha1 = alpha2 = 100.  The
// returned gradient treats the multipliers as locally constant.
ValueGrad acq_exact_lagrangian(const SurrogateBundle& bundle,
                               const ConstrainedProblem& problem,
                               const Vector& x, double rho,
                               double activity_threshold = -0.1);

namespace detail {

// Multipliers and retained-row set solved at an anchor point; evaluating the
// acquisition with these frozen reproduces the function whose exact gradient
// acq_exact_lagrangian reports.
struct QlagAnchor {
  Multipliers psi;
  std::vector<int> index_map;
};

QlagAnchor qlag_anchor(const SurrogateBundle& bundle,
                       const ConstrainedProblem& problem, const Vector& x,
                       double activity_threshold = -0.1);

double qlag_value_frozen(const SurrogateBundle& bundle,
                         const ConstrainedProblem& problem, const Vector& x,
                         double rho, const QlagAnchor& anchor);

}  // namespace detail

}  // namespace cbo
