#pragma once

#include <cstdint>
#include <vector>

#include "cbo/trust.hpp"
#include "cbo/types.hpp"

namespace cbo {

// Smooth constrained subproblem: bounds, linear rows, and tagged nonlinear
// rows (inequality with an upper bound, or equality with a target).
struct InnerConstraint {
  enum class Kind { inequality, equality };
  Kind kind = Kind::inequality;
  DifferentiableFn fn;
  double bound = 0.0;  // fn(x) <= bound, or fn(x) = bound
};

struct InnerProblem {
  DifferentiableFn objective;
  Vector lb, ub;
  Matrix Ag;
  Vector bg;
  Matrix Ah;
  Vector bh;
  std::vector<InnerConstraint> nonlinear;

  int dim() const { return static_cast<int>(lb.size()); }
};

struct InnerOptions {
  int max_outer = 200;
  int max_inner = 50;
  double tol = 1e-8;       // per-row constraint tolerance
  double grad_tol = 1e-8;  // projected-gradient target, relative to the
                           // objective gradient scale at the start
};

struct InnerResult {
  Vector x;
  double value = 0.0;         // objective at x
  double kkt_residual = 0.0;  // projected Lagrangian-gradient norm
  bool feasible = false;
  double max_violation = 0.0;
};

// Augmented-Lagrangian solve from every start; returns the feasible solution
// with the lowest objective, or the least-infeasible one (flagged) when no
// start reaches feasibility.  Starts whose evaluations throw are skipped;
// if every start fails a SolverError is raised.
InnerResult minimize(const InnerProblem& problem,
                     const std::vector<Vector>& starts,
                     const InnerOptions& options = {});

// x_best plus n_starts - 1 seeded draws inside the circular trust region
// intersected with the box.
std::vector<Vector> default_starts(const Vector& x_best, const TrustState& trust,
                                   const Vector& lb, const Vector& ub,
                                   int n_starts, std::uint64_t seed);

}  // namespace cbo
