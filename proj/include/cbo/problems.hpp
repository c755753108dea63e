#pragma once

#include <string>
#include <vector>

#include "cbo/constraints.hpp"
#include "cbo/types.hpp"

namespace cbo {

// An analytic benchmark: a constrained problem plus its closed-form optima
// (possibly a symmetric family) where the objective evaluates to zero.
struct TestProblem {
  ConstrainedProblem problem;
  std::string name;
  std::vector<Vector> optima;
  double objective_at_optimum = 0.0;
};

// min x^T A x - 4 lambda_min(A) on [-10, 10]^n_d subject to ||x||^2 >= 4,
// with a_ij = exp(-(i-j)^2/2)/10.  Optima at +/- 2 u_min.
TestProblem make_quadratic(int n_d);

// min 1 - n_d^(n_d/2) prod x_i on [0, 1]^n_d subject to ||x||^2 = 1.
// Optimum at n_d^(-1/2) (1, ..., 1).
TestProblem make_product(int n_d);

// min sum a (x_{i+1} - x_i^2)^2 + (1 - x_i)^2 on [-10, 10]^n_d subject to
// ||x||^2 <= n_d.  Optimum at (1, ..., 1), where the constraint is active.
TestProblem make_rosenbrock(int n_d, double a = 100.0);

// Exact augmented Lagrangian merit (rho = 100) at the problem's first
// analytic optimum; at most 1e-8 for all three benchmarks.
double analytic_merit_at_optimum(const TestProblem& problem);

// Registry lookup by name: "quad", "prod", "rosen".
TestProblem make_problem(const std::string& name, int n_d,
                         double rosen_a = 100.0);
std::vector<std::string> problem_names();

}  // namespace cbo
