#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cbo/acquisition.hpp"
#include "cbo/constraints.hpp"
#include "cbo/inner_solver.hpp"
#include "cbo/trace.hpp"
#include "cbo/trust.hpp"
#include "cbo/types.hpp"

namespace cbo {

enum class Method { exact_lagrangian, strong, l2_penalty, cei, cuc };

Method method_from_string(const std::string& name);
std::string method_to_string(Method method);
std::vector<std::string> method_names();

struct BoConfig {
  Method method = Method::strong;
  double omega = 0.0;        // upper-confidence exploration weight
  double rho1 = 100.0;       // penalty inside the exact-Lagrangian acquisition
  double rho2 = 100.0;       // weight on the exploration penalty
  double eps_g = -0.1;       // inequality activity threshold
  double eps_l2 = 1.0;       // stage-2 -> stage-3 feasibility threshold
  double nu1 = 10.0;         // sigmoid shape parameters
  double nu2 = 1.0;
  int data_region_size = 20;
  int min_recent = 3;
  int stage1_until = 10;     // stage 1 while n_x < this
  double condmax = 1e10;
  int n_hyper_starts = 50;
  int n_acq_starts = 5;
  int max_evals = 300;
  double merit_tol = 1e-5;
  std::uint64_t seed = 0;

  void validate(const ConstrainedProblem& problem) const;
};

// One full problem evaluation: objective, constraints, and their gradients,
// plus the exact augmented-Lagrangian merit used to rank points.
struct EvalRecord {
  Vector x;
  double f = 0.0;
  Vector f_grad;
  Vector g_vals;
  Matrix g_grads;
  Vector h_vals;
  Matrix h_grads;
  double merit = 0.0;
};

struct BoState {
  std::vector<EvalRecord> history;
  int best_index = 0;
  TrustState trust;
  int iteration = 0;

  const Vector& x_best() const { return history[best_index].x; }
  double best_merit() const { return history[best_index].merit; }
};

// The size nearest points to x_best (Euclidean, ties by lower history index)
// with the most recent min_recent evaluations force-included; everything when
// the history is small enough.  Returned sorted by history index.
std::vector<int> select_data_region(const std::vector<EvalRecord>& history,
                                    const Vector& x_best, int size,
                                    int min_recent);

// Sigmoid shrink factor zeta(z) = (nu1 z)^nu2 / ((nu1 z)^nu2 + 1) for z > 0;
// zero at z <= 0.  zeta(1/nu1) = 1/2 for any nu2.
double sigmoid_shrink(double z, double nu1, double nu2);

struct StepResult {
  Vector x;
  std::optional<int> stage;
  bool circle_active = false;
  bool sigma_active = false;
  bool feasible = false;
};

// One acquisition minimization per method.  Both throw SolverError when
// every inner start fails.
StepResult step_exact_lagrangian(const BoState& state,
                                 const SurrogateBundle& bundle,
                                 const ConstrainedProblem& problem,
                                 const BoConfig& config);
StepResult step_strong(const BoState& state, const SurrogateBundle& bundle,
                       const ConstrainedProblem& problem,
                       const BoConfig& config);

// The full loop: evaluate, rank by merit, fit one GP per function on the
// data region, minimize the method's acquisition, update trust bounds, stop
// at merit_tol or the evaluation budget.
RunTrace run(const ConstrainedProblem& problem, const Vector& x0,
             const BoConfig& config);

}  // namespace cbo
