#include <doctest.h>

#include <cmath>

#include "cbo/constraints.hpp"
#include "cbo/problems.hpp"
#include "test_util.hpp"

using namespace cbo;

namespace {

ConstraintEval random_eval(Rng& rng, int n_g, int n_h, int n_d) {
  ConstraintEval eval;
  eval.g_vals.resize(n_g);
  eval.h_vals.resize(n_h);
  eval.g_grads.resize(n_g, n_d);
  eval.h_grads.resize(n_h, n_d);
  for (int i = 0; i < n_g; ++i) {
    eval.g_vals[i] = rng.uniform(-1.5, 1.5);
    for (int j = 0; j < n_d; ++j) eval.g_grads(i, j) = rng.normal();
  }
  for (int i = 0; i < n_h; ++i) {
    eval.h_vals[i] = rng.uniform(-1.5, 1.5);
    for (int j = 0; j < n_d; ++j) eval.h_grads(i, j) = rng.normal();
  }
  return eval;
}

}  // namespace

TEST_SUITE("constraints") {

TEST_CASE("positive part") {
  Vector v(3);
  v << -1.0, 0.0, 2.0;
  const Vector plus = g_plus(v);
  CHECK(plus[0] == 0.0);
  CHECK(plus[1] == 0.0);
  CHECK(plus[2] == 2.0);
  CHECK((g_plus(plus) - plus).lpNorm<Eigen::Infinity>() == 0.0);
  Vector neg(4);
  neg << -3.0, -0.1, -7.0, -1e-12;
  CHECK(g_plus(neg).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("l2 merit") {
  ConstraintEval feasible;
  feasible.g_vals = Vector::Constant(2, -0.5);
  feasible.h_vals = Vector::Zero(1);
  CHECK(merit_l2(1.7, feasible, 100.0) == doctest::Approx(1.7));

  ConstraintEval infeasible;
  infeasible.g_vals.resize(0);
  infeasible.h_vals = Vector::Constant(1, 1.0);
  CHECK(merit_l2(0.0, infeasible, 100.0) == doctest::Approx(100.0));
  CHECK(merit_l2(0.0, infeasible, 10.0) < merit_l2(0.0, infeasible, 200.0));
  CHECK_THROWS_AS(merit_l2(0.0, infeasible, -1.0), InputError);
}

TEST_CASE("augmented Lagrangian direct evaluation") {
  ConstraintEval eval;
  eval.g_vals.resize(0);
  eval.h_vals = Vector::Constant(1, 0.1);
  const Vector psi_h = Vector::Constant(1, 2.0);
  CHECK(merit_aug_lagrangian(0.0, eval, psi_h, Vector(), 100.0) ==
        doctest::Approx(1.2));
}

TEST_CASE("augmented Lagrangian with zero multipliers equals the l2 merit") {
  Rng rng(41);
  for (int rep = 0; rep < 50; ++rep) {
    const ConstraintEval eval = random_eval(rng, 3, 2, 2);
    const double f = rng.normal();
    const double rho = rng.uniform(1.0, 200.0);
    const double aug = merit_aug_lagrangian(f, eval, Vector::Zero(2),
                                            Vector::Zero(3), rho);
    CHECK(aug == doctest::Approx(merit_l2(f, eval, rho)).epsilon(1e-12));
  }
}

TEST_CASE("augmented Lagrangian equals the objective at a KKT point") {
  // min x^2 subject to x - 1 = 0: at x = 1, psi_h = -2 satisfies KKT.
  ConstraintEval eval;
  eval.g_vals.resize(0);
  eval.h_vals = Vector::Zero(1);
  eval.g_grads.resize(0, 1);
  eval.h_grads = Matrix::Constant(1, 1, 1.0);
  const Vector f_grad = Vector::Constant(1, 2.0);
  const Multipliers psi = solve_multipliers(eval, f_grad, 100.0, 100.0);
  CHECK(psi.psi_h[0] == doctest::Approx(-2.0).epsilon(1e-10));
  CHECK(merit_aug_lagrangian(1.0, eval, psi.psi_h, psi.psi_g, 100.0) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("solved multipliers minimize Psi") {
  Rng rng(42);
  for (int rep = 0; rep < 20; ++rep) {
    const int n_d = 1 + static_cast<int>(rng.below(4));
    const int n_g = static_cast<int>(rng.below(4));
    const int n_h = static_cast<int>(rng.below(3));
    if (n_g + n_h == 0) continue;
    const ConstraintEval eval = random_eval(rng, n_g, n_h, n_d);
    const Vector f_grad = test::random_vector(rng, n_d, -2.0, 2.0);
    const Multipliers psi = solve_multipliers(eval, f_grad, 100.0, 100.0);
    const double at_solution =
        psi_value(psi.psi_g, psi.psi_h, eval, f_grad, 100.0, 100.0);
    for (int draw = 0; draw < 50; ++draw) {
      Vector pg(n_g), ph(n_h);
      for (int i = 0; i < n_g; ++i) pg[i] = psi.psi_g[i] + rng.normal();
      for (int i = 0; i < n_h; ++i) ph[i] = psi.psi_h[i] + rng.normal();
      CHECK(psi_value(pg, ph, eval, f_grad, 100.0, 100.0) >=
            at_solution - 1e-10);
    }
  }
}

TEST_CASE("Psi gradient vanishes at the solved multipliers") {
  Rng rng(43);
  const ConstraintEval eval = random_eval(rng, 3, 2, 3);
  const Vector f_grad = test::random_vector(rng, 3, -2.0, 2.0);
  const Multipliers psi = solve_multipliers(eval, f_grad, 100.0, 100.0);
  Vector packed(5);
  packed.head(3) = psi.psi_g;
  packed.tail(2) = psi.psi_h;
  const Vector fd = test::central_fd(
      [&](const Vector& p) {
        return psi_value(p.head(3), p.tail(2), eval, f_grad, 100.0, 100.0);
      },
      packed, 1e-6);
  CHECK(fd.lpNorm<Eigen::Infinity>() <= 1e-6);
}

TEST_CASE("Psi is a nonnegative sum of squares") {
  Rng rng(44);
  for (int rep = 0; rep < 30; ++rep) {
    const ConstraintEval eval = random_eval(rng, 2, 2, 3);
    const Vector f_grad = test::random_vector(rng, 3, -2.0, 2.0);
    Vector pg = test::random_vector(rng, 2, -3.0, 3.0);
    Vector ph = test::random_vector(rng, 2, -3.0, 3.0);
    CHECK(psi_value(pg, ph, eval, f_grad, 100.0, 100.0) >= 0.0);
  }
  // Feasible stationary point with zero multipliers.
  ConstraintEval eval;
  eval.g_vals = Vector::Constant(1, -0.5);
  eval.h_vals.resize(0);
  eval.g_grads = Matrix::Constant(1, 2, 1.0);
  eval.h_grads.resize(0, 2);
  CHECK(psi_value(Vector::Zero(1), Vector(), eval, Vector::Zero(2), 100.0,
                  100.0) == doctest::Approx(0.0));
}

TEST_CASE("activity filter") {
  ConstraintEval eval;
  eval.g_vals.resize(3);
  eval.g_vals << -5.0, -0.05, 0.2;
  eval.g_grads = Matrix::Random(3, 2);
  eval.h_vals.resize(0);
  eval.h_grads.resize(0, 2);

  const FilteredEval filtered = filter_active(eval, -0.1);
  REQUIRE(filtered.index_map.size() == 2);
  CHECK(filtered.index_map[0] == 1);
  CHECK(filtered.index_map[1] == 2);
  CHECK(filtered.eval.g_vals[0] == doctest::Approx(-0.05));
  CHECK(filtered.eval.g_vals[1] == doctest::Approx(0.2));
  CHECK((filtered.eval.g_grads.row(0) - eval.g_grads.row(1)).norm() == 0.0);

  ConstraintEval all_inactive;
  all_inactive.g_vals = Vector::Constant(4, -1.5);
  all_inactive.g_grads = Matrix::Random(4, 2);
  all_inactive.h_vals.resize(0);
  all_inactive.h_grads.resize(0, 2);
  CHECK(filter_active(all_inactive, -0.1).index_map.empty());

  const FilteredEval everything = filter_active(
      all_inactive, -std::numeric_limits<double>::infinity());
  CHECK(everything.index_map.size() == 4);
}

TEST_CASE("empty inequality set leaves the equality block") {
  // All inequality rows filtered away: the multiplier solve reduces to the
  // equality system.
  ConstraintEval eval;
  eval.g_vals.resize(0);
  eval.g_grads.resize(0, 2);
  eval.h_vals = Vector::Zero(1);
  eval.h_grads = Matrix::Constant(1, 2, 1.0);
  Vector f_grad(2);
  f_grad << 1.0, 1.0;
  const Multipliers psi = solve_multipliers(eval, f_grad, 100.0, 100.0);
  CHECK(psi.psi_g.size() == 0);
  CHECK(psi.psi_h[0] == doctest::Approx(-1.0).epsilon(1e-10));
}

TEST_CASE("exact merit vanishes at the analytic optima") {
  for (const char* name : {"quad", "prod", "rosen"}) {
    for (const int n_d : {2, 5}) {
      const TestProblem tp = make_problem(name, n_d);
      for (const Vector& opt : tp.optima) {
        CHECK(std::abs(merit_exact_aug_lagrangian(tp.problem, opt, 100.0)) <=
              1e-8);
      }
    }
  }
}

TEST_CASE("KKT stationarity holds at the analytic optima") {
  for (const char* name : {"quad", "prod", "rosen"}) {
    const TestProblem tp = make_problem(name, 5);
    const Vector& opt = tp.optima.front();
    Vector f_grad(5);
    tp.problem.objective(opt, &f_grad);

    const int n_g = tp.problem.n_nonlinear_ineq();
    const int n_h = tp.problem.n_nonlinear_eq();
    Vector g_vals(n_g), h_vals(n_h);
    Matrix g_grads(n_g, 5), h_grads(n_h, 5);
    Vector grad(5);
    for (int i = 0; i < n_g; ++i) {
      g_vals[i] = tp.problem.g[i](opt, &grad);
      g_grads.row(i) = grad;
    }
    for (int i = 0; i < n_h; ++i) {
      h_vals[i] = tp.problem.h[i](opt, &grad);
      h_grads.row(i) = grad;
    }
    const ConstraintEval all =
        assemble_all(tp.problem, opt, g_vals, g_grads, h_vals, h_grads);
    const FilteredEval filtered = filter_active(all, -0.1);
    const Multipliers psi =
        solve_multipliers(filtered.eval, f_grad, 100.0, 100.0);
    Vector residual = f_grad;
    if (psi.psi_g.size() > 0) {
      residual += filtered.eval.g_grads.transpose() * psi.psi_g;
    }
    if (psi.psi_h.size() > 0) {
      residual += filtered.eval.h_grads.transpose() * psi.psi_h;
    }
    CHECK(residual.norm() <= 1e-6 * (1.0 + f_grad.norm()));
  }
}

TEST_CASE("exact merit equals the objective at an interior stationary point") {
  // Unconstrained interior optimum: no nonlinear rows, bounds far away.
  ConstrainedProblem p;
  p.lb = Vector::Constant(2, -10.0);
  p.ub = Vector::Constant(2, 10.0);
  p.Ag.resize(0, 2);
  p.bg.resize(0);
  p.Ah.resize(0, 2);
  p.bh.resize(0);
  p.objective = [](const Vector& x, Vector* grad) {
    if (grad) *grad = 2.0 * x;
    return 1.5 + x.squaredNorm();
  };
  CHECK(merit_exact_aug_lagrangian(p, Vector::Zero(2), 100.0) ==
        doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("stacked rows follow the bounds-linear-nonlinear layout") {
  ConstrainedProblem p;
  p.lb = Vector::Constant(2, -1.0);
  p.ub = Vector::Constant(2, 2.0);
  p.Ag = Matrix::Constant(1, 2, 1.0);
  p.bg = Vector::Constant(1, 1.0);
  p.Ah = Matrix::Constant(1, 2, -1.0);
  p.bh = Vector::Constant(1, 0.5);
  p.objective = [](const Vector&, Vector*) { return 0.0; };

  Vector x(2);
  x << 0.5, 1.0;
  Vector g_vals = Vector::Constant(1, 0.25);
  Matrix g_grads = Matrix::Constant(1, 2, 3.0);
  Vector h_vals(0);
  Matrix h_grads(0, 2);
  const ConstraintEval all = assemble_all(p, x, g_vals, g_grads, h_vals, h_grads);

  REQUIRE(all.g_vals.size() == 2 * 2 + 1 + 1);
  CHECK(all.g_vals[0] == doctest::Approx(-1.5));  // lb - x
  CHECK(all.g_vals[2] == doctest::Approx(-1.5));  // x - ub
  CHECK(all.g_vals[4] == doctest::Approx(0.5));   // Ag x - bg
  CHECK(all.g_vals[5] == doctest::Approx(0.25));  // nonlinear
  CHECK(all.g_grads(0, 0) == doctest::Approx(-1.0));
  CHECK(all.g_grads(2, 0) == doctest::Approx(1.0));
  CHECK(all.g_grads(4, 1) == doctest::Approx(1.0));
  CHECK(all.g_grads(5, 1) == doctest::Approx(3.0));
  REQUIRE(all.h_vals.size() == 1);
  CHECK(all.h_vals[0] == doctest::Approx(-2.0));  // Ah x - bh
}

}  // TEST_SUITE
