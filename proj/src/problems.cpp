#include "cbo/problems.hpp"

#include <cmath>

namespace cbo {

namespace {

constexpr double kMeritRho = 100.0;

}  // namespace

TestProblem make_quadratic(int n_d) {
  if (n_d < 2) throw InputError("quadratic problem needs n_d >= 2");
  Matrix A(n_d, n_d);
  for (int i = 0; i < n_d; ++i) {
    for (int j = 0; j < n_d; ++j) {
      const double d = static_cast<double>(i - j);
      A(i, j) = 0.1 * std::exp(-0.5 * d * d);
    }
  }
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(A);
  const double lambda_min = eig.eigenvalues()[0];
  const Vector u_min = eig.eigenvectors().col(0);

  TestProblem tp;
  tp.name = "quad";
  tp.problem.lb = Vector::Constant(n_d, -10.0);
  tp.problem.ub = Vector::Constant(n_d, 10.0);
  tp.problem.Ag.resize(0, n_d);
  tp.problem.bg.resize(0);
  tp.problem.Ah.resize(0, n_d);
  tp.problem.bh.resize(0);
  tp.problem.objective = [A, lambda_min](const Vector& x, Vector* grad) {
    if (grad) *grad = 2.0 * (A * x);
    return x.dot(A * x) - 4.0 * lambda_min;
  };
  // ||x||^2 >= 4 recast as 4 - ||x||^2 <= 0.
  tp.problem.g.push_back([](const Vector& x, Vector* grad) {
    if (grad) *grad = -2.0 * x;
    return 4.0 - x.squaredNorm();
  });
  tp.optima = {2.0 * u_min, -2.0 * u_min};
  return tp;
}

TestProblem make_product(int n_d) {
  if (n_d < 2) throw InputError("product problem needs n_d >= 2");
  const double scale = std::pow(static_cast<double>(n_d), 0.5 * n_d);

  TestProblem tp;
  tp.name = "prod";
  tp.problem.lb = Vector::Constant(n_d, 0.0);
  tp.problem.ub = Vector::Constant(n_d, 1.0);
  tp.problem.Ag.resize(0, n_d);
  tp.problem.bg.resize(0);
  tp.problem.Ah.resize(0, n_d);
  tp.problem.bh.resize(0);
  tp.problem.objective = [scale, n_d](const Vector& x, Vector* grad) {
    double prod = 1.0;
    for (int i = 0; i < n_d; ++i) prod *= x[i];
    if (grad) {
      grad->resize(n_d);
      for (int i = 0; i < n_d; ++i) {
        double partial = 1.0;
        for (int j = 0; j < n_d; ++j) {
          if (j != i) partial *= x[j];
        }
        (*grad)[i] = -scale * partial;
      }
    }
    return 1.0 - scale * prod;
  };
  tp.problem.h.push_back([](const Vector& x, Vector* grad) {
    if (grad) *grad = 2.0 * x;
    return x.squaredNorm() - 1.0;
  });
  tp.optima = {Vector::Constant(n_d, 1.0 / std::sqrt(static_cast<double>(n_d)))};
  return tp;
}

TestProblem make_rosenbrock(int n_d, double a) {
  if (n_d < 2) throw InputError("Rosenbrock problem needs n_d >= 2");
  if (!(a > 0.0)) throw InputError("Rosenbrock coefficient must be positive");

  TestProblem tp;
  tp.name = "rosen";
  tp.problem.lb = Vector::Constant(n_d, -10.0);
  tp.problem.ub = Vector::Constant(n_d, 10.0);
  tp.problem.Ag.resize(0, n_d);
  tp.problem.bg.resize(0);
  tp.problem.Ah.resize(0, n_d);
  tp.problem.bh.resize(0);
  tp.problem.objective = [a, n_d](const Vector& x, Vector* grad) {
    double f = 0.0;
    if (grad) grad->setZero(n_d);
    for (int i = 0; i + 1 < n_d; ++i) {
      const double gap = x[i + 1] - x[i] * x[i];
      const double miss = 1.0 - x[i];
      f += a * gap * gap + miss * miss;
      if (grad) {
        (*grad)[i] += -4.0 * a * x[i] * gap - 2.0 * miss;
        (*grad)[i + 1] += 2.0 * a * gap;
      }
    }
    return f;
  };
  tp.problem.g.push_back([n_d](const Vector& x, Vector* grad) {
    if (grad) *grad = 2.0 * x;
    return x.squaredNorm() - static_cast<double>(n_d);
  });
  tp.optima = {Vector::Constant(n_d, 1.0)};
  return tp;
}

double analytic_merit_at_optimum(const TestProblem& tp) {
  if (tp.optima.empty()) throw InputError("problem has no analytic optimum");
  return merit_exact_aug_lagrangian(tp.problem, tp.optima.front(), kMeritRho);
}

TestProblem make_problem(const std::string& name, int n_d, double rosen_a) {
  if (name == "quad") return make_quadratic(n_d);
  if (name == "prod") return make_product(n_d);
  if (name == "rosen") return make_rosenbrock(n_d, rosen_a);
  throw InputError("unknown problem '" + name + "' (expected quad, prod, rosen)");
}

std::vector<std::string> problem_names() { return {"quad", "prod", "rosen"}; }

}  // namespace cbo
