#include "cbo/constraints.hpp"

#include <cmath>

namespace cbo {

void ConstrainedProblem::validate() const {
  const int n_d = dim();
  if (ub.size() != n_d) throw InputError("bound vectors have mismatched lengths");
  for (int i = 0; i < n_d; ++i) {
    if (!(lb[i] < ub[i])) {
      throw InputError("bound lb[" + std::to_string(i) + "] must be below ub");
    }
  }
  if (Ag.size() > 0 && Ag.cols() != n_d) throw InputError("Ag column count mismatch");
  if (Ag.rows() != bg.size()) throw InputError("Ag/bg row mismatch");
  if (Ah.size() > 0 && Ah.cols() != n_d) throw InputError("Ah column count mismatch");
  if (Ah.rows() != bh.size()) throw InputError("Ah/bh row mismatch");
  if (!objective) throw InputError("objective callable is empty");
}

Vector g_plus(const Vector& vals) { return vals.cwiseMax(0.0); }

double merit_l2(double f, const ConstraintEval& eval, double rho) {
  if (!(rho > 0.0)) throw InputError("penalty rho must be positive");
  return f + rho * (eval.h_vals.squaredNorm() + g_plus(eval.g_vals).squaredNorm());
}

double merit_aug_lagrangian(double f, const ConstraintEval& eval,
                            const Vector& psi_h, const Vector& psi_g,
                            double rho) {
  if (psi_h.size() != eval.h_vals.size() || psi_g.size() != eval.g_vals.size()) {
    throw InputError("multiplier lengths do not match constraint vectors");
  }
  double correction = 0.0;
  for (int i = 0; i < eval.g_vals.size(); ++i) {
    const double t = std::min(0.0, psi_g[i] / (2.0 * rho) + eval.g_vals[i]);
    correction += t * t;
  }
  return f + psi_h.dot(eval.h_vals) + psi_g.dot(eval.g_vals) +
         rho * (eval.h_vals.squaredNorm() + eval.g_vals.squaredNorm() -
                correction);
}

ConstraintEval assemble_all(const ConstrainedProblem& problem, const Vector& x,
                            const Vector& g_vals, const Matrix& g_grads,
                            const Vector& h_vals, const Matrix& h_grads) {
  const int n_d = problem.dim();
  const int n_lin_g = problem.n_linear_ineq();
  const int n_lin_h = problem.n_linear_eq();
  const int n_g = static_cast<int>(g_vals.size());
  const int n_h = static_cast<int>(h_vals.size());

  ConstraintEval all;
  all.g_vals.resize(2 * n_d + n_lin_g + n_g);
  all.g_grads.resize(2 * n_d + n_lin_g + n_g, n_d);
  all.g_vals.head(n_d) = problem.lb - x;
  all.g_grads.topRows(n_d) = -Matrix::Identity(n_d, n_d);
  all.g_vals.segment(n_d, n_d) = x - problem.ub;
  all.g_grads.middleRows(n_d, n_d) = Matrix::Identity(n_d, n_d);
  if (n_lin_g > 0) {
    all.g_vals.segment(2 * n_d, n_lin_g) = problem.Ag * x - problem.bg;
    all.g_grads.middleRows(2 * n_d, n_lin_g) = problem.Ag;
  }
  if (n_g > 0) {
    all.g_vals.tail(n_g) = g_vals;
    all.g_grads.bottomRows(n_g) = g_grads;
  }

  all.h_vals.resize(n_lin_h + n_h);
  all.h_grads.resize(n_lin_h + n_h, n_d);
  if (n_lin_h > 0) {
    all.h_vals.head(n_lin_h) = problem.Ah * x - problem.bh;
    all.h_grads.topRows(n_lin_h) = problem.Ah;
  }
  if (n_h > 0) {
    all.h_vals.tail(n_h) = h_vals;
    all.h_grads.bottomRows(n_h) = h_grads;
  }
  return all;
}

FilteredEval filter_active(const ConstraintEval& eval, double threshold) {
  FilteredEval out;
  const int n_d = static_cast<int>(eval.g_grads.cols());
  for (int i = 0; i < eval.g_vals.size(); ++i) {
    if (eval.g_vals[i] >= threshold) out.index_map.push_back(i);
  }
  const int kept = static_cast<int>(out.index_map.size());
  out.eval.g_vals.resize(kept);
  out.eval.g_grads.resize(kept, n_d);
  for (int r = 0; r < kept; ++r) {
    out.eval.g_vals[r] = eval.g_vals[out.index_map[r]];
    out.eval.g_grads.row(r) = eval.g_grads.row(out.index_map[r]);
  }
  out.eval.h_vals = eval.h_vals;
  out.eval.h_grads = eval.h_grads;
  return out;
}

Multipliers solve_multipliers(const ConstraintEval& eval_all,
                              const Vector& f_grad, double alpha1,
                              double alpha2) {
  if (!(alpha1 > 0.0) || !(alpha2 > 0.0)) {
    throw InputError("alpha coefficients must be positive");
  }
  const int n_g = static_cast<int>(eval_all.g_vals.size());
  const int n_h = static_cast<int>(eval_all.h_vals.size());
  const int m = n_g + n_h;
  Multipliers out;
  out.psi_g.resize(n_g);
  out.psi_h.resize(n_h);
  if (m == 0) return out;

  const double w = g_plus(eval_all.g_vals).squaredNorm() +
                   eval_all.h_vals.squaredNorm();

  Matrix M(m, m);
  M.topLeftCorner(n_g, n_g) = eval_all.g_grads * eval_all.g_grads.transpose();
  M.topLeftCorner(n_g, n_g).diagonal() +=
      alpha1 * eval_all.g_vals.cwiseProduct(eval_all.g_vals);
  M.topLeftCorner(n_g, n_g).diagonal().array() += alpha2 * w;
  M.topRightCorner(n_g, n_h) = eval_all.g_grads * eval_all.h_grads.transpose();
  M.bottomLeftCorner(n_h, n_g) = M.topRightCorner(n_g, n_h).transpose();
  M.bottomRightCorner(n_h, n_h) = eval_all.h_grads * eval_all.h_grads.transpose();
  M.bottomRightCorner(n_h, n_h).diagonal().array() += alpha2 * w;

  Vector rhs(m);
  rhs.head(n_g) = -(eval_all.g_grads * f_grad);
  rhs.tail(n_h) = -(eval_all.h_grads * f_grad);

  Eigen::LLT<Matrix> llt(M);
  if (llt.info() != Eigen::Success) {
    // Degenerate case: w = 0 with rank-deficient constraint gradients.
    Matrix Mj = M;
    Mj.diagonal().array() += 1e-12 * M.trace() / m;
    llt.compute(Mj);
    if (llt.info() != Eigen::Success) {
      throw NumericError("multiplier system is not positive definite");
    }
  }
  const Vector psi = llt.solve(rhs);
  out.psi_g = psi.head(n_g);
  out.psi_h = psi.tail(n_h);
  return out;
}

double psi_value(const Vector& psi_g, const Vector& psi_h,
                 const ConstraintEval& eval_all, const Vector& f_grad,
                 double alpha1, double alpha2) {
  if (psi_g.size() != eval_all.g_vals.size() ||
      psi_h.size() != eval_all.h_vals.size()) {
    throw InputError("multiplier lengths do not match constraint vectors");
  }
  const double w = g_plus(eval_all.g_vals).squaredNorm() +
                   eval_all.h_vals.squaredNorm();
  Vector lag_grad = f_grad;
  if (psi_g.size() > 0) lag_grad += eval_all.g_grads.transpose() * psi_g;
  if (psi_h.size() > 0) lag_grad += eval_all.h_grads.transpose() * psi_h;
  return lag_grad.squaredNorm() +
         alpha1 * eval_all.g_vals.cwiseProduct(psi_g).squaredNorm() +
         alpha2 * w * (psi_g.squaredNorm() + psi_h.squaredNorm());
}

namespace {

constexpr double kActivityThreshold = -0.1;
constexpr double kAlphaPsi = 100.0;

double exact_merit_from_all(double f, const Vector& f_grad,
                            const ConstraintEval& all, double rho) {
  const FilteredEval filtered = filter_active(all, kActivityThreshold);
  const Multipliers psi =
      solve_multipliers(filtered.eval, f_grad, kAlphaPsi, kAlphaPsi);
  return merit_aug_lagrangian(f, filtered.eval, psi.psi_h, psi.psi_g, rho);
}

}  // namespace

double merit_exact_aug_lagrangian(const ConstrainedProblem& problem,
                                  const Vector& x, double f,
                                  const Vector& f_grad, const Vector& g_vals,
                                  const Matrix& g_grads, const Vector& h_vals,
                                  const Matrix& h_grads, double rho) {
  const ConstraintEval all =
      assemble_all(problem, x, g_vals, g_grads, h_vals, h_grads);
  return exact_merit_from_all(f, f_grad, all, rho);
}

double merit_exact_aug_lagrangian(const ConstrainedProblem& problem,
                                  const Vector& x, double rho) {
  const int n_d = problem.dim();
  Vector f_grad(n_d);
  const double f = problem.objective(x, &f_grad);
  const int n_g = problem.n_nonlinear_ineq();
  const int n_h = problem.n_nonlinear_eq();
  Vector g_vals(n_g), h_vals(n_h);
  Matrix g_grads(n_g, n_d), h_grads(n_h, n_d);
  Vector grad(n_d);
  for (int i = 0; i < n_g; ++i) {
    g_vals[i] = problem.g[i](x, &grad);
    g_grads.row(i) = grad;
  }
  for (int i = 0; i < n_h; ++i) {
    h_vals[i] = problem.h[i](x, &grad);
    h_grads.row(i) = grad;
  }
  return merit_exact_aug_lagrangian(problem, x, f, f_grad, g_vals, g_grads,
                                    h_vals, h_grads, rho);
}

}  // namespace cbo
