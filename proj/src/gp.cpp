#include "cbo/gp.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#include "cbo/rng.hpp"

namespace cbo {

namespace {

constexpr double kSigK2Floor = 1e-300;

// Unvalidated per-pair kernel derivative evaluation, shared by the matrix and
// cross-vector assembly loops.
struct PairDerivs {
  double value;
  Vector d_dx;      // derivative in the first argument
  Matrix d2_dxdy;   // mixed second derivatives
};

PairDerivs pair_derivs(const Vector& xi, const Vector& xj, const Vector& g2) {
  PairDerivs out;
  const Vector d = xi - xj;
  const Vector g2d = g2.cwiseProduct(d);
  const double k = std::exp(-0.5 * d.dot(g2d));
  out.value = k;
  out.d_dx = -k * g2d;
  out.d2_dxdy = -(g2d * g2d.transpose()) * k;
  out.d2_dxdy.diagonal() += k * g2;
  return out;
}

void check_distinct_rows(const Matrix& X) {
  const int n = static_cast<int>(X.rows());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if ((X.row(i) - X.row(j)).squaredNorm() == 0.0) {
        throw InputError("training points " + std::to_string(i) + " and " +
                         std::to_string(j) +
                         " coincide; covariance would be singular");
      }
    }
  }
}

}  // namespace

TrainingSet TrainingSet::from_values(Matrix X, const Vector& f,
                                     const Matrix& grads) {
  const int n_x = static_cast<int>(X.rows());
  const int n_d = static_cast<int>(X.cols());
  if (f.size() != n_x || grads.rows() != n_x || grads.cols() != n_d) {
    throw InputError("training value/gradient shapes do not match X");
  }
  TrainingSet t;
  t.X = std::move(X);
  t.f_grad.resize(n_x * (n_d + 1));
  t.f_grad.head(n_x) = f;
  for (int a = 0; a < n_d; ++a) {
    t.f_grad.segment((a + 1) * n_x, n_x) = grads.col(a);
  }
  return t;
}

void TrainingSet::validate() const {
  if (n_points() < 1) throw InputError("training set is empty");
  if (f_grad.size() != size()) {
    throw InputError("observation vector length does not match n_x (n_d + 1)");
  }
  check_distinct_rows(X);
}

Vector ones_mod(int n_points, int dim) {
  Vector u = Vector::Zero(n_points * (dim + 1));
  u.head(n_points).setOnes();
  return u;
}

Matrix build_grad_kernel_matrix(const Matrix& X, const KernelParams& params) {
  const int n_x = static_cast<int>(X.rows());
  const int n_d = static_cast<int>(X.cols());
  if (n_x < 1) throw InputError("need at least one training point");
  params.validate(n_d);
  check_distinct_rows(X);

  const Vector g2 = params.gamma.cwiseProduct(params.gamma);
  const int m = n_x * (n_d + 1);
  Matrix Kg(m, m);
  for (int i = 0; i < n_x; ++i) {
    for (int j = 0; j < n_x; ++j) {
      const PairDerivs pd = pair_derivs(X.row(i), X.row(j), g2);
      Kg(i, j) = pd.value;
      for (int a = 0; a < n_d; ++a) {
        Kg((a + 1) * n_x + i, j) = pd.d_dx[a];
        Kg(i, (a + 1) * n_x + j) = -pd.d_dx[a];  // derivative in second argument
        for (int b = 0; b < n_d; ++b) {
          Kg((a + 1) * n_x + i, (b + 1) * n_x + j) = pd.d2_dxdy(a, b);
        }
      }
    }
  }
  return Kg;
}

Preconditioner precondition(const Matrix& Kg, double condmax) {
  if (condmax <= 1.0) throw InputError("condmax must exceed 1");
  const int m = static_cast<int>(Kg.rows());
  Preconditioner out;
  out.P.resize(m);
  for (int i = 0; i < m; ++i) {
    const double d = Kg(i, i);
    if (!(d > 0.0)) {
      throw NumericError("kernel matrix diagonal entry " + std::to_string(i) +
                         " is not positive");
    }
    out.P[i] = std::sqrt(d);
  }
  out.W = out.P.cwiseProduct(out.P);
  double max_row_sum = 0.0;
  for (int i = 0; i < m; ++i) {
    double row = 0.0;
    for (int j = 0; j < m; ++j) {
      row += std::abs(Kg(i, j)) / (out.P[i] * out.P[j]);
    }
    max_row_sum = std::max(max_row_sum, row);
  }
  out.eta = max_row_sum / (condmax - 1.0);
  return out;
}

Vector CovarianceFactor::solve(const Vector& rhs) const {
  Vector z = rhs.cwiseQuotient(P);
  chol_lower.triangularView<Eigen::Lower>().solveInPlace(z);
  chol_lower.triangularView<Eigen::Lower>().transpose().solveInPlace(z);
  return z.cwiseQuotient(P);
}

double CovarianceFactor::log_det() const {
  double ld = 0.0;
  for (int i = 0; i < P.size(); ++i) {
    ld += 2.0 * std::log(P[i]) + 2.0 * std::log(chol_lower(i, i));
  }
  return ld;
}

namespace {

CovarianceFactor factor_from_preconditioner(const Matrix& Kg,
                                            const Preconditioner& pre) {
  const int m = static_cast<int>(Kg.rows());
  Matrix C = Kg;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) C(i, j) /= pre.P[i] * pre.P[j];
  }
  // Honors a caller-supplied W that differs from P^2.
  for (int i = 0; i < m; ++i) {
    C(i, i) += pre.eta * pre.W[i] / (pre.P[i] * pre.P[i]);
  }
  Eigen::LLT<Matrix> llt(C);
  if (llt.info() != Eigen::Success) {
    throw NumericError("Cholesky factorization of preconditioned covariance failed");
  }
  CovarianceFactor out;
  out.P = pre.P;
  out.eta = pre.eta;
  out.chol_lower = llt.matrixL();
  return out;
}

}  // namespace

CovarianceFactor factor_covariance(const Matrix& Kg, double condmax) {
  return factor_from_preconditioner(Kg, precondition(Kg, condmax));
}

MeanVarianceFit fit_beta_sigK2(const TrainingSet& training,
                               const CovarianceFactor& factor) {
  const Vector u = ones_mod(training.n_points(), training.dim());
  const Vector su = factor.solve(u);
  const Vector sf = factor.solve(training.f_grad);
  const double beta = u.dot(sf) / u.dot(su);
  const Vector r = training.f_grad - u * beta;
  const double quad = r.dot(factor.solve(r));
  MeanVarianceFit fit;
  fit.beta = beta;
  fit.sigK2 = std::max(quad, 0.0) / static_cast<double>(training.size());
  return fit;
}

MeanVarianceFit fit_beta_sigK2(const TrainingSet& training,
                               const KernelParams& params, double eta,
                               const Vector& W, const Vector& P) {
  training.validate();
  const Matrix Kg = build_grad_kernel_matrix(training.X, params);
  Preconditioner pre{P, W, eta};
  return fit_beta_sigK2(training, factor_from_preconditioner(Kg, pre));
}

double log_marginal_likelihood(const KernelParams& params,
                               const TrainingSet& training, double condmax) {
  training.validate();
  const Matrix Kg = build_grad_kernel_matrix(training.X, params);
  const CovarianceFactor factor = factor_covariance(Kg, condmax);
  const MeanVarianceFit fit = fit_beta_sigK2(training, factor);
  const double m = static_cast<double>(training.size());
  return -0.5 * m * std::log(std::max(fit.sigK2, kSigK2Floor)) -
         0.5 * factor.log_det();
}

namespace detail {

Matrix dKg_dgamma(const Matrix& X, const KernelParams& params, int k) {
  const int n_x = static_cast<int>(X.rows());
  const int n_d = static_cast<int>(X.cols());
  const Vector g = params.gamma;
  const Vector g2 = g.cwiseProduct(g);
  const int m = n_x * (n_d + 1);
  Matrix D(m, m);
  for (int i = 0; i < n_x; ++i) {
    for (int j = 0; j < n_x; ++j) {
      const Vector d = X.row(i) - X.row(j);
      const Vector g2d = g2.cwiseProduct(d);
      const double k0 = std::exp(-0.5 * d.dot(g2d));
      const double dk2 = d[k] * d[k];
      const double s = -g[k] * dk2;  // d log k0 / d gamma_k
      D(i, j) = s * k0;
      for (int a = 0; a < n_d; ++a) {
        // d/dgamma_k of -gamma_a^2 d_a k0
        double vx = s * (-g2d[a] * k0);
        if (a == k) vx += -2.0 * g[k] * d[k] * k0;
        D((a + 1) * n_x + i, j) = vx;
        D(i, (a + 1) * n_x + j) = -vx;
        for (int b = 0; b < n_d; ++b) {
          // d/dgamma_k of k0 (gamma_a^2 delta_ab - gamma_a^2 gamma_b^2 d_a d_b)
          double base = (a == b ? g2[a] : 0.0) - g2d[a] * g2d[b];
          double extra = 0.0;
          if (a == b && a == k) extra += 2.0 * g[k];
          if (a == k) extra -= 2.0 * g[k] * d[k] * g2d[b];
          if (b == k) extra -= 2.0 * g[k] * d[k] * g2d[a];
          D((a + 1) * n_x + i, (b + 1) * n_x + j) = k0 * (s * base + extra);
        }
      }
    }
  }
  return D;
}

double log_marginal_likelihood_frozen(const KernelParams& params,
                                      const TrainingSet& training,
                                      const Preconditioner& pre) {
  const Matrix Kg = build_grad_kernel_matrix(training.X, params);
  const CovarianceFactor factor = factor_from_preconditioner(Kg, pre);
  const MeanVarianceFit fit = fit_beta_sigK2(training, factor);
  const double m = static_cast<double>(training.size());
  return -0.5 * m * std::log(std::max(fit.sigK2, kSigK2Floor)) -
         0.5 * factor.log_det();
}

// Gradient of the profile likelihood in log(gamma), holding the nugget and
// preconditioner fixed at their values for the current gamma (eta depends on
// gamma through a row-sum maximum and is not differentiable).
Vector loglik_gradient_loggamma(const KernelParams& params,
                                const TrainingSet& training, double condmax) {
  const int n_d = training.dim();
  const int m = training.size();
  const Matrix Kg = build_grad_kernel_matrix(training.X, params);
  const CovarianceFactor factor = factor_covariance(Kg, condmax);
  const MeanVarianceFit fit = fit_beta_sigK2(training, factor);

  // Sigma^-1 = P^-1 C^-1 P^-1, formed densely once.
  Matrix Cinv = Matrix::Identity(m, m);
  factor.chol_lower.triangularView<Eigen::Lower>().solveInPlace(Cinv);
  Cinv = factor.chol_lower.triangularView<Eigen::Lower>()
             .transpose()
             .solve(Cinv);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) Cinv(i, j) /= factor.P[i] * factor.P[j];
  }

  const Vector u = ones_mod(training.n_points(), n_d);
  const Vector r = training.f_grad - u * fit.beta;
  const Vector a = factor.solve(r);
  const double sig2 = std::max(fit.sigK2, kSigK2Floor);

  Vector grad(n_d);
  for (int k = 0; k < n_d; ++k) {
    const Matrix Dk = dKg_dgamma(training.X, params, k);
    const double quad = a.dot(Dk * a);
    const double trace = (Cinv.array() * Dk.array()).sum();
    const double dgamma = 0.5 * quad / sig2 - 0.5 * trace;
    grad[k] = dgamma * params.gamma[k];
  }
  return grad;
}

}  // namespace detail

KernelParams select_hyperparameters(const TrainingSet& training, double condmax,
                                    const HyperSearchOptions& options) {
  training.validate();
  if (options.n_starts < 1) throw InputError("n_starts must be at least 1");
  const int n_d = training.dim();

  Vector lo(n_d), hi(n_d);
  for (int i = 0; i < n_d; ++i) {
    double range = training.X.col(i).maxCoeff() - training.X.col(i).minCoeff();
    if (!(range > 0.0)) {
      range = options.fallback_range ? (*options.fallback_range)[i] : 1.0;
    }
    lo[i] = std::log(1e-2 / range);
    hi[i] = std::log(1e2 / range);
  }

  // Latin hypercube over log(gamma).
  Rng rng(options.seed);
  const int n = options.n_starts;
  std::vector<Vector> candidates;
  candidates.reserve(n + 1);
  Matrix lhs(n, n_d);
  for (int d = 0; d < n_d; ++d) {
    const std::vector<int> perm = rng.permutation(n);
    for (int s = 0; s < n; ++s) {
      const double frac = (perm[s] + rng.uniform()) / n;
      lhs(s, d) = lo[d] + frac * (hi[d] - lo[d]);
    }
  }
  for (int s = 0; s < n; ++s) candidates.push_back(lhs.row(s));
  if (options.warm_start) {
    Vector w = options.warm_start->array().log();
    for (int i = 0; i < n_d; ++i) w[i] = std::clamp(w[i], lo[i], hi[i]);
    candidates.push_back(w);
  }

  const auto eval = [&](const Vector& log_gamma) -> double {
    KernelParams p{log_gamma.array().exp()};
    try {
      return log_marginal_likelihood(p, training, condmax);
    } catch (const NumericError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };

  int best = 0;
  double best_val = eval(candidates[0]);
  for (int s = 1; s < static_cast<int>(candidates.size()); ++s) {
    const double v = eval(candidates[s]);
    if (v > best_val) {
      best_val = v;
      best = s;
    }
  }

  // Projected gradient ascent from the best candidate; steps are accepted
  // only when the exact likelihood improves, so the sampled candidates can
  // never beat the result.
  Vector x = candidates[best];
  double fx = best_val;
  double step = 0.5;
  for (int iter = 0; iter < options.max_ascent_iters; ++iter) {
    Vector g;
    try {
      g = detail::loglik_gradient_loggamma(KernelParams{x.array().exp()},
                                           training, condmax);
    } catch (const NumericError&) {
      break;
    }
    if (!g.allFinite() ||
        g.lpNorm<Eigen::Infinity>() < 1e-6 * (1.0 + std::abs(fx))) {
      break;
    }

    double t = step;
    bool accepted = false;
    Vector xn;
    double fn = fx;
    for (int trial = 0; trial < 30; ++trial) {
      xn = x + t * g;
      for (int i = 0; i < n_d; ++i) xn[i] = std::clamp(xn[i], lo[i], hi[i]);
      fn = eval(xn);
      if (fn > fx) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    const bool converged = (fn - fx) <= options.rel_tol * (std::abs(fx) + 1.0);
    x = xn;
    fx = fn;
    step = std::min(1.0, 2.0 * t);
    if (converged) break;
  }

  return KernelParams{x.array().exp()};
}

Vector grad_kernel_cross(const Matrix& X, const KernelParams& params,
                         const Vector& x, Matrix* jacobian) {
  const int n_x = static_cast<int>(X.rows());
  const int n_d = static_cast<int>(X.cols());
  params.validate(n_d);
  if (x.size() != n_d) throw InputError("prediction point has wrong dimension");

  const Vector g2 = params.gamma.cwiseProduct(params.gamma);
  const int m = n_x * (n_d + 1);
  Vector v(m);
  if (jacobian) jacobian->resize(m, n_d);
  for (int i = 0; i < n_x; ++i) {
    const PairDerivs pd = pair_derivs(X.row(i), x, g2);
    v[i] = pd.value;
    for (int a = 0; a < n_d; ++a) v[(a + 1) * n_x + i] = pd.d_dx[a];
    if (jacobian) {
      // d/dx of k(x_i, x): the derivative in the second argument.
      jacobian->row(i) = -pd.d_dx.transpose();
      for (int a = 0; a < n_d; ++a) {
        jacobian->row((a + 1) * n_x + i) = pd.d2_dxdy.row(a);
      }
    }
  }
  return v;
}

GpModel GpModel::fit(TrainingSet training, KernelParams params, double condmax) {
  training.validate();
  params.validate(training.dim());
  GpModel model;
  const Matrix Kg = build_grad_kernel_matrix(training.X, params);
  model.factor_ = factor_covariance(Kg, condmax);
  const MeanVarianceFit fit = fit_beta_sigK2(training, model.factor_);
  model.beta_ = fit.beta;
  model.sigK2_ = fit.sigK2;
  const Vector u = ones_mod(training.n_points(), training.dim());
  model.alpha_ = model.factor_.solve(training.f_grad - u * fit.beta);
  model.training_ = std::move(training);
  model.params_ = std::move(params);
  return model;
}

GpModel::GpModel(const GpModel& other)
    : training_(other.training_),
      params_(other.params_),
      factor_(other.factor_),
      beta_(other.beta_),
      sigK2_(other.sigK2_),
      alpha_(other.alpha_),
      min_preclamp_var_(other.min_preclamp_var_.load(std::memory_order_relaxed)) {}

GpModel& GpModel::operator=(const GpModel& other) {
  if (this != &other) {
    training_ = other.training_;
    params_ = other.params_;
    factor_ = other.factor_;
    beta_ = other.beta_;
    sigK2_ = other.sigK2_;
    alpha_ = other.alpha_;
    min_preclamp_var_.store(other.min_preclamp_var_.load(std::memory_order_relaxed),
                            std::memory_order_relaxed);
  }
  return *this;
}

GpModel::GpModel(GpModel&& other) noexcept
    : training_(std::move(other.training_)),
      params_(std::move(other.params_)),
      factor_(std::move(other.factor_)),
      beta_(other.beta_),
      sigK2_(other.sigK2_),
      alpha_(std::move(other.alpha_)),
      min_preclamp_var_(other.min_preclamp_var_.load(std::memory_order_relaxed)) {}

GpModel& GpModel::operator=(GpModel&& other) noexcept {
  if (this != &other) {
    training_ = std::move(other.training_);
    params_ = std::move(other.params_);
    factor_ = std::move(other.factor_);
    beta_ = other.beta_;
    sigK2_ = other.sigK2_;
    alpha_ = std::move(other.alpha_);
    min_preclamp_var_.store(other.min_preclamp_var_.load(std::memory_order_relaxed),
                            std::memory_order_relaxed);
  }
  return *this;
}

GpModel::Posterior GpModel::posterior(const Vector& x) const {
  Matrix J;
  const Vector v = grad_kernel_cross(training_.X, params_, x, &J);
  const Vector s = factor_.solve(v);
  Posterior out;
  out.mean = beta_ + v.dot(alpha_);
  const double raw = 1.0 - v.dot(s);
  double seen = min_preclamp_var_.load(std::memory_order_relaxed);
  while (raw < seen && !min_preclamp_var_.compare_exchange_weak(
                           seen, raw, std::memory_order_relaxed)) {
  }
  out.var = sigK2_ * std::max(raw, 0.0);
  out.mean_grad = J.transpose() * alpha_;
  out.var_grad = -2.0 * sigK2_ * (J.transpose() * s);
  return out;
}

double GpModel::normalized_variance(const Vector& x, Vector* grad) const {
  Matrix J;
  const Vector v = grad_kernel_cross(training_.X, params_, x, grad ? &J : nullptr);
  const Vector s = factor_.solve(v);
  const double raw = 1.0 - v.dot(s);
  if (grad) *grad = -2.0 * (J.transpose() * s);
  return std::clamp(raw, 0.0, 1.0);
}

}  // namespace cbo
