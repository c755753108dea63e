#pragma once

#include <atomic>
#include <cstdint>
#include <optional>

#include "cbo/kernels.hpp"
#include "cbo/types.hpp"

namespace cbo {

// Function and gradient observations at n_x points.  The observation vector
// is blocked as [f(x_1..x_nx); df/dx_1 at all points; ...; df/dx_nd at all
// points]; entry for derivative block a (1-based) at point i lives at index
// a*n_x + i.
struct TrainingSet {
  Matrix X;       // n_x x n_d
  Vector f_grad;  // n_x (n_d + 1)

  int n_points() const { return static_cast<int>(X.rows()); }
  int dim() const { return static_cast<int>(X.cols()); }
  int size() const { return n_points() * (dim() + 1); }

  // Assembles the blocked observation vector from per-point values and a
  // n_x x n_d matrix of gradients.
  static TrainingSet from_values(Matrix X, const Vector& f, const Matrix& grads);

  void validate() const;
};

// Gradient-enhanced kernel matrix: (n_d+1) x (n_d+1) blocks of n_x x n_x
// kernel (cross-)derivative evaluations.  Block (0,0) holds kernel values,
// block (a,0) the derivatives in the first argument's coordinate a, block
// (0,b) the derivatives in the second argument, and block (a,b) the mixed
// second derivatives.  Symmetric for the stationary Gaussian kernel.
Matrix build_grad_kernel_matrix(const Matrix& X, const KernelParams& params);

// Diagonal preconditioner, weight matrix, and nugget that cap the condition
// number of P^-1 (Kg + eta W) P^-1 at condmax:
//   P   = diag(sqrt(diag(Kg)))
//   W   = P^2
//   eta = max_i sum_j |P^-1 Kg P^-1|_ij / (condmax - 1)
struct Preconditioner {
  Vector P;    // diagonal entries, all > 0
  Vector W;    // diagonal entries of P^2
  double eta;  // >= 0
};

Preconditioner precondition(const Matrix& Kg, double condmax);

// Cholesky factorization of the preconditioned covariance
// C = P^-1 Kg P^-1 + eta I, giving solves and log-determinants of
// (Kg + eta W) without ever forming the ill-conditioned matrix directly.
struct CovarianceFactor {
  Vector P;
  double eta = 0.0;
  Matrix chol_lower;  // L with L L^T = C

  // (Kg + eta W)^-1 rhs
  Vector solve(const Vector& rhs) const;
  // log det(Kg + eta W) = 2 sum log P_ii + 2 sum log L_ii
  double log_det() const;
  int size() const { return static_cast<int>(P.size()); }
};

CovarianceFactor factor_covariance(const Matrix& Kg, double condmax);

// Closed-form constant mean and kernel variance given a factored covariance.
struct MeanVarianceFit {
  double beta;
  double sigK2;
};

MeanVarianceFit fit_beta_sigK2(const TrainingSet& training,
                               const CovarianceFactor& factor);
MeanVarianceFit fit_beta_sigK2(const TrainingSet& training,
                               const KernelParams& params, double eta,
                               const Vector& W, const Vector& P);

// Profile marginal log-likelihood of gamma with beta and sigK2 substituted by
// their closed forms; additive constants dropped.
double log_marginal_likelihood(const KernelParams& params,
                               const TrainingSet& training, double condmax);

struct HyperSearchOptions {
  int n_starts = 50;
  std::uint64_t seed = 0;
  // Candidate gamma_i are drawn log-uniformly from [1e-2 / range_i,
  // 1e2 / range_i] where range_i is the training-data coordinate range.
  // Degenerate (zero) ranges fall back to this width instead.
  std::optional<Vector> fallback_range;
  // Extra candidate evaluated alongside the sampled ones, e.g. last
  // iteration's selection.
  std::optional<Vector> warm_start;
  int max_ascent_iters = 100;
  double rel_tol = 1e-8;
};

// Evaluates the likelihood at n_starts seeded Latin-hypercube candidates and
// runs a bounded gradient ascent in log(gamma) from the best one.  The result
// never has lower likelihood than any candidate.
KernelParams select_hyperparameters(const TrainingSet& training, double condmax,
                                    const HyperSearchOptions& options = {});

// The cross-covariance vector k_grad(X, x) between the blocked training
// observations and a prediction point, and optionally its Jacobian in x
// (size n_x(n_d+1) x n_d).
Vector grad_kernel_cross(const Matrix& X, const KernelParams& params,
                         const Vector& x, Matrix* jacobian = nullptr);

// Fitted gradient-enhanced GP with a constant mean.  Immutable once built;
// posterior evaluation is safe from concurrent threads.
class GpModel {
 public:
  static GpModel fit(TrainingSet training, KernelParams params, double condmax);

  struct Posterior {
    double mean;
    double var;  // clamped at 0
    Vector mean_grad;
    Vector var_grad;
  };

  Posterior posterior(const Vector& x) const;

  // sigma_f^2(x) / sigK2 in [0, 1]; the posterior-variance trust region value.
  double normalized_variance(const Vector& x, Vector* grad = nullptr) const;

  const TrainingSet& training() const { return training_; }
  const KernelParams& params() const { return params_; }
  double beta() const { return beta_; }
  double sigK2() const { return sigK2_; }
  double eta() const { return factor_.eta; }
  const Vector& preconditioner() const { return factor_.P; }
  const Matrix& chol_lower() const { return factor_.chol_lower; }
  const Vector& alpha() const { return alpha_; }
  // Smallest pre-clamp normalized variance seen so far (diagnostic).
  double min_preclamp_variance() const {
    return min_preclamp_var_.load(std::memory_order_relaxed);
  }

  GpModel() = default;
  GpModel(const GpModel& other);
  GpModel& operator=(const GpModel& other);
  GpModel(GpModel&& other) noexcept;
  GpModel& operator=(GpModel&& other) noexcept;

 private:
  TrainingSet training_;
  KernelParams params_;
  CovarianceFactor factor_;
  double beta_ = 0.0;
  double sigK2_ = 0.0;
  Vector alpha_;  // (Kg + eta W)^-1 (f_grad - ones_mod beta)
  mutable std::atomic<double> min_preclamp_var_{0.0};
};

// [1 ... 1, 0 ... 0]^T: ones over the value block, zeros over gradients.
Vector ones_mod(int n_points, int dim);

namespace detail {

// d Kg / d gamma_k, used by the likelihood ascent.
Matrix dKg_dgamma(const Matrix& X, const KernelParams& params, int k);

// Likelihood evaluated with a caller-supplied (frozen) preconditioner and
// nugget instead of recomputing them from gamma.
double log_marginal_likelihood_frozen(const KernelParams& params,
                                      const TrainingSet& training,
                                      const Preconditioner& pre);

// Gradient of the profile likelihood in log(gamma) with the preconditioner
// and nugget frozen at the current gamma.
Vector loglik_gradient_loggamma(const KernelParams& params,
                                const TrainingSet& training, double condmax);

}  // namespace detail

}  // namespace cbo
