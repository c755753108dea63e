#include "cbo/acquisition.hpp"

#include <cmath>
#include <numbers>

namespace cbo {

namespace {

constexpr double kSigmaFloor = 1e-12;
constexpr double kAlphaPsi = 100.0;

double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Posterior mean/sigma and their gradients, with sigma floored away from 0.
struct MeanSigma {
  double mu, sigma;
  Vector mu_grad, sigma_grad;
};

MeanSigma mean_sigma(const GpModel& model, const Vector& x) {
  const GpModel::Posterior post = model.posterior(x);
  MeanSigma out;
  out.mu = post.mean;
  out.mu_grad = post.mean_grad;
  out.sigma = std::sqrt(std::max(post.var, 0.0));
  const double denom = 2.0 * std::max(out.sigma, kSigmaFloor);
  out.sigma_grad = post.var_grad / denom;
  return out;
}

// Surrogate constraint means stacked into the full inequality/equality
// systems (bound and linear rows exact).
struct SurrogateAll {
  double mu_f;
  Vector mu_f_grad;
  ConstraintEval all;
};

SurrogateAll assemble_surrogate_all(const SurrogateBundle& bundle,
                                    const ConstrainedProblem& problem,
                                    const Vector& x) {
  const int n_d = problem.dim();
  const int n_g = static_cast<int>(bundle.g_models.size());
  const int n_h = static_cast<int>(bundle.h_models.size());
  Vector mu_g(n_g), mu_h(n_h);
  Matrix dmu_g(n_g, n_d), dmu_h(n_h, n_d);
  for (int i = 0; i < n_g; ++i) {
    const GpModel::Posterior p = bundle.g_models[i].posterior(x);
    mu_g[i] = p.mean;
    dmu_g.row(i) = p.mean_grad;
  }
  for (int i = 0; i < n_h; ++i) {
    const GpModel::Posterior p = bundle.h_models[i].posterior(x);
    mu_h[i] = p.mean;
    dmu_h.row(i) = p.mean_grad;
  }
  SurrogateAll out;
  const GpModel::Posterior pf = bundle.f_model.posterior(x);
  out.mu_f = pf.mean;
  out.mu_f_grad = pf.mean_grad;
  out.all = assemble_all(problem, x, mu_g, dmu_g, mu_h, dmu_h);
  return out;
}

void require_no_equalities(const SurrogateBundle& bundle, const char* what) {
  if (!bundle.h_models.empty()) {
    throw UnsupportedError(std::string(what) +
                           " cannot handle equality constraints: the "
                           "probability of satisfying them has measure zero");
  }
}

}  // namespace

ValueGrad acq_uc(const SurrogateBundle& bundle, const Vector& x, double omega) {
  if (omega < 0.0) throw InputError("upper-confidence weight must be >= 0");
  const MeanSigma f = mean_sigma(bundle.f_model, x);
  ValueGrad out;
  out.value = f.mu - omega * f.sigma;
  out.grad = f.mu_grad - omega * f.sigma_grad;
  return out;
}

ValueGrad acq_ei(const SurrogateBundle& bundle, const Vector& x, double f_best) {
  const MeanSigma f = mean_sigma(bundle.f_model, x);
  const double sigma = std::max(f.sigma, kSigmaFloor);
  const double u = (f_best - f.mu) / sigma;
  const double cdf = normal_cdf(u);
  const double pdf = normal_pdf(u);
  ValueGrad out;
  out.value = -((f_best - f.mu) * cdf + f.sigma * pdf);
  out.grad = cdf * f.mu_grad - pdf * f.sigma_grad;
  return out;
}

ValueGrad acq_l2_penalty(const SurrogateBundle& bundle, const Vector& x) {
  ValueGrad out;
  out.value = 0.0;
  out.grad = Vector::Zero(x.size());
  for (const GpModel& m : bundle.h_models) {
    const GpModel::Posterior p = m.posterior(x);
    out.value += p.mean * p.mean;
    out.grad += 2.0 * p.mean * p.mean_grad;
  }
  for (const GpModel& m : bundle.g_models) {
    const GpModel::Posterior p = m.posterior(x);
    const double plus = std::max(p.mean, 0.0);
    out.value += plus * plus;
    out.grad += 2.0 * plus * p.mean_grad;
  }
  return out;
}

double prob_feasibility(const SurrogateBundle& bundle, const Vector& x) {
  require_no_equalities(bundle, "probability of feasibility");
  double prob = 1.0;
  for (const GpModel& m : bundle.g_models) {
    const MeanSigma g = mean_sigma(m, x);
    prob *= normal_cdf(-g.mu / std::max(g.sigma, kSigmaFloor));
  }
  return prob;
}

namespace {

// q(x) * prod_i P(g_i <= 0) with a product-rule gradient; leave-one-out
// products avoid dividing by vanishing factors.
ValueGrad weight_by_feasibility(const SurrogateBundle& bundle, const Vector& x,
                                const ValueGrad& q) {
  const int n_g = static_cast<int>(bundle.g_models.size());
  std::vector<double> p(n_g);
  std::vector<Vector> dp(n_g);
  for (int i = 0; i < n_g; ++i) {
    const MeanSigma g = mean_sigma(bundle.g_models[i], x);
    const double sigma = std::max(g.sigma, kSigmaFloor);
    const double z = -g.mu / sigma;
    p[i] = normal_cdf(z);
    const Vector z_grad = -g.mu_grad / sigma + (g.mu / (sigma * sigma)) * g.sigma_grad;
    dp[i] = normal_pdf(z) * z_grad;
  }
  double prod = 1.0;
  for (int i = 0; i < n_g; ++i) prod *= p[i];
  ValueGrad out;
  out.value = q.value * prod;
  out.grad = prod * q.grad;
  for (int i = 0; i < n_g; ++i) {
    double rest = 1.0;
    for (int j = 0; j < n_g; ++j) {
      if (j != i) rest *= p[j];
    }
    out.grad += q.value * rest * dp[i];
  }
  return out;
}

}  // namespace

ValueGrad acq_cei(const SurrogateBundle& bundle, const Vector& x, double f_best) {
  require_no_equalities(bundle, "constrained expected improvement");
  return weight_by_feasibility(bundle, x, acq_ei(bundle, x, f_best));
}

ValueGrad acq_cuc(const SurrogateBundle& bundle, const Vector& x, double omega) {
  require_no_equalities(bundle, "constrained upper confidence");
  return weight_by_feasibility(bundle, x, acq_uc(bundle, x, omega));
}

ValueGrad acq_exploration(const SurrogateBundle& bundle, const Vector& x) {
  ValueGrad out;
  out.value = 0.0;
  out.grad = Vector::Zero(x.size());
  for (const GpModel& m : bundle.g_models) {
    const MeanSigma g = mean_sigma(m, x);
    const double excess = std::max(g.mu - g.sigma, 0.0);
    out.value += excess * excess;
    out.grad += 2.0 * excess * (g.mu_grad - g.sigma_grad);
  }
  for (const GpModel& m : bundle.h_models) {
    const MeanSigma h = mean_sigma(m, x);
    const double excess = std::max(std::abs(h.mu) - h.sigma, 0.0);
    out.value += excess * excess;
    const double sign = h.mu >= 0.0 ? 1.0 : -1.0;
    out.grad += 2.0 * excess * (sign * h.mu_grad - h.sigma_grad);
  }
  return out;
}

ValueGrad acq_exact_lagrangian(const SurrogateBundle& bundle,
                               const ConstrainedProblem& problem,
                               const Vector& x, double rho,
                               double activity_threshold) {
  if (!(rho > 0.0)) throw InputError("penalty rho must be positive");
  const SurrogateAll s = assemble_surrogate_all(bundle, problem, x);
  const FilteredEval filtered = filter_active(s.all, activity_threshold);
  const Multipliers psi =
      solve_multipliers(filtered.eval, s.mu_f_grad, kAlphaPsi, kAlphaPsi);

  ValueGrad out;
  out.value =
      merit_aug_lagrangian(s.mu_f, filtered.eval, psi.psi_h, psi.psi_g, rho);

  // Gradient with the multipliers held fixed at their solve for this x.
  out.grad = s.mu_f_grad;
  const ConstraintEval& e = filtered.eval;
  for (int i = 0; i < e.h_vals.size(); ++i) {
    out.grad += (psi.psi_h[i] + 2.0 * rho * e.h_vals[i]) * e.h_grads.row(i).transpose();
  }
  for (int i = 0; i < e.g_vals.size(); ++i) {
    double coeff = psi.psi_g[i] + 2.0 * rho * e.g_vals[i];
    const double t = psi.psi_g[i] / (2.0 * rho) + e.g_vals[i];
    if (t < 0.0) coeff -= 2.0 * rho * t;
    out.grad += coeff * e.g_grads.row(i).transpose();
  }
  return out;
}

namespace detail {

QlagAnchor qlag_anchor(const SurrogateBundle& bundle,
                       const ConstrainedProblem& problem, const Vector& x,
                       double activity_threshold) {
  const SurrogateAll s = assemble_surrogate_all(bundle, problem, x);
  const FilteredEval filtered = filter_active(s.all, activity_threshold);
  QlagAnchor anchor;
  anchor.index_map = filtered.index_map;
  anchor.psi =
      solve_multipliers(filtered.eval, s.mu_f_grad, kAlphaPsi, kAlphaPsi);
  return anchor;
}

double qlag_value_frozen(const SurrogateBundle& bundle,
                         const ConstrainedProblem& problem, const Vector& x,
                         double rho, const QlagAnchor& anchor) {
  const SurrogateAll s = assemble_surrogate_all(bundle, problem, x);
  const int kept = static_cast<int>(anchor.index_map.size());
  ConstraintEval e;
  e.g_vals.resize(kept);
  e.g_grads.resize(kept, problem.dim());
  for (int r = 0; r < kept; ++r) {
    e.g_vals[r] = s.all.g_vals[anchor.index_map[r]];
    e.g_grads.row(r) = s.all.g_grads.row(anchor.index_map[r]);
  }
  e.h_vals = s.all.h_vals;
  e.h_grads = s.all.h_grads;
  return merit_aug_lagrangian(s.mu_f, e, anchor.psi.psi_h, anchor.psi.psi_g, rho);
}

}  // namespace detail

}  // namespace cbo
