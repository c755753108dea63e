#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cbo/acquisition.hpp"
#include "cbo/problems.hpp"
#include "test_util.hpp"

using namespace cbo;

namespace {

// A model whose far-field posterior has exactly the requested mean and
// variance: beta shifts with a constant offset and sigK2 scales
// quadratically, so both can be dialed in after one pilot fit.
GpModel make_far_field_model(Rng& rng, double mu_target, double var_target) {
  const int n_x = 5, n_d = 2;
  Matrix X(n_x, n_d);
  for (int i = 0; i < n_x; ++i) {
    for (int j = 0; j < n_d; ++j) X(i, j) = rng.uniform(-1.0, 1.0);
  }
  const KernelParams params{Vector::Constant(n_d, 1.0)};
  Matrix Kg = build_grad_kernel_matrix(X, params);
  Kg.diagonal().array() += 1e-12;
  Vector z(Kg.rows());
  for (int i = 0; i < z.size(); ++i) z[i] = rng.normal();
  TrainingSet ts;
  ts.X = X;
  ts.f_grad = Matrix(Eigen::LLT<Matrix>(Kg).matrixL()) * z;

  GpModel pilot = GpModel::fit(ts, params, 1e10);
  ts.f_grad *= std::sqrt(var_target / pilot.sigK2());
  GpModel scaled = GpModel::fit(ts, params, 1e10);
  ts.f_grad.head(n_x).array() += mu_target - scaled.beta();
  return GpModel::fit(ts, params, 1e10);
}

const Vector kFarPoint = Vector::Constant(2, 60.0);

SurrogateBundle quad_bundle() {
  const TestProblem tp = make_quadratic(2);
  Rng rng(404);
  const int n_x = 8;
  Matrix X(n_x, 2);
  for (int i = 0; i < n_x; ++i) {
    for (int j = 0; j < 2; ++j) X(i, j) = rng.uniform(-3.0, 3.0);
  }
  const auto fit_on = [&](const DifferentiableFn& fn, double gamma) {
    Vector vals(n_x), grad(2);
    Matrix grads(n_x, 2);
    for (int i = 0; i < n_x; ++i) {
      vals[i] = fn(X.row(i), &grad);
      grads.row(i) = grad;
    }
    return GpModel::fit(TrainingSet::from_values(X, vals, grads),
                        KernelParams{Vector::Constant(2, gamma)}, 1e10);
  };
  SurrogateBundle bundle;
  bundle.f_model = fit_on(tp.problem.objective, 0.9);
  bundle.g_models.push_back(fit_on(tp.problem.g[0], 1.2));
  return bundle;
}

}  // namespace

TEST_SUITE("acquisition") {

TEST_CASE("upper confidence with omega zero is the posterior mean") {
  Rng rng(51);
  SurrogateBundle bundle;
  bundle.f_model = make_far_field_model(rng, 1.7, 2.0);
  for (int rep = 0; rep < 10; ++rep) {
    const Vector x = test::random_vector(rng, 2, -2.0, 2.0);
    const ValueGrad uc = acq_uc(bundle, x, 0.0);
    const GpModel::Posterior post = bundle.f_model.posterior(x);
    CHECK(uc.value == doctest::Approx(post.mean).epsilon(1e-12));
    CHECK((uc.grad - post.mean_grad).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
  CHECK_THROWS_AS(acq_uc(bundle, kFarPoint, -0.5), InputError);
}

TEST_CASE("expected improvement at the incumbent with unit spread") {
  Rng rng(52);
  SurrogateBundle bundle;
  bundle.f_model = make_far_field_model(rng, 0.4, 1.0);
  // Far from data the posterior is exactly (mu, sigma) = (0.4, 1).
  const ValueGrad ei = acq_ei(bundle, kFarPoint, 0.4);
  CHECK(ei.value ==
        doctest::Approx(-1.0 / std::sqrt(2.0 * std::numbers::pi)).epsilon(1e-9));
}

TEST_CASE("expected improvement collapses at a zero-variance incumbent") {
  Rng rng(53);
  SurrogateBundle bundle;
  bundle.f_model = make_far_field_model(rng, 0.0, 1.0);
  const Vector x0 = bundle.f_model.training().X.row(0);
  const GpModel::Posterior post = bundle.f_model.posterior(x0);
  const double sigma = std::sqrt(std::max(post.var, 0.0));
  // The nugget keeps sigma slightly above zero at training points; in the
  // degenerate limit |EI| = sigma phi(0), vanishing linearly with sigma.
  CHECK(sigma <= 1e-2);
  const ValueGrad ei = acq_ei(bundle, x0, post.mean);
  CHECK(std::abs(ei.value) <= sigma);
}

TEST_CASE("expected improvement is nonpositive and deepens with spread") {
  Rng rng(54);
  SurrogateBundle bundle;
  bundle.f_model = make_far_field_model(rng, 0.0, 1.0);
  SurrogateBundle wide;
  wide.f_model = make_far_field_model(rng, 0.0, 4.0);
  for (int rep = 0; rep < 20; ++rep) {
    const Vector x = test::random_vector(rng, 2, -2.0, 2.0);
    CHECK(acq_ei(bundle, x, 0.3).value <= 0.0);
  }
  // At fixed mu = f_best, the minimized-EI value decreases as sigma grows.
  CHECK(acq_ei(wide, kFarPoint, 0.0).value < acq_ei(bundle, kFarPoint, 0.0).value);
}

TEST_CASE("surrogate l2 penalty from controlled means") {
  Rng rng(55);
  SurrogateBundle bundle;
  bundle.f_model = make_far_field_model(rng, 0.0, 1.0);
  bundle.h_models.push_back(make_far_field_model(rng, 0.3, 1.0));
  bundle.g_models.push_back(make_far_field_model(rng, -1.0, 1.0));
  const ValueGrad pen = acq_l2_penalty(bundle, kFarPoint);
  CHECK(pen.value == doctest::Approx(0.09).epsilon(1e-9));

  // Feasible surrogate means: zero value and zero gradient.
  SurrogateBundle feasible;
  feasible.f_model = make_far_field_model(rng, 0.0, 1.0);
  feasible.g_models.push_back(make_far_field_model(rng, -0.8, 1.0));
  const ValueGrad zero = acq_l2_penalty(feasible, kFarPoint);
  CHECK(zero.value == doctest::Approx(0.0));
  CHECK(zero.grad.lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("probability of feasibility") {
  Rng rng(56);
  SurrogateBundle bundle;
  bundle.f_model = make_far_field_model(rng, 0.0, 1.0);
  bundle.g_models.push_back(make_far_field_model(rng, 0.0, 1.0));
  CHECK(prob_feasibility(bundle, kFarPoint) == doctest::Approx(0.5).epsilon(1e-9));

  SurrogateBundle safe;
  safe.f_model = make_far_field_model(rng, 0.0, 1.0);
  safe.g_models.push_back(make_far_field_model(rng, -3.0, 1.0));
  CHECK(prob_feasibility(safe, kFarPoint) ==
        doctest::Approx(0.9986501019683699).epsilon(1e-9));

  // Product over two constraints equals the product of singletons.
  SurrogateBundle both;
  both.f_model = make_far_field_model(rng, 0.0, 1.0);
  both.g_models.push_back(bundle.g_models[0]);
  both.g_models.push_back(safe.g_models[0]);
  CHECK(prob_feasibility(both, kFarPoint) ==
        doctest::Approx(0.5 * 0.9986501019683699).epsilon(1e-9));

  // Equality constraints are refused.
  SurrogateBundle with_h;
  with_h.f_model = make_far_field_model(rng, 0.0, 1.0);
  with_h.h_models.push_back(make_far_field_model(rng, 0.0, 1.0));
  CHECK_THROWS_AS(prob_feasibility(with_h, kFarPoint), UnsupportedError);
  CHECK_THROWS_AS(acq_cei(with_h, kFarPoint, 0.0), UnsupportedError);
  CHECK_THROWS_AS(acq_cuc(with_h, kFarPoint, 0.0), UnsupportedError);
}

TEST_CASE("feasibility-weighted acquisitions reduce and vanish correctly") {
  Rng rng(57);
  SurrogateBundle certain;
  certain.f_model = make_far_field_model(rng, 0.2, 1.0);
  certain.g_models.push_back(make_far_field_model(rng, -9.0, 1.0));
  // P(feasible) = Phi(9) = 1 to double precision: cEI reduces to EI.
  const double f_best = 0.1;
  CHECK(acq_cei(certain, kFarPoint, f_best).value ==
        doctest::Approx(acq_ei(certain, kFarPoint, f_best).value).epsilon(1e-12));
  CHECK(acq_cuc(certain, kFarPoint, 0.5).value ==
        doctest::Approx(acq_uc(certain, kFarPoint, 0.5).value).epsilon(1e-12));

  SurrogateBundle hopeless;
  hopeless.f_model = make_far_field_model(rng, 0.2, 1.0);
  hopeless.g_models.push_back(make_far_field_model(rng, 6.0, 1.0));
  const double q = acq_ei(hopeless, kFarPoint, f_best).value;
  CHECK(std::abs(acq_cei(hopeless, kFarPoint, f_best).value) <=
        std::abs(q) * 1e-8);
}

TEST_CASE("exploration penalty values") {
  Rng rng(58);
  SurrogateBundle bundle;
  bundle.f_model = make_far_field_model(rng, 0.0, 1.0);
  bundle.h_models.push_back(make_far_field_model(rng, 2.0, 1.0));
  // |mu_h| = 2, sigma_h = 1: penalty (2 - 1)^2 = 1.
  CHECK(acq_exploration(bundle, kFarPoint).value == doctest::Approx(1.0).epsilon(1e-9));

  // Spread covering the residual: no penalty (the sigma = |mu| boundary).
  SurrogateBundle covered;
  covered.f_model = make_far_field_model(rng, 0.0, 1.0);
  covered.h_models.push_back(make_far_field_model(rng, 0.9, 1.0));
  covered.g_models.push_back(make_far_field_model(rng, 0.7, 1.0));
  CHECK(acq_exploration(covered, kFarPoint).value == doctest::Approx(0.0));

  // Strictly inside the penalized region the value is positive.
  SurrogateBundle inside;
  inside.f_model = make_far_field_model(rng, 0.0, 1.0);
  inside.g_models.push_back(make_far_field_model(rng, 1.5, 1.0));
  CHECK(acq_exploration(inside, kFarPoint).value > 0.0);
}

TEST_CASE("acquisition gradients match finite differences") {
  const SurrogateBundle bundle = quad_bundle();
  Rng rng(59);
  const double f_best = 0.5;
  for (int rep = 0; rep < 20; ++rep) {
    const Vector x = test::random_vector(rng, 2, -3.0, 3.0);
    const GpModel::Posterior pf = bundle.f_model.posterior(x);
    if (std::sqrt(std::max(pf.var, 0.0)) < 1e-3) continue;
    test::check_grad(acq_uc(bundle, x, 1.0).grad,
                     test::central_fd([&](const Vector& xx) {
                       return acq_uc(bundle, xx, 1.0).value;
                     }, x),
                     1e-4);
    test::check_grad(acq_ei(bundle, x, f_best).grad,
                     test::central_fd([&](const Vector& xx) {
                       return acq_ei(bundle, xx, f_best).value;
                     }, x),
                     1e-4);
    test::check_grad(acq_cuc(bundle, x, 0.5).grad,
                     test::central_fd([&](const Vector& xx) {
                       return acq_cuc(bundle, xx, 0.5).value;
                     }, x),
                     1e-4);
  }
}

TEST_CASE("exact-Lagrangian acquisition at an interior flat objective") {
  Rng rng(60);
  ConstrainedProblem p;
  p.lb = Vector::Constant(2, -10.0);
  p.ub = Vector::Constant(2, 10.0);
  p.Ag.resize(0, 2);
  p.bg.resize(0);
  p.Ah.resize(0, 2);
  p.bh.resize(0);
  p.objective = [](const Vector&, Vector*) { return 0.0; };

  // Constant surrogate: mu_f = 4.2 everywhere with zero gradient.
  const int n_x = 4;
  Matrix X(n_x, 2);
  for (int i = 0; i < n_x; ++i) {
    for (int j = 0; j < 2; ++j) X(i, j) = rng.uniform(-1.0, 1.0);
  }
  SurrogateBundle bundle;
  bundle.f_model = GpModel::fit(
      TrainingSet::from_values(X, Vector::Constant(n_x, 4.2), Matrix::Zero(n_x, 2)),
      KernelParams{Vector::Constant(2, 1.0)}, 1e10);

  const Vector x = Vector::Zero(2);
  const ValueGrad lag = acq_exact_lagrangian(bundle, p, x, 100.0);
  CHECK(lag.value == doctest::Approx(4.2).epsilon(1e-8));
}

TEST_CASE("exact-Lagrangian acquisition tracks the true merit at training points") {
  const SurrogateBundle bundle = quad_bundle();
  const TestProblem tp = make_quadratic(2);
  const Matrix& X = bundle.f_model.training().X;
  for (int i = 0; i < X.rows(); ++i) {
    const Vector x = X.row(i);
    const double merit = merit_exact_aug_lagrangian(tp.problem, x, 100.0);
    const double acq = acq_exact_lagrangian(bundle, tp.problem, x, 100.0).value;
    CHECK(std::abs(acq - merit) <= 1e-3 * (1.0 + std::abs(merit)));
  }
}

TEST_CASE("exact-Lagrangian value is continuous across the activity filter") {
  const SurrogateBundle bundle = quad_bundle();
  const TestProblem tp = make_quadratic(2);

  // Sweep along a ray and bracket the mu_g = -0.1 crossing.
  const auto mu_g = [&](double t) {
    Vector x(2);
    x << t, 0.4 * t;
    return bundle.g_models[0].posterior(x).mean;
  };
  const auto value_at = [&](double t) {
    Vector x(2);
    x << t, 0.4 * t;
    return acq_exact_lagrangian(bundle, tp.problem, x, 100.0).value;
  };
  double lo = 0.0, hi = 3.0;
  const double target = -0.1;
  if ((mu_g(lo) - target) * (mu_g(hi) - target) < 0.0) {
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      if ((mu_g(lo) - target) * (mu_g(mid) - target) <= 0.0) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    const double jump = std::abs(value_at(lo - 1e-7) - value_at(hi + 1e-7));
    CHECK(jump <= 1e-3);
  } else {
    WARN_MESSAGE(false, "sweep did not bracket the activity threshold");
  }
}

TEST_CASE("exact-Lagrangian gradient matches the frozen-multiplier FD") {
  const SurrogateBundle bundle = quad_bundle();
  const TestProblem tp = make_quadratic(2);
  Rng rng(61);
  for (int rep = 0; rep < 15; ++rep) {
    const Vector x = test::random_vector(rng, 2, -3.0, 3.0);
    const detail::QlagAnchor anchor = detail::qlag_anchor(bundle, tp.problem, x);
    const ValueGrad lag = acq_exact_lagrangian(bundle, tp.problem, x, 100.0);
    test::check_grad(lag.grad,
                     test::central_fd([&](const Vector& xx) {
                       return detail::qlag_value_frozen(bundle, tp.problem, xx,
                                                        100.0, anchor);
                     }, x),
                     1e-4);
  }
}

}  // TEST_SUITE
