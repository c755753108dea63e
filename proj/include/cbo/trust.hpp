#pragma once

#include "cbo/gp.hpp"
#include "cbo/types.hpp"

namespace cbo {

// Upper bounds for the two trust regions plus the progress bookkeeping that
// drives their updates.  Owned by the outer optimization loop.
struct TrustState {
  double ub_circle = 1.0;   // bound on ||x - x_best||^2
  double ub_sigma = 0.5;    // bound on sigma_f^2(x) / sigK2, in (0, 1]
  int no_progress_count = 0;
  bool last_circle_active = false;
  bool last_sigma_active = false;

  static constexpr double kSigmaFloor = 1e-8;
  static constexpr double kGrowCircle = 2.0;
  static constexpr double kGrowSigma = 1.5;
  static constexpr double kInitRadiusScale = 0.05;

  static TrustState initial(const Vector& lb, const Vector& ub) {
    TrustState s;
    const double r = kInitRadiusScale * (ub - lb).norm();
    s.ub_circle = r * r;
    s.ub_sigma = 0.5;
    return s;
  }
};

// ||x - x_best||^2 and its gradient.
double tr_circle(const Vector& x, const Vector& x_best, Vector* grad = nullptr);

// Normalized posterior variance of the objective surrogate, in [0, 1].
double tr_sigma(const GpModel& f_model, const Vector& x, Vector* grad = nullptr);

// Grows both bounds when progress was made with an active trust region,
// shrinks them after two consecutive no-progress evaluations, and leaves them
// unchanged otherwise.
TrustState update_bounds(TrustState state, bool made_progress,
                         bool any_tr_active);

}  // namespace cbo
