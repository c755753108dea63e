#include "cbo/trust.hpp"

#include <algorithm>

namespace cbo {

double tr_circle(const Vector& x, const Vector& x_best, Vector* grad) {
  if (x.size() != x_best.size()) {
    throw InputError("trust-region points have mismatched dimensions");
  }
  if (grad) *grad = 2.0 * (x - x_best);
  return (x - x_best).squaredNorm();
}

double tr_sigma(const GpModel& f_model, const Vector& x, Vector* grad) {
  return f_model.normalized_variance(x, grad);
}

TrustState update_bounds(TrustState state, bool made_progress,
                         bool any_tr_active) {
  if (made_progress && any_tr_active) {
    state.ub_circle *= TrustState::kGrowCircle;
    state.ub_sigma = std::min(1.0, state.ub_sigma * TrustState::kGrowSigma);
    state.no_progress_count = 0;
  } else if (!made_progress) {
    state.no_progress_count += 1;
    if (state.no_progress_count >= 2) {
      state.ub_circle /= TrustState::kGrowCircle;
      state.ub_sigma =
          std::max(TrustState::kSigmaFloor, state.ub_sigma / TrustState::kGrowSigma);
      state.no_progress_count = 0;
    }
  } else {
    // Progress without an active trust region: bounds stay, streak resets.
    state.no_progress_count = 0;
  }
  return state;
}

}  // namespace cbo
