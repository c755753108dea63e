#include "cbo/kernels.hpp"

#include <cmath>

namespace cbo {

void KernelParams::validate(int n_d) const {
  if (gamma.size() != n_d) {
    throw InputError("kernel hyperparameter length " +
                     std::to_string(gamma.size()) + " does not match dimension " +
                     std::to_string(n_d));
  }
  for (int i = 0; i < gamma.size(); ++i) {
    if (!(gamma[i] > 0.0)) {
      throw InputError("kernel hyperparameter gamma[" + std::to_string(i) +
                       "] must be strictly positive");
    }
  }
}

namespace {

void check_inputs(const Vector& x, const Vector& y, const KernelParams& params) {
  if (x.size() != y.size()) {
    throw InputError("kernel arguments have mismatched dimensions");
  }
  params.validate(static_cast<int>(x.size()));
}

}  // namespace

double kernel_value(const Vector& x, const Vector& y,
                    const KernelParams& params) {
  check_inputs(x, y, params);
  const Vector r = params.gamma.cwiseProduct(x - y);
  return std::exp(-0.5 * r.squaredNorm());
}

KernelDerivatives kernel_derivatives(const Vector& x, const Vector& y,
                                     const KernelParams& params) {
  check_inputs(x, y, params);
  const Vector d = x - y;
  const Vector g2 = params.gamma.cwiseProduct(params.gamma);
  const double k = std::exp(-0.5 * params.gamma.cwiseProduct(d).squaredNorm());

  KernelDerivatives out;
  out.value = k;
  const Vector g2d = g2.cwiseProduct(d);  // gamma_i^2 (x_i - y_i)
  out.d_dx = -k * g2d;
  out.d_dy = k * g2d;
  out.d2_dxdy = -(g2d * g2d.transpose()) * k;
  out.d2_dxdy.diagonal() += k * g2;
  return out;
}

}  // namespace cbo
