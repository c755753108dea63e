#pragma once

#include "cbo/types.hpp"

namespace cbo {

// Length-scale-inverse hyperparameters of the Gaussian kernel, one strictly
// positive entry per coordinate.  The dimensionless separation between two
// points x, y is r_i = gamma_i * (x_i - y_i).
struct KernelParams {
  Vector gamma;

  int dim() const { return static_cast<int>(gamma.size()); }
  void validate(int n_d) const;
};

// k(x, y) = exp(-||r||^2 / 2).  Symmetric, k(x, x) = 1.
double kernel_value(const Vector& x, const Vector& y,
                    const KernelParams& params);

// Kernel value together with the first derivatives in each argument and the
// mixed second derivative block needed by gradient-enhanced covariances.
//
//   d_dx[i]      = dk/dx_i      = -gamma_i^2 (x_i - y_i) k
//   d_dy[j]      = dk/dy_j      = +gamma_j^2 (x_j - y_j) k  (= -d_dx[j])
//   d2_dxdy(i,j) = d2k/dx_i dy_j
//                = k (gamma_i^2 delta_ij - gamma_i^2 gamma_j^2 d_i d_j)
struct KernelDerivatives {
  double value;
  Vector d_dx;
  Vector d_dy;
  Matrix d2_dxdy;
};

KernelDerivatives kernel_derivatives(const Vector& x, const Vector& y,
                                     const KernelParams& params);

}  // namespace cbo
