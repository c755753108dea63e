#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>

namespace cbo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Invalid arguments: dimension mismatches, nonpositive hyperparameters,
// duplicate training rows.
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Linear-algebra failures that indicate degenerate numeric input
// (failed Cholesky, nonpositive matrix diagonal).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Requested method cannot handle the problem class (e.g. probability of
// feasibility with equality constraints).
struct UnsupportedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inner solver could not produce any candidate.
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed trace/config files.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Scalar function of x that also writes its gradient when a non-null
// gradient pointer is supplied.
using DifferentiableFn = std::function<double(const Vector& x, Vector* grad)>;

}  // namespace cbo
