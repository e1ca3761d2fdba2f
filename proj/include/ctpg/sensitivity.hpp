#pragma once

#include <functional>
#include <optional>

#include "ctpg/ode.hpp"

namespace ctpg {

using ScalarFn = std::function<double(double t, const Vector& x, const Vector& p)>;
using TerminalFn = std::function<double(const Vector& x)>;
using RegulariserFn = std::function<double(const Vector& p)>;

/// Partials of f and L at one point, as consumed by the backward pass.
struct PointPartials {
  Matrix dfdx;     // [n x n]
  Matrix dfdp;     // [n x m]
  RowVector dLdx;  // [n]
  RowVector dLdp;  // [m]
};

/// Partial derivatives of the cost ingredients.
///
/// `at_point` is an optional fused evaluator; when present the backward
/// pass uses it instead of the four separate callbacks.
struct DerivativeProvider {
  std::function<Matrix(double, const Vector&, const Vector&)> dfdx;
  std::function<Matrix(double, const Vector&, const Vector&)> dfdp;
  std::function<RowVector(double, const Vector&, const Vector&)> dLdx;
  std::function<RowVector(double, const Vector&, const Vector&)> dLdp;
  std::function<RowVector(const Vector&)> dphidx;
  std::function<RowVector(const Vector&)> dRdp;
  std::function<PointPartials(double, const Vector&, const Vector&)> at_point;

  PointPartials evaluate(double t, const Vector& x, const Vector& p) const;
};

/// Bolza cost J(p) = phi(x(tf)) + integral of L over [t0, tf] + R(p) subject
/// to x' = f(t, x, p), x(t0) = x0.
struct CtpgProblem {
  RhsFn dynamics;
  ScalarFn running_cost;
  TerminalFn terminal_cost;
  RegulariserFn regulariser;
  DerivativeProvider derivatives;
  double t0 = 0.0;
  double tf = 1.0;
  Vector x0;

  std::size_t state_dim() const { return static_cast<std::size_t>(x0.size()); }
};

/// Central-difference provider built from the problem's own functions.
/// Step per coordinate is eps * max(1, |v_i|).
DerivativeProvider numeric_derivatives(const CtpgProblem& problem, double eps = 1e-6);

struct ForwardResult {
  /// Solution of the augmented state z = [x; integral of L].
  OdeSolution solution;
  /// phi(x(tf)) + integral of L; NaN when the solve failed.
  double cost_without_reg = 0.0;

  bool ok() const { return solution.ok(); }
};

ForwardResult forward_pass(const CtpgProblem& problem, const Vector& p,
                           const SolverConfig& solver);

struct BackwardResult {
  SolverStatus status = SolverStatus::Success;
  /// integral of (dL/dp + lambda^T df/dp) over [t0, tf].
  Vector gradient;
  Vector costate_final;    // lambda(tf)
  Vector costate_initial;  // lambda(t0)
  std::size_t steps = 0;

  bool ok() const { return status == SolverStatus::Success; }
};

/// Interpolating adjoint: integrates the costate and gradient quadrature
/// from tf back to t0, reading x(t) from the dense forward solution.
/// Throws std::invalid_argument when `forward` is not a successful solve.
BackwardResult backward_pass(const CtpgProblem& problem, const Vector& p,
                             const OdeSolution& forward, const SolverConfig& solver);

struct GradientDiagnostics {
  SolverStatus forward_status = SolverStatus::Success;
  SolverStatus backward_status = SolverStatus::Success;
  std::size_t forward_steps = 0;
  std::size_t backward_steps = 0;
};

struct GradientResult {
  double cost = 0.0;
  /// Empty when either pass failed.
  Vector gradient;
  OdeSolution forward_solution;
  GradientDiagnostics diagnostics;

  bool ok() const {
    return diagnostics.forward_status == SolverStatus::Success &&
           diagnostics.backward_status == SolverStatus::Success;
  }
};

/// Cost and gradient via forward pass + interpolating adjoint. The reverse
/// pass uses `backward_solver` when given, otherwise `solver`.
GradientResult ctpg_cost_and_gradient(
    const CtpgProblem& problem, const Vector& p, const SolverConfig& solver,
    const std::optional<SolverConfig>& backward_solver = std::nullopt);

/// J(p) from an independent forward pass plus R(p). Throws std::runtime_error
/// when the forward solve fails.
double evaluate_cost(const CtpgProblem& problem, const Vector& p,
                     const SolverConfig& solver);

/// Central differences of J with eps_i = eps * max(1, |p_i|). Coordinates
/// are evaluated on `threads` workers (0 = hardware concurrency).
Vector finite_difference_gradient(const CtpgProblem& problem, const Vector& p,
                                  const SolverConfig& solver, double eps = 1e-5,
                                  unsigned threads = 1);

/// Largest |a_i - b_i| / max(|b_i|, floor * ||b||_inf).
double max_relative_error(const Vector& a, const Vector& b, double floor = 1e-6);

/// ||a - b||_2 / ||b||_2 (absolute error when b = 0).
double relative_l2_error(const Vector& a, const Vector& b);

}  // namespace ctpg
