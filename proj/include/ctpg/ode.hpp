#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ctpg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

/// Right-hand side f(t, x, p) of an explicit ODE.
using RhsFn = std::function<Vector(double t, const Vector& x, const Vector& p)>;

/// Initial value problem x' = f(t, x, p), x(t0) = x0 on [t0, tf].
///
/// Backward-in-time problems are expressed by the caller through time
/// reflection; the solvers only integrate forward.
struct OdeProblem {
  RhsFn rhs;
  double t0 = 0.0;
  double tf = 1.0;
  Vector x0;
  Vector p;
};

enum class OdeMethod { Tsit5, Euler };

struct SolverConfig {
  double abstol = 1e-6;
  double reltol = 1e-3;
  double save_step = 1e-2;
  std::size_t max_steps = 100000;
  std::optional<double> dt_init;

  OdeMethod method = OdeMethod::Tsit5;
  /// Step size used when method == Euler.
  double fixed_dt = 1e-3;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

enum class SolverStatus { Success, MaxStepsExceeded, NonfiniteState };

std::string to_string(SolverStatus status);
std::string to_string(OdeMethod method);

/// Integration result with a dense interpolant over every accepted step.
///
/// For Tsit5 the interpolant is the free 4th-order continuous extension
/// built from the seven stage derivatives of each step. Euler solutions
/// are piecewise linear between mesh nodes.
class OdeSolution {
 public:
  OdeMethod method = OdeMethod::Tsit5;
  SolverStatus status = SolverStatus::Success;

  std::vector<double> step_times;
  std::vector<Vector> step_states;
  /// stage_derivatives[i] holds the Tsit5 stages of the step starting at
  /// step_times[i] (empty for Euler).
  std::vector<std::vector<Vector>> stage_derivatives;

  std::vector<double> save_times;
  std::vector<Vector> save_states;

  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;
  std::size_t rhs_evaluations = 0;

  bool ok() const { return status == SolverStatus::Success; }
  double t_begin() const { return step_times.front(); }
  double t_end() const { return step_times.back(); }
  std::size_t dimension() const { return step_states.front().size(); }

  /// Dense evaluation at t. Mesh nodes return the stored state exactly.
  /// Throws std::domain_error outside [t_begin, t_end] and
  /// std::logic_error when the solution did not succeed.
  Vector interpolate(double t) const;

  /// Dense evaluation without the status check; valid on the integrated
  /// part of a partial solution.
  Vector dense_value(double t) const;

 private:
  Vector evaluate_interval(std::size_t interval, double t) const;
};

OdeSolution solve_adaptive(const OdeProblem& problem, const SolverConfig& config);

OdeSolution solve_fixed_euler(const OdeProblem& problem, double dt,
                              const SolverConfig& config = {});

/// Dispatches on config.method.
OdeSolution solve(const OdeProblem& problem, const SolverConfig& config);

inline Vector interpolate(const OdeSolution& solution, double t) {
  return solution.interpolate(t);
}

}  // namespace ctpg
