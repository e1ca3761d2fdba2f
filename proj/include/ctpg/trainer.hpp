#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctpg/airframe.hpp"
#include "ctpg/policy.hpp"
#include "ctpg/sensitivity.hpp"

namespace ctpg {

/// Cartesian grid of initial altitude, initial speed and command.
struct EnsembleGrid {
  std::vector<double> h0_values = {5000.0, 6000.0, 7000.0, 8000.0};
  std::vector<double> V0_values = {700.0, 800.0, 900.0};
  std::vector<double> cmd_values = {-100.0, -75.0, -50.0, -25.0, 0.0,
                                    25.0,   50.0,  75.0,  100.0};

  std::size_t size() const {
    return h0_values.size() * V0_values.size() * cmd_values.size();
  }
  /// Members in h0-major, then V0, then command order.
  std::vector<airframe::Scenario> members() const;
  void validate() const;
};

struct AdamHyper {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t max_iters = 1000;
};

struct AdamState {
  Vector m;
  Vector v;
  std::size_t steps = 0;
};

struct AdamStep {
  Vector p;
  AdamState state;
};

/// Bias-corrected ADAM update.
AdamStep adam_step(const AdamState& state, const Vector& p, const Vector& grad,
                   const AdamHyper& hyper);

struct BfgsHyper {
  double initial_step_norm = 1e-4;
  std::size_t max_iters = 1000;
  double armijo_c = 1e-4;
  double shrink = 0.5;
  std::size_t max_backtracks = 30;
  /// Try one secant step along the search direction after the Armijo step.
  bool secant_refine = true;
};

/// Inverse-Hessian approximation; empty until the first step.
struct BfgsState {
  Matrix inverse_hessian;
  bool first_step = true;
};

struct CostGradient {
  double cost = 0.0;
  Vector gradient;
};

using CostGradientFn = std::function<CostGradient(const Vector& p)>;

struct BfgsStep {
  Vector p;
  CostGradient at_p;  // cost and gradient at the returned p
  BfgsState state;
  bool stalled = false;
  std::size_t evaluations = 0;
};

/// One BFGS iteration with Armijo backtracking. The first iteration scales
/// the step to `initial_step_norm`. A zero gradient or a failed line search
/// returns p unchanged with `stalled` set.
BfgsStep bfgs_step(const BfgsState& state, const Vector& p, double cost,
                   const Vector& grad, const CostGradientFn& evaluate,
                   const BfgsHyper& hyper);

struct ConvergenceConfig {
  double grad_inf_tol = 1e-6;
  double rel_cost_tol = 1e-9;
  std::size_t patience = 10;
};

struct TrainConfig {
  AdamHyper adam;
  BfgsHyper bfgs;
  double reg_weight = 1e-4;
  SolverConfig solver;
  double t0 = 0.0;
  double tf = 3.0;
  ConvergenceConfig convergence;
  /// Cost assigned to a member whose solve fails; its gradient is dropped.
  double failure_penalty = 1e6;
  /// Worker threads for member evaluation (0 = hardware concurrency).
  unsigned threads = 0;
  /// When false the learning record carries zero wall times, which makes
  /// the learning-curve CSV reproducible byte for byte.
  bool record_wall_time = true;
  airframe::AeroParams aero;
};

/// Members share one regulariser that is applied once to the mean.
struct Ensemble {
  std::vector<CtpgProblem> members;
  double reg_weight = 0.0;
};

Ensemble make_ensemble(const EnsembleGrid& grid, const MlpSpec& spec,
                       const TrainConfig& config);

struct MemberResult {
  double cost = 0.0;
  bool failed = false;
  SolverStatus status = SolverStatus::Success;
};

struct EnsembleResult {
  double cost = 0.0;
  Vector gradient;
  std::vector<MemberResult> members;
  std::size_t failed_members = 0;
};

EnsembleResult ensemble_cost_gradient(const Ensemble& ensemble, const Vector& p,
                                      const TrainConfig& config);

EnsembleResult ensemble_cost_gradient(const EnsembleGrid& grid, const MlpSpec& spec,
                                      const Vector& p, const TrainConfig& config);

struct LearningEntry {
  std::size_t iteration = 0;
  std::string phase;
  double cost = 0.0;
  double grad_inf_norm = 0.0;
  double wall_s = 0.0;
};

struct LearningRecord {
  std::vector<LearningEntry> entries;

  void write_csv(std::ostream& out) const;
};

struct TrainResult {
  Vector best_params;
  double best_cost = 0.0;
  std::size_t best_iteration = 0;
  Vector initial_params;
  LearningRecord record;
  bool converged = false;
  std::string stop_reason;
  double wall_s = 0.0;
};

/// Raised when every ensemble member fails; carries the offending iterate.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, Vector params, std::size_t iteration)
      : std::runtime_error(what), params_(std::move(params)), iteration_(iteration) {}
  const Vector& params() const { return params_; }
  std::size_t iteration() const { return iteration_; }

 private:
  Vector params_;
  std::size_t iteration_;
};

/// ADAM phase followed by BFGS from the best ADAM iterate. Returns the best
/// iterate seen over both phases.
TrainResult optimise(const Ensemble& ensemble, const Vector& p0, const TrainConfig& config);

TrainResult train(const EnsembleGrid& grid, const MlpSpec& spec, std::uint64_t seed,
                  const TrainConfig& config);

}  // namespace ctpg
