#include "ctpg/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include "ctpg/parallel.hpp"

namespace ctpg {
namespace {

double inf_norm(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

std::vector<airframe::Scenario> EnsembleGrid::members() const {
  std::vector<airframe::Scenario> out;
  out.reserve(size());
  for (double h0 : h0_values)
    for (double V0 : V0_values)
      for (double cmd : cmd_values) out.push_back({h0, V0, cmd});
  return out;
}

void EnsembleGrid::validate() const {
  if (h0_values.empty() || V0_values.empty() || cmd_values.empty())
    throw std::invalid_argument("ensemble grid axes must be nonempty");
}

AdamStep adam_step(const AdamState& state, const Vector& p, const Vector& grad,
                   const AdamHyper& hyper) {
  if (grad.size() != p.size()) throw std::invalid_argument("gradient size mismatch");
  AdamStep out;
  out.state.steps = state.steps + 1;
  const Vector m_prev = state.m.size() ? state.m : Vector::Zero(p.size());
  const Vector v_prev = state.v.size() ? state.v : Vector::Zero(p.size());
  out.state.m = hyper.beta1 * m_prev + (1.0 - hyper.beta1) * grad;
  out.state.v = hyper.beta2 * v_prev + (1.0 - hyper.beta2) * grad.cwiseAbs2();
  const auto t = static_cast<double>(out.state.steps);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  const Vector m_hat = out.state.m / c1;
  const Vector v_hat = out.state.v / c2;
  out.p = p - (hyper.learning_rate *
               (m_hat.array() / (v_hat.array().sqrt() + hyper.epsilon)))
                  .matrix();
  return out;
}

BfgsStep bfgs_step(const BfgsState& state, const Vector& p, double cost,
                   const Vector& grad, const CostGradientFn& evaluate,
                   const BfgsHyper& hyper) {
  BfgsStep out;
  out.p = p;
  out.at_p = {cost, grad};
  out.state = state;
  const auto n = p.size();
  if (!grad.allFinite() || grad.squaredNorm() == 0.0 || !std::isfinite(cost)) {
    out.stalled = true;
    return out;
  }
  Matrix H = state.inverse_hessian.size() ? state.inverse_hessian : Matrix::Identity(n, n);
  Vector dir = -H * grad;
  double slope = grad.dot(dir);
  if (!(slope < 0.0)) {
    H.setIdentity(n, n);
    dir = -grad;
    slope = grad.dot(dir);
  }

  double step = state.first_step ? hyper.initial_step_norm / dir.norm() : 1.0;
  bool accepted = false;
  CostGradient trial;
  Vector p_trial;
  for (std::size_t k = 0; k <= hyper.max_backtracks; ++k) {
    p_trial = p + step * dir;
    trial = evaluate(p_trial);
    ++out.evaluations;
    if (std::isfinite(trial.cost) && trial.gradient.allFinite() &&
        trial.cost <= cost + hyper.armijo_c * step * slope) {
      accepted = true;
      break;
    }
    step *= hyper.shrink;
  }
  if (!accepted) {
    out.stalled = true;
    return out;
  }

  // One secant step on the directional derivative; exact for quadratics.
  const double end_slope = trial.gradient.dot(dir);
  if (hyper.secant_refine && !state.first_step &&
      std::abs(end_slope) > 0.1 * std::abs(slope) && slope != end_slope) {
    const double alt = step * slope / (slope - end_slope);
    if (std::isfinite(alt) && alt > 0.0 && alt != step) {
      const Vector p_alt = p + alt * dir;
      CostGradient at_alt = evaluate(p_alt);
      ++out.evaluations;
      if (std::isfinite(at_alt.cost) && at_alt.gradient.allFinite() &&
          at_alt.cost < trial.cost) {
        p_trial = p_alt;
        trial = std::move(at_alt);
      }
    }
  }

  const Vector s = p_trial - p;
  const Vector y = trial.gradient - grad;
  const double sy = s.dot(y);
  if (sy > 1e-10 * s.norm() * y.norm()) {
    if (state.first_step) H *= sy / y.squaredNorm();
    const double rho = 1.0 / sy;
    const Vector Hy = H * y;
    // (I - rho s y^T) H (I - rho y s^T) + rho s s^T, expanded.
    H += (rho * rho * y.dot(Hy) + rho) * (s * s.transpose()) -
         rho * (Hy * s.transpose() + s * Hy.transpose());
  }
  out.state.inverse_hessian = std::move(H);
  out.state.first_step = false;
  out.p = std::move(p_trial);
  out.at_p = std::move(trial);
  return out;
}

Ensemble make_ensemble(const EnsembleGrid& grid, const MlpSpec& spec,
                       const TrainConfig& config) {
  grid.validate();
  Ensemble ens;
  ens.reg_weight = config.reg_weight;
  airframe::ProblemOptions opts;
  opts.t0 = config.t0;
  opts.tf = config.tf;
  opts.reg_weight = 0.0;
  for (const auto& sc : grid.members())
    ens.members.push_back(airframe::make_problem(config.aero, spec, sc, opts));
  return ens;
}

EnsembleResult ensemble_cost_gradient(const Ensemble& ensemble, const Vector& p,
                                      const TrainConfig& config) {
  const std::size_t k = ensemble.members.size();
  if (k == 0) throw std::invalid_argument("ensemble has no members");
  std::vector<GradientResult> results(k);
  parallel_for(k, config.threads, [&](std::size_t i) {
    results[i] = ctpg_cost_and_gradient(ensemble.members[i], p, config.solver);
    results[i].forward_solution = OdeSolution{};  // not needed past this point
  });

  EnsembleResult out;
  out.members.resize(k);
  double cost_sum = 0.0;
  Vector grad_sum = Vector::Zero(p.size());
  for (std::size_t i = 0; i < k; ++i) {
    const GradientResult& r = results[i];
    MemberResult& m = out.members[i];
    const bool ok = r.ok() && std::isfinite(r.cost) && r.gradient.size() == p.size() &&
                    r.gradient.allFinite();
    if (ok) {
      m.cost = r.cost;
      cost_sum += r.cost;
      grad_sum += r.gradient;
    } else {
      m.failed = true;
      m.status = r.diagnostics.forward_status != SolverStatus::Success
                     ? r.diagnostics.forward_status
                     : (r.diagnostics.backward_status != SolverStatus::Success
                            ? r.diagnostics.backward_status
                            : SolverStatus::NonfiniteState);
      m.cost = config.failure_penalty;
      cost_sum += config.failure_penalty;
      ++out.failed_members;
    }
  }
  const auto kd = static_cast<double>(k);
  out.cost = cost_sum / kd + ensemble.reg_weight * p.squaredNorm();
  out.gradient = grad_sum / kd + (2.0 * ensemble.reg_weight) * p;
  return out;
}

EnsembleResult ensemble_cost_gradient(const EnsembleGrid& grid, const MlpSpec& spec,
                                      const Vector& p, const TrainConfig& config) {
  return ensemble_cost_gradient(make_ensemble(grid, spec, config), p, config);
}

void LearningRecord::write_csv(std::ostream& out) const {
  out << "iter,phase,cost,grad_inf_norm,wall_s\n";
  char buf[160];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%.17g,%.17g,%.6f\n", e.iteration,
                  e.phase.c_str(), e.cost, e.grad_inf_norm, e.wall_s);
    out << buf;
  }
}

TrainResult optimise(const Ensemble& ensemble, const Vector& p0, const TrainConfig& config) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(Clock::now() - start).count();
  };

  TrainResult res;
  res.initial_params = p0;
  res.best_params = p0;
  res.best_cost = std::numeric_limits<double>::infinity();
  std::size_t iteration = 0;

  auto evaluate = [&](const Vector& p) {
    EnsembleResult er = ensemble_cost_gradient(ensemble, p, config);
    if (er.failed_members == ensemble.members.size()) {
      throw TrainingError("every ensemble member failed at iteration " +
                              std::to_string(iteration),
                          p, iteration);
    }
    return er;
  };

  // Returns true when the convergence test fires.
  double prev_cost = std::numeric_limits<double>::quiet_NaN();
  std::size_t flat_count = 0;
  auto log_and_check = [&](const char* phase, const Vector& p, double cost,
                           const Vector& grad) {
    LearningEntry e;
    e.iteration = iteration;
    e.phase = phase;
    e.cost = cost;
    e.grad_inf_norm = inf_norm(grad);
    e.wall_s = config.record_wall_time ? elapsed() : 0.0;
    res.record.entries.push_back(e);
    if (cost < res.best_cost) {
      res.best_cost = cost;
      res.best_params = p;
      res.best_iteration = iteration;
    }
    ++iteration;
    if (e.grad_inf_norm < config.convergence.grad_inf_tol) {
      res.stop_reason = "gradient tolerance";
      return true;
    }
    if (std::isfinite(prev_cost) &&
        std::abs(cost - prev_cost) <=
            config.convergence.rel_cost_tol * std::max(std::abs(prev_cost), 1e-300)) {
      ++flat_count;
    } else {
      flat_count = 0;
    }
    prev_cost = cost;
    if (flat_count >= config.convergence.patience) {
      res.stop_reason = "cost stagnation";
      return true;
    }
    return false;
  };

  // Phase 1: ADAM.
  Vector p = p0;
  AdamState adam;
  res.stop_reason = "iteration limit";
  for (std::size_t k = 0; k < config.adam.max_iters; ++k) {
    const EnsembleResult er = evaluate(p);
    if (log_and_check("adam", p, er.cost, er.gradient)) {
      res.converged = true;
      break;
    }
    AdamStep st = adam_step(adam, p, er.gradient, config.adam);
    p = std::move(st.p);
    adam = std::move(st.state);
  }

  // Phase 2: BFGS from the best iterate so far.
  if (config.bfgs.max_iters > 0) {
    prev_cost = std::numeric_limits<double>::quiet_NaN();
    flat_count = 0;
    res.converged = false;
    res.stop_reason = "iteration limit";
    p = res.best_params;
    const CostGradientFn eval = [&](const Vector& q) {
      EnsembleResult er = ensemble_cost_gradient(ensemble, q, config);
      return CostGradient{er.cost, std::move(er.gradient)};
    };
    EnsembleResult er = evaluate(p);
    CostGradient current{er.cost, std::move(er.gradient)};
    BfgsState bfgs;
    for (std::size_t k = 0; k < config.bfgs.max_iters; ++k) {
      if (log_and_check("bfgs", p, current.cost, current.gradient)) {
        res.converged = true;
        break;
      }
      if (k + 1 == config.bfgs.max_iters) break;
      BfgsStep st = bfgs_step(bfgs, p, current.cost, current.gradient, eval, config.bfgs);
      if (st.stalled) {
        res.stop_reason = "line search stalled";
        break;
      }
      p = std::move(st.p);
      current = std::move(st.at_p);
      bfgs = std::move(st.state);
    }
  }
  res.wall_s = elapsed();
  return res;
}

TrainResult train(const EnsembleGrid& grid, const MlpSpec& spec, std::uint64_t seed,
                  const TrainConfig& config) {
  spec.validate();
  config.solver.validate();
  const Ensemble ens = make_ensemble(grid, spec, config);
  return optimise(ens, init_params(spec, seed), config);
}

}  // namespace ctpg
