#include "ctpg/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "ctpg/parallel.hpp"

namespace ctpg {
namespace {

double step_for(double v, double eps) { return eps * std::max(1.0, std::abs(v)); }

// Central-difference Jacobian of a vector function of v.
template <class Fn>
Matrix central_jacobian(Fn&& fn, const Vector& v, double eps) {
  const Vector f0 = fn(v);
  Matrix J(f0.size(), v.size());
  Vector w = v;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double h = step_for(v[i], eps);
    w[i] = v[i] + h;
    const Vector fp = fn(w);
    w[i] = v[i] - h;
    const Vector fm = fn(w);
    w[i] = v[i];
    J.col(i) = (fp - fm) / (2.0 * h);
  }
  return J;
}

template <class Fn>
RowVector central_gradient(Fn&& fn, const Vector& v, double eps) {
  RowVector g(v.size());
  Vector w = v;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double h = step_for(v[i], eps);
    w[i] = v[i] + h;
    const double fp = fn(w);
    w[i] = v[i] - h;
    const double fm = fn(w);
    w[i] = v[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double regulariser_value(const CtpgProblem& problem, const Vector& p) {
  return problem.regulariser ? problem.regulariser(p) : 0.0;
}

RowVector regulariser_gradient(const CtpgProblem& problem, const Vector& p) {
  if (problem.derivatives.dRdp) return problem.derivatives.dRdp(p);
  return RowVector::Zero(p.size());
}

}  // namespace

PointPartials DerivativeProvider::evaluate(double t, const Vector& x,
                                           const Vector& p) const {
  if (at_point) return at_point(t, x, p);
  return {dfdx(t, x, p), dfdp(t, x, p), dLdx(t, x, p), dLdp(t, x, p)};
}

DerivativeProvider numeric_derivatives(const CtpgProblem& problem, double eps) {
  DerivativeProvider d;
  const RhsFn f = problem.dynamics;
  const ScalarFn L = problem.running_cost;
  const TerminalFn phi = problem.terminal_cost;
  const RegulariserFn R = problem.regulariser;
  d.dfdx = [f, eps](double t, const Vector& x, const Vector& p) {
    return central_jacobian([&](const Vector& v) { return f(t, v, p); }, x, eps);
  };
  d.dfdp = [f, eps](double t, const Vector& x, const Vector& p) {
    return central_jacobian([&](const Vector& v) { return f(t, x, v); }, p, eps);
  };
  d.dLdx = [L, eps](double t, const Vector& x, const Vector& p) {
    if (!L) return RowVector(RowVector::Zero(x.size()));
    return central_gradient([&](const Vector& v) { return L(t, v, p); }, x, eps);
  };
  d.dLdp = [L, eps](double t, const Vector& x, const Vector& p) {
    if (!L) return RowVector(RowVector::Zero(p.size()));
    return central_gradient([&](const Vector& v) { return L(t, x, v); }, p, eps);
  };
  d.dphidx = [phi, eps](const Vector& x) {
    if (!phi) return RowVector(RowVector::Zero(x.size()));
    return central_gradient(phi, x, eps);
  };
  d.dRdp = [R, eps](const Vector& p) {
    if (!R) return RowVector(RowVector::Zero(p.size()));
    return central_gradient(R, p, eps);
  };
  return d;
}

ForwardResult forward_pass(const CtpgProblem& problem, const Vector& p,
                           const SolverConfig& solver) {
  const auto n = static_cast<Eigen::Index>(problem.state_dim());
  OdeProblem aug;
  aug.t0 = problem.t0;
  aug.tf = problem.tf;
  aug.p = p;
  aug.x0 = Vector::Zero(n + 1);
  aug.x0.head(n) = problem.x0;
  aug.rhs = [&problem, n](double t, const Vector& z, const Vector& pp) {
    Vector dz(n + 1);
    const Vector x = z.head(n);
    dz.head(n) = problem.dynamics(t, x, pp);
    dz[n] = problem.running_cost ? problem.running_cost(t, x, pp) : 0.0;
    return dz;
  };

  ForwardResult out;
  out.solution = solve(aug, solver);
  if (!out.solution.ok()) {
    out.cost_without_reg = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  const Vector& z_final = out.solution.step_states.back();
  const double terminal =
      problem.terminal_cost ? problem.terminal_cost(z_final.head(n)) : 0.0;
  out.cost_without_reg = terminal + z_final[n];
  return out;
}

BackwardResult backward_pass(const CtpgProblem& problem, const Vector& p,
                             const OdeSolution& forward, const SolverConfig& solver) {
  if (!forward.ok()) {
    throw std::invalid_argument("backward pass needs a successful forward solution (" +
                                to_string(forward.status) + ")");
  }
  const auto n = static_cast<Eigen::Index>(problem.state_dim());
  const auto m = p.size();
  const double t0 = problem.t0;
  const double tf = problem.tf;
  const DerivativeProvider& d = problem.derivatives;

  const Vector x_final = forward.step_states.back().head(n);
  Vector w_final = Vector::Zero(n + m);
  if (d.dphidx) w_final.head(n) = d.dphidx(x_final).transpose();

  BackwardResult out;
  out.costate_final = w_final.head(n);

  // Reflected time s = tf - t turns the reverse sweep into a forward solve.
  OdeProblem reverse;
  reverse.t0 = 0.0;
  reverse.tf = tf - t0;
  reverse.x0 = w_final;
  reverse.p = p;
  reverse.rhs = [&, n, m](double s, const Vector& w, const Vector& pp) {
    double t = tf - s;
    if (t < t0) t = t0;  // rounding at the final reflected node
    const Vector x = forward.interpolate(t).head(n);
    const PointPartials pt = d.evaluate(t, x, pp);
    const auto lambda = w.head(n);
    Vector dw(n + m);
    dw.head(n) = pt.dfdx.transpose() * lambda + pt.dLdx.transpose();
    dw.tail(m) = pt.dfdp.transpose() * lambda + pt.dLdp.transpose();
    return dw;
  };

  const OdeSolution sweep = solve(reverse, solver);
  out.status = sweep.status;
  out.steps = sweep.accepted_steps;
  if (!sweep.ok()) return out;
  const Vector& w0 = sweep.step_states.back();
  out.costate_initial = w0.head(n);
  out.gradient = w0.tail(m);
  if (!out.gradient.allFinite()) {
    out.status = SolverStatus::NonfiniteState;
    out.gradient.resize(0);
  }
  return out;
}

GradientResult ctpg_cost_and_gradient(const CtpgProblem& problem, const Vector& p,
                                      const SolverConfig& solver,
                                      const std::optional<SolverConfig>& backward_solver) {
  GradientResult out;
  ForwardResult fwd = forward_pass(problem, p, solver);
  out.diagnostics.forward_status = fwd.solution.status;
  out.diagnostics.forward_steps = fwd.solution.accepted_steps;
  if (!fwd.ok() || !std::isfinite(fwd.cost_without_reg)) {
    if (fwd.ok()) out.diagnostics.forward_status = SolverStatus::NonfiniteState;
    out.cost = std::numeric_limits<double>::quiet_NaN();
    out.forward_solution = std::move(fwd.solution);
    return out;
  }
  out.cost = fwd.cost_without_reg + regulariser_value(problem, p);

  const BackwardResult bwd =
      backward_pass(problem, p, fwd.solution, backward_solver.value_or(solver));
  out.diagnostics.backward_status = bwd.status;
  out.diagnostics.backward_steps = bwd.steps;
  out.forward_solution = std::move(fwd.solution);
  if (!bwd.ok()) return out;
  out.gradient = bwd.gradient + regulariser_gradient(problem, p).transpose();
  return out;
}

double evaluate_cost(const CtpgProblem& problem, const Vector& p,
                     const SolverConfig& solver) {
  const ForwardResult fwd = forward_pass(problem, p, solver);
  if (!fwd.ok() || !std::isfinite(fwd.cost_without_reg)) {
    throw std::runtime_error("forward pass failed: " + to_string(fwd.solution.status));
  }
  return fwd.cost_without_reg + regulariser_value(problem, p);
}

Vector finite_difference_gradient(const CtpgProblem& problem, const Vector& p,
                                  const SolverConfig& solver, double eps,
                                  unsigned threads) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite-difference eps must be > 0");
  const auto m = static_cast<std::size_t>(p.size());
  Vector g(p.size());
  parallel_for(m, threads, [&](std::size_t i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double h = step_for(p[k], eps);
    Vector pp = p;
    double j_plus = 0.0;
    double j_minus = 0.0;
    try {
      pp[k] = p[k] + h;
      j_plus = evaluate_cost(problem, pp, solver);
      pp[k] = p[k] - h;
      j_minus = evaluate_cost(problem, pp, solver);
    } catch (const std::runtime_error& e) {
      std::ostringstream msg;
      msg << "finite difference at coordinate " << i << ": " << e.what();
      throw std::runtime_error(msg.str());
    }
    g[k] = (j_plus - j_minus) / (2.0 * h);
  });
  return g;
}

double max_relative_error(const Vector& a, const Vector& b, double floor) {
  if (a.size() != b.size()) throw std::invalid_argument("size mismatch");
  const double scale = b.size() ? b.cwiseAbs().maxCoeff() : 0.0;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double denom = std::max(std::abs(b[i]), floor * scale);
    const double diff = std::abs(a[i] - b[i]);
    const double e = denom > 0.0 ? diff / denom : diff;
    worst = std::max(worst, e);
  }
  return worst;
}

double relative_l2_error(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw std::invalid_argument("size mismatch");
  const double nb = b.norm();
  const double diff = (a - b).norm();
  return nb > 0.0 ? diff / nb : diff;
}

}  // namespace ctpg
