#include "ctpg/ode.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace ctpg {
namespace {

// Tsitouras 5(4) tableau.
constexpr double c2 = 0.161;
constexpr double c3 = 0.327;
constexpr double c4 = 0.9;
constexpr double c5 = 0.9800255409045097;

constexpr double a21 = 0.161;
constexpr double a31 = -0.008480655492356989;
constexpr double a32 = 0.335480655492357;
constexpr double a41 = 2.897153057105493;
constexpr double a42 = -6.359448489975075;
constexpr double a43 = 4.3622954328695815;
constexpr double a51 = 5.325864828439257;
constexpr double a52 = -11.748883564062828;
constexpr double a53 = 7.4955393428898365;
constexpr double a54 = -0.09249506636175525;
constexpr double a61 = 5.86145544294642;
constexpr double a62 = -12.92096931784711;
constexpr double a63 = 8.159367898576159;
constexpr double a64 = -0.071584973281401;
constexpr double a65 = -0.028269050394068383;
constexpr double a71 = 0.09646076681806523;
constexpr double a72 = 0.01;
constexpr double a73 = 0.4798896504144996;
constexpr double a74 = 1.379008574103742;
constexpr double a75 = -3.290069515436081;
constexpr double a76 = 2.324710524099774;

// Difference between the 5th- and embedded 4th-order weights.
constexpr std::array<double, 7> btilde = {
    -0.00178001105222577714, -0.0008164344596567469, 0.007880878010261995,
    -0.1447110071732629,     0.5823571654525552,     -0.45808210592918697,
    0.015151515151515152};

// Continuous extension: b_i(theta) = sum_k coeff[i][k] * theta^(k+1).
constexpr std::array<std::array<double, 4>, 7> dense_coeffs = {{
    {1.0, -2.763706197274826, 2.9132554618219126, -1.0530884977290216},
    {0.0, 0.13169999999999998, -0.2234, 0.1017},
    {0.0, 3.9302962368947516, -5.941033872131505, 2.490627285651253},
    {0.0, -12.411077166933676, 30.33818863028232, -16.548102889244902},
    {0.0, 37.50931341651104, -88.1789048947664, 47.37952196281928},
    {0.0, -27.896526289197286, 65.09189467479366, -34.87065786149661},
    {0.0, 1.5, -4.0, 2.5},
}};

// Step controller.
constexpr double kSafety = 0.9;
constexpr double kFacMin = 0.2;
constexpr double kFacMax = 10.0;
constexpr double kBeta1 = 0.7 / 5.0;
constexpr double kBeta2 = 0.4 / 5.0;
constexpr std::size_t kMaxNonfiniteRetries = 30;

bool all_finite(const Vector& v) { return v.allFinite(); }

double scaled_rms(const Vector& delta, const Vector& x_old, const Vector& x_new,
                  double abstol, double reltol) {
  const auto n = delta.size();
  if (n == 0) return 0.0;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double sc =
        abstol + reltol * std::max(std::abs(x_old[i]), std::abs(x_new[i]));
    const double r = delta[i] / sc;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(n));
}

Vector call_rhs(const OdeProblem& problem, double t, const Vector& x,
                std::size_t& counter) {
  ++counter;
  Vector dx = problem.rhs(t, x, problem.p);
  if (dx.size() != x.size()) {
    std::ostringstream msg;
    msg << "rhs returned dimension " << dx.size() << ", expected " << x.size();
    throw std::invalid_argument(msg.str());
  }
  return dx;
}

double initial_step(const OdeProblem& problem, const SolverConfig& config,
                    const Vector& f0, std::size_t& counter) {
  const double span = problem.tf - problem.t0;
  const Vector& x0 = problem.x0;
  const auto n = static_cast<double>(std::max<Eigen::Index>(x0.size(), 1));
  Vector sc = (config.abstol + config.reltol * x0.array().abs()).matrix();
  const double d0 = std::sqrt((x0.array() / sc.array()).square().sum() / n);
  const double d1 = std::sqrt((f0.array() / sc.array()).square().sum() / n);
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, span);

  const Vector x1 = x0 + h0 * f0;
  const Vector f1 = call_rhs(problem, problem.t0 + h0, x1, counter);
  if (!all_finite(f1)) return h0 * 1e-3;
  const double d2 =
      std::sqrt(((f1 - f0).array() / sc.array()).square().sum() / n) / h0;
  const double dmax = std::max(d1, d2);
  const double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                                  : std::pow(0.01 / dmax, 1.0 / 5.0);
  return std::min({100.0 * h0, h1, span});
}

void check_problem(const OdeProblem& problem) {
  if (!problem.rhs) throw std::invalid_argument("OdeProblem has no rhs");
  if (!(problem.t0 < problem.tf)) {
    std::ostringstream msg;
    msg << "OdeProblem requires t0 < tf, got [" << problem.t0 << ", "
        << problem.tf << "]";
    throw std::invalid_argument(msg.str());
  }
}

void emit_save_grid(OdeSolution& sol, double save_step) {
  const double t0 = sol.step_times.front();
  const double t1 = sol.step_times.back();
  const double guard = 1e-10 * std::max(1.0, std::abs(t1));
  for (std::size_t k = 0;; ++k) {
    const double t = t0 + static_cast<double>(k) * save_step;
    if (t >= t1 - guard) break;
    sol.save_times.push_back(t);
    sol.save_states.push_back(sol.dense_value(t));
  }
  sol.save_times.push_back(t1);
  sol.save_states.push_back(sol.step_states.back());
}

}  // namespace

void SolverConfig::validate() const {
  if (!(abstol > 0.0)) throw std::invalid_argument("abstol must be > 0");
  if (!(reltol > 0.0)) throw std::invalid_argument("reltol must be > 0");
  if (!(save_step > 0.0)) throw std::invalid_argument("save_step must be > 0");
  if (max_steps < 1) throw std::invalid_argument("max_steps must be >= 1");
  if (dt_init && !(*dt_init > 0.0))
    throw std::invalid_argument("dt_init must be > 0");
  if (method == OdeMethod::Euler && !(fixed_dt > 0.0))
    throw std::invalid_argument("fixed_dt must be > 0");
}

std::string to_string(SolverStatus status) {
  switch (status) {
    case SolverStatus::Success: return "success";
    case SolverStatus::MaxStepsExceeded: return "max-steps-exceeded";
    case SolverStatus::NonfiniteState: return "nonfinite-state";
  }
  return "unknown";
}

std::string to_string(OdeMethod method) {
  return method == OdeMethod::Tsit5 ? "tsit5" : "euler";
}

Vector OdeSolution::evaluate_interval(std::size_t i, double t) const {
  const double ta = step_times[i];
  const double h = step_times[i + 1] - ta;
  const Vector& xa = step_states[i];
  if (method == OdeMethod::Euler) {
    const double w = (t - ta) / h;
    return xa + w * (step_states[i + 1] - xa);
  }
  const double theta = (t - ta) / h;
  Vector out = xa;
  const auto& ks = stage_derivatives[i];
  for (std::size_t j = 0; j < 7; ++j) {
    const auto& c = dense_coeffs[j];
    const double b =
        theta * (c[0] + theta * (c[1] + theta * (c[2] + theta * c[3])));
    if (b != 0.0) out.noalias() += (h * b) * ks[j];
  }
  return out;
}

Vector OdeSolution::interpolate(double t) const {
  if (status != SolverStatus::Success) {
    throw std::logic_error("interpolate on unsuccessful solution (" +
                           to_string(status) + ")");
  }
  return dense_value(t);
}

Vector OdeSolution::dense_value(double t) const {
  const double ta = t_begin();
  const double tb = t_end();
  if (!(t >= ta && t <= tb)) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "interpolation time " << t << " outside solution span [" << ta
        << ", " << tb << "]";
    throw std::domain_error(msg.str());
  }
  auto it = std::upper_bound(step_times.begin(), step_times.end(), t);
  // it != begin because t >= t_begin.
  const auto idx = static_cast<std::size_t>(it - step_times.begin()) - 1;
  if (step_times[idx] == t) return step_states[idx];
  return evaluate_interval(idx, t);
}

OdeSolution solve_adaptive(const OdeProblem& problem, const SolverConfig& config) {
  check_problem(problem);
  config.validate();

  OdeSolution sol;
  sol.method = OdeMethod::Tsit5;
  const double tf = problem.tf;
  double t = problem.t0;
  Vector x = problem.x0;
  sol.step_times.push_back(t);
  sol.step_states.push_back(x);

  Vector k1 = call_rhs(problem, t, x, sol.rhs_evaluations);
  if (!all_finite(x) || !all_finite(k1)) {
    sol.status = SolverStatus::NonfiniteState;
    emit_save_grid(sol, config.save_step);
    return sol;
  }

  double h = config.dt_init ? std::min(*config.dt_init, tf - t)
                            : initial_step(problem, config, k1, sol.rhs_evaluations);
  double err_old = 1e-4;
  bool last_rejected = false;
  std::size_t nonfinite_retries = 0;
  std::size_t attempts = 0;

  while (t < tf) {
    if (attempts >= config.max_steps) {
      sol.status = SolverStatus::MaxStepsExceeded;
      break;
    }
    ++attempts;

    bool last = false;
    if (t + h >= tf || (tf - (t + h)) <= 1e-12 * std::max(1.0, std::abs(tf))) {
      h = tf - t;
      last = true;
    }

    const Vector k2 = call_rhs(problem, t + c2 * h, x + h * (a21 * k1), sol.rhs_evaluations);
    const Vector k3 = call_rhs(problem, t + c3 * h, x + h * (a31 * k1 + a32 * k2),
                               sol.rhs_evaluations);
    const Vector k4 = call_rhs(problem, t + c4 * h,
                               x + h * (a41 * k1 + a42 * k2 + a43 * k3),
                               sol.rhs_evaluations);
    const Vector k5 = call_rhs(problem, t + c5 * h,
                               x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4),
                               sol.rhs_evaluations);
    const Vector k6 = call_rhs(
        problem, t + h,
        x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5),
        sol.rhs_evaluations);
    Vector x_new =
        x + h * (a71 * k1 + a72 * k2 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    const double t_new = last ? tf : t + h;
    Vector k7 = call_rhs(problem, t_new, x_new, sol.rhs_evaluations);

    const Vector delta =
        h * (btilde[0] * k1 + btilde[1] * k2 + btilde[2] * k3 + btilde[3] * k4 +
             btilde[4] * k5 + btilde[5] * k6 + btilde[6] * k7);
    const double err =
        scaled_rms(delta, x, x_new, config.abstol, config.reltol);

    if (!std::isfinite(err) || !all_finite(x_new) || !all_finite(k7)) {
      ++sol.rejected_steps;
      if (++nonfinite_retries > kMaxNonfiniteRetries ||
          h <= 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t))) {
        sol.status = SolverStatus::NonfiniteState;
        break;
      }
      h *= kFacMin;
      last_rejected = true;
      continue;
    }
    nonfinite_retries = 0;

    if (err <= 1.0) {
      sol.stage_derivatives.push_back({k1, k2, k3, k4, k5, k6, k7});
      t = t_new;
      x = std::move(x_new);
      k1 = std::move(k7);
      sol.step_times.push_back(t);
      sol.step_states.push_back(x);
      ++sol.accepted_steps;

      double fac = err == 0.0
                       ? kFacMax
                       : kSafety * std::pow(err, -kBeta1) * std::pow(err_old, kBeta2);
      fac = std::clamp(fac, kFacMin, kFacMax);
      if (last_rejected) fac = std::min(fac, 1.0);
      err_old = std::max(err, 1e-4);
      h *= fac;
      last_rejected = false;
    } else {
      ++sol.rejected_steps;
      h *= std::max(kFacMin, kSafety * std::pow(err, -1.0 / 5.0));
      last_rejected = true;
    }
  }

  emit_save_grid(sol, config.save_step);
  return sol;
}

OdeSolution solve_fixed_euler(const OdeProblem& problem, double dt,
                              const SolverConfig& config) {
  check_problem(problem);
  if (!(dt > 0.0)) throw std::invalid_argument("Euler step must be > 0");
  const double span = problem.tf - problem.t0;
  const auto n = static_cast<std::size_t>(std::ceil(span / dt - 1e-9));
  if (n > config.max_steps) {
    std::ostringstream msg;
    msg << "Euler needs " << n << " steps, max_steps is " << config.max_steps;
    throw std::invalid_argument(msg.str());
  }

  OdeSolution sol;
  sol.method = OdeMethod::Euler;
  Vector x = problem.x0;
  sol.step_times.reserve(n + 1);
  sol.step_states.reserve(n + 1);
  sol.step_times.push_back(problem.t0);
  sol.step_states.push_back(x);
  if (!all_finite(x)) sol.status = SolverStatus::NonfiniteState;

  for (std::size_t k = 0; k < n && sol.ok(); ++k) {
    const double t = sol.step_times.back();
    const double t_next =
        (k + 1 == n) ? problem.tf : problem.t0 + static_cast<double>(k + 1) * dt;
    const Vector dx = call_rhs(problem, t, x, sol.rhs_evaluations);
    Vector x_next = x + (t_next - t) * dx;
    if (!all_finite(x_next)) {
      sol.status = SolverStatus::NonfiniteState;
      break;
    }
    x = std::move(x_next);
    sol.step_times.push_back(t_next);
    sol.step_states.push_back(x);
    ++sol.accepted_steps;
  }

  emit_save_grid(sol, config.save_step);
  return sol;
}

OdeSolution solve(const OdeProblem& problem, const SolverConfig& config) {
  if (config.method == OdeMethod::Euler) {
    config.validate();
    return solve_fixed_euler(problem, config.fixed_dt, config);
  }
  return solve_adaptive(problem, config);
}

}  // namespace ctpg
