#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "ctpg/ode.hpp"

using namespace ctpg;

namespace {

OdeProblem decay(double tf = 1.0) {
  OdeProblem pr;
  pr.rhs = [](double, const Vector& x, const Vector&) { return Vector(-x); };
  pr.t0 = 0.0;
  pr.tf = tf;
  pr.x0 = Vector::Ones(1);
  return pr;
}

OdeProblem oscillator() {
  OdeProblem pr;
  pr.rhs = [](double, const Vector& x, const Vector&) {
    return Vector((Vector(2) << x[1], -x[0]).finished());
  };
  pr.tf = 2.0 * M_PI;
  pr.x0 = (Vector(2) << 1.0, 0.0).finished();
  return pr;
}

double final_error(const OdeSolution& s) {
  return std::abs(s.step_states.back()[0] - std::exp(-s.t_end()));
}

}  // namespace

TEST_CASE("zero derivative keeps the state exactly") {
  OdeProblem pr;
  pr.rhs = [](double, const Vector& x, const Vector&) { return Vector(Vector::Zero(x.size())); };
  pr.t0 = -1.0;
  pr.tf = 2.5;
  pr.x0 = (Vector(3) << 1.5, -2.0, 1e-3).finished();

  const OdeSolution a = solve_adaptive(pr, {});
  REQUIRE(a.ok());
  for (const auto& x : a.save_states) CHECK(x == pr.x0);
  CHECK(a.save_times.front() == pr.t0);
  CHECK(a.save_times.back() == pr.tf);

  const OdeSolution e = solve_fixed_euler(pr, 1e-2);
  REQUIRE(e.ok());
  for (const auto& x : e.save_states) CHECK(x == pr.x0);
}

TEST_CASE("adaptive Tsit5 on exponential decay") {
  const OdeSolution s = solve_adaptive(decay(), {});
  REQUIRE(s.ok());
  CHECK(s.step_times.front() == 0.0);
  CHECK(s.step_times.back() == 1.0);
  CHECK(std::abs(s.step_states.back()[0] - 0.36787944117144233) < 1e-5);
  for (std::size_t i = 1; i < s.step_times.size(); ++i)
    CHECK(s.step_times[i] > s.step_times[i - 1]);
}

TEST_CASE("adaptive Tsit5 returns to the start after one oscillator period") {
  const OdeSolution s = solve_adaptive(oscillator(), {});
  REQUIRE(s.ok());
  const Vector& x = s.step_states.back();
  CHECK(std::abs(x[0] - 1.0) < 1e-4);
  CHECK(std::abs(x[1]) < 1e-4);
}

TEST_CASE("save grid spacing follows save_step") {
  SolverConfig cfg;
  cfg.save_step = 0.25;
  const OdeSolution s = solve_adaptive(decay(1.0), cfg);
  REQUIRE(s.save_times.size() == 5);
  for (std::size_t k = 0; k < 5; ++k) CHECK(s.save_times[k] == doctest::Approx(0.25 * k));
  for (std::size_t k = 0; k < 5; ++k)
    CHECK(std::abs(s.save_states[k][0] - std::exp(-s.save_times[k])) < 1e-5);
}

TEST_CASE("forward Euler accuracy and first-order convergence") {
  const OdeSolution s1 = solve_fixed_euler(decay(), 1e-3);
  REQUIRE(s1.ok());
  CHECK(s1.step_times.back() == 1.0);
  const double e1 = final_error(s1);
  CHECK(e1 < 1e-3);

  const double e2 = final_error(solve_fixed_euler(decay(), 5e-4));
  const double ratio = e1 / e2;
  CHECK(ratio >= 1.8);
  CHECK(ratio <= 2.2);
}

TEST_CASE("Euler rejects step counts beyond max_steps") {
  SolverConfig cfg;
  cfg.max_steps = 10;
  CHECK_THROWS_AS(solve_fixed_euler(decay(), 1e-3, cfg), std::invalid_argument);
  CHECK_THROWS_AS(solve_fixed_euler(decay(), 0.0), std::invalid_argument);
}

TEST_CASE("interpolation reproduces mesh nodes bitwise") {
  for (const OdeSolution& s : {solve_adaptive(oscillator(), {}),
                               solve_fixed_euler(oscillator(), 1e-2)}) {
    REQUIRE(s.ok());
    for (std::size_t i = 0; i < s.step_times.size(); ++i)
      CHECK(interpolate(s, s.step_times[i]) == s.step_states[i]);
  }
}

TEST_CASE("dense output accuracy and span checks") {
  const OdeSolution s = solve_adaptive(decay(), {});
  CHECK(std::abs(interpolate(s, 0.5)[0] - std::exp(-0.5)) < 1e-5);
  CHECK_THROWS_AS(interpolate(s, 1.1), std::domain_error);
  CHECK_THROWS_AS(interpolate(s, -1e-9), std::domain_error);
  try {
    interpolate(s, 1.1);
  } catch (const std::domain_error& e) {
    CHECK(std::string(e.what()).find("[0, 1]") != std::string::npos);
  }
}

TEST_CASE("dense output error stays within 10x the final-point error") {
  const OdeSolution s = solve_adaptive(decay(), {});
  const double end_err = final_error(s);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double t = U(rng);
    worst = std::max(worst, std::abs(interpolate(s, t)[0] - std::exp(-t)));
  }
  CHECK(worst < 10.0 * end_err);
}

TEST_CASE("tightening reltol never increases the final error") {
  double prev = std::numeric_limits<double>::infinity();
  for (int e = 3; e <= 9; ++e) {
    SolverConfig cfg;
    cfg.reltol = std::pow(10.0, -e);
    cfg.abstol = 1e-14;
    const double err = final_error(solve_adaptive(decay(), cfg));
    CHECK(err <= prev);
    prev = err;
  }
}

TEST_CASE("identical inputs give bitwise identical solutions") {
  const OdeSolution a = solve_adaptive(oscillator(), {});
  const OdeSolution b = solve_adaptive(oscillator(), {});
  REQUIRE(a.step_times == b.step_times);
  for (std::size_t i = 0; i < a.step_states.size(); ++i)
    CHECK(a.step_states[i] == b.step_states[i]);
  for (std::size_t i = 0; i < a.save_states.size(); ++i)
    CHECK(a.save_states[i] == b.save_states[i]);
}

TEST_CASE("step budget exhaustion returns a partial solution") {
  SolverConfig cfg;
  cfg.max_steps = 3;
  cfg.dt_init = 1e-3;
  const OdeSolution s = solve_adaptive(decay(), cfg);
  CHECK(s.status == SolverStatus::MaxStepsExceeded);
  CHECK(s.t_end() < 1.0);
  CHECK(s.save_times.back() == s.t_end());
  CHECK_THROWS_AS(interpolate(s, 0.0), std::logic_error);
}

TEST_CASE("nonfinite derivatives are reported, not thrown") {
  OdeProblem pr = decay();
  pr.rhs = [](double t, const Vector& x, const Vector&) {
    return t > 0.5 ? Vector(Vector::Constant(x.size(), std::nan(""))) : Vector(-x);
  };
  const OdeSolution s = solve_adaptive(pr, {});
  CHECK(s.status == SolverStatus::NonfiniteState);
  CHECK(s.t_end() <= 0.5);
  for (const auto& x : s.step_states) CHECK(x.allFinite());

  const OdeSolution e = solve_fixed_euler(pr, 1e-2);
  CHECK(e.status == SolverStatus::NonfiniteState);

  OdeProblem blow = decay();
  blow.rhs = [](double, const Vector& x, const Vector&) { return Vector(x.array().square()); };
  blow.tf = 5.0;  // finite-time blow-up at t = 1
  const OdeSolution b = solve_adaptive(blow, {});
  CHECK_FALSE(b.ok());
}

TEST_CASE("solver configuration is validated") {
  SolverConfig cfg;
  cfg.abstol = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.save_step = -1.0;
  CHECK_THROWS_AS(solve_adaptive(decay(), cfg), std::invalid_argument);
  OdeProblem bad = decay();
  bad.tf = bad.t0;
  CHECK_THROWS_AS(solve_adaptive(bad, {}), std::invalid_argument);
}
