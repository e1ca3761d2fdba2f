#include <doctest.h>

#include <random>
#include <sstream>

#include "ctpg/trainer.hpp"

using namespace ctpg;

namespace {

// f independent of p and no running or terminal cost: J = reg_weight ||p||^2.
CtpgProblem inert_member(Eigen::Index m) {
  CtpgProblem pr;
  pr.dynamics = [](double, const Vector& x, const Vector&) { return Vector(-x); };
  pr.x0 = Vector::Ones(1);
  auto& d = pr.derivatives;
  d.dfdx = [](double, const Vector&, const Vector&) { return Matrix::Constant(1, 1, -1.0).eval(); };
  d.dfdp = [m](double, const Vector&, const Vector&) { return Matrix::Zero(1, m).eval(); };
  d.dLdx = [](double, const Vector&, const Vector&) { return RowVector::Zero(1).eval(); };
  d.dLdp = [m](double, const Vector&, const Vector&) { return RowVector::Zero(m).eval(); };
  return pr;
}

// J = sum_i (p_i - c_i)^2 through the running cost over [0, 1].
CtpgProblem shifted_quadratic(const Vector& c) {
  CtpgProblem pr = inert_member(c.size());
  pr.running_cost = [c](double, const Vector&, const Vector& p) { return (p - c).squaredNorm(); };
  pr.derivatives.dLdp = [c](double, const Vector&, const Vector& p) {
    return RowVector(2.0 * (p - c).transpose());
  };
  return pr;
}

CtpgProblem failing_member(Eigen::Index m) {
  CtpgProblem pr = inert_member(m);
  pr.dynamics = [](double, const Vector& x, const Vector&) {
    return Vector(Vector::Constant(x.size(), std::nan("")));
  };
  return pr;
}

TrainConfig quick() {
  TrainConfig cfg;
  cfg.threads = 1;
  cfg.record_wall_time = false;
  return cfg;
}

EnsembleGrid tiny_grid() {
  EnsembleGrid g;
  g.h0_values = {5000.0};
  g.V0_values = {800.0};
  g.cmd_values = {-50.0, 0.0, 50.0};
  return g;
}

MlpSpec small_spec() {
  MlpSpec s;
  s.layer_sizes = {3, 3, 4, 3};
  return s;
}

}  // namespace

TEST_CASE("first ADAM step moves each coordinate by the learning rate") {
  const Vector p = (Vector(4) << 1.0, -2.0, 0.5, 3.0).finished();
  const Vector g = (Vector(4) << 3.0, -0.01, 1e3, -7.0).finished();
  const AdamStep st = adam_step({}, p, g, {});
  for (int i = 0; i < 4; ++i) CHECK(st.p[i] - p[i] == doctest::Approx(-0.01 * (g[i] > 0 ? 1 : -1)).epsilon(1e-6));
  CHECK(st.state.steps == 1);

  const AdamStep again = adam_step({}, p, g, {});
  CHECK(again.p == st.p);
  CHECK(again.state.m == st.state.m);
  CHECK(again.state.v == st.state.v);
}

TEST_CASE("ADAM leaves p alone under a zero gradient") {
  const Vector p = (Vector(3) << 1.0, 2.0, 3.0).finished();
  AdamState s;
  Vector q = p;
  for (int k = 0; k < 20; ++k) {
    AdamStep st = adam_step(s, q, Vector::Zero(3), {});
    q = st.p;
    s = st.state;
  }
  CHECK(q == p);
}

TEST_CASE("BFGS solves a quadratic in at most dim + 5 iterations") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> N(0.0, 1.0);
  const int dim = 8;
  Vector target(dim);
  for (auto& v : target) v = N(rng);
  const Vector scale = Vector::LinSpaced(dim, 1.0, 10.0);
  const CostGradientFn eval = [&](const Vector& p) {
    const Vector r = p - target;
    return CostGradient{0.5 * r.dot(scale.cwiseProduct(r)), scale.cwiseProduct(r)};
  };
  Vector p = Vector::Zero(dim);
  CostGradient at = eval(p);
  BfgsState state;
  int iters = 0;
  while (iters < dim + 5 && at.gradient.lpNorm<Eigen::Infinity>() > 1e-12) {
    const BfgsStep st = bfgs_step(state, p, at.cost, at.gradient, eval, {});
    REQUIRE_FALSE(st.stalled);
    if (iters == 0) CHECK((st.p - p).norm() == doctest::Approx(1e-4).epsilon(1e-12));
    p = st.p;
    at = st.at_p;
    state = st.state;
    ++iters;
  }
  CHECK((p - target).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(iters <= dim + 5);
}

TEST_CASE("BFGS stalls on a zero gradient or an impossible line search") {
  const Vector p = Vector::Ones(3);
  int calls = 0;
  const CostGradientFn flat = [&](const Vector&) {
    ++calls;
    return CostGradient{1.0, Vector::Zero(3)};
  };
  BfgsStep st = bfgs_step({}, p, 1.0, Vector::Zero(3), flat, {});
  CHECK(st.stalled);
  CHECK(st.p == p);
  CHECK(calls == 0);

  const CostGradientFn uphill = [](const Vector& q) { return CostGradient{1.0 + q.squaredNorm(), Vector::Ones(3)}; };
  st = bfgs_step({}, p, 0.0, Vector::Ones(3), uphill, {});
  CHECK(st.stalled);
  CHECK(st.p == p);
  CHECK(st.evaluations == 31);
}

TEST_CASE("ensemble averaging and the regulariser") {
  const Vector c1 = (Vector(2) << 1.0, -1.0).finished();
  const Vector c2 = (Vector(2) << 3.0, 0.0).finished();
  const Vector p = (Vector(2) << 0.5, 0.25).finished();
  TrainConfig cfg = quick();
  SolverConfig tight;
  tight.abstol = tight.reltol = 1e-10;
  cfg.solver = tight;

  const Ensemble one{{shifted_quadratic(c1)}, 0.1};
  const GradientResult single = ctpg_cost_and_gradient(shifted_quadratic(c1), p, tight);
  const EnsembleResult e1 = ensemble_cost_gradient(one, p, cfg);
  CHECK(e1.cost == doctest::Approx(single.cost + 0.1 * p.squaredNorm()).epsilon(1e-12));
  CHECK((e1.gradient - (single.gradient + 0.2 * p)).norm() < 1e-12);

  const Ensemble same{{shifted_quadratic(c1), shifted_quadratic(c1), shifted_quadratic(c1)}, 0.1};
  const EnsembleResult e3 = ensemble_cost_gradient(same, p, cfg);
  CHECK(e3.cost == doctest::Approx(e1.cost).epsilon(1e-14));
  CHECK((e3.gradient - e1.gradient).norm() < 1e-14);

  const Ensemble two{{shifted_quadratic(c1), shifted_quadratic(c2)}, 0.0};
  const EnsembleResult e2 = ensemble_cost_gradient(two, p, cfg);
  const double expect = 0.5 * ((p - c1).squaredNorm() + (p - c2).squaredNorm());
  CHECK(e2.cost == doctest::Approx(expect).epsilon(1e-8));

  // regulariser is not multiplied by the member count
  const Ensemble inert{std::vector<CtpgProblem>(5, inert_member(2)), 0.3};
  CHECK(ensemble_cost_gradient(inert, p, cfg).cost == doctest::Approx(0.3 * p.squaredNorm()));
}

TEST_CASE("failed members get the penalty and no gradient") {
  const Vector c = (Vector(2) << 1.0, -1.0).finished();
  const Vector p = Vector::Zero(2);
  TrainConfig cfg = quick();
  const Ensemble mixed{{shifted_quadratic(c), failing_member(2)}, 0.0};
  const EnsembleResult e = ensemble_cost_gradient(mixed, p, cfg);
  CHECK(e.failed_members == 1);
  CHECK(e.members[1].failed);
  CHECK(e.members[1].status == SolverStatus::NonfiniteState);
  CHECK(e.members[1].cost == 1e6);
  CHECK(e.cost == doctest::Approx(0.5 * (1e6 + 2.0)).epsilon(1e-9));
  CHECK((e.gradient - 0.5 * (2.0 * (p - c))).norm() < 1e-6);

  const Ensemble dead{{failing_member(2), failing_member(2)}, 0.0};
  try {
    optimise(dead, c, cfg);
    FAIL("expected TrainingError");
  } catch (const TrainingError& err) {
    CHECK(err.params() == c);
    CHECK(err.iteration() == 0);
  }
}

TEST_CASE("toy training converges to the minimiser") {
  TrainConfig cfg = quick();
  cfg.adam.max_iters = 50;
  cfg.bfgs.max_iters = 200;
  const Ensemble toy{{inert_member(4), inert_member(4)}, 1.0};
  const Vector p0 = (Vector(4) << 0.8, -0.3, 0.1, -1.2).finished();
  const TrainResult r = optimise(toy, p0, cfg);
  CHECK(r.converged);
  CHECK(r.best_params.cwiseAbs().maxCoeff() < 1e-6);
  CHECK(r.initial_params == p0);

  const auto& e = r.record.entries;
  REQUIRE_FALSE(e.empty());
  CHECK(e.size() <= cfg.adam.max_iters + cfg.bfgs.max_iters);
  CHECK(e.front().phase == "adam");
  CHECK(e.back().phase == "bfgs");
  for (std::size_t i = 0; i < e.size(); ++i) {
    CHECK(e[i].iteration == i);
    CHECK(r.best_cost <= e[i].cost);
    CHECK(e[i].wall_s == 0.0);
  }
  CHECK(e[r.best_iteration].cost == r.best_cost);

  const TrainResult again = optimise(toy, p0, cfg);
  CHECK(again.best_params == r.best_params);
  REQUIRE(again.record.entries.size() == e.size());
  for (std::size_t i = 0; i < e.size(); ++i) CHECK(again.record.entries[i].cost == e[i].cost);
}

TEST_CASE("ADAM stagnation still hands over to BFGS") {
  TrainConfig cfg = quick();
  cfg.adam.max_iters = 100;
  cfg.bfgs.max_iters = 5;
  cfg.convergence.rel_cost_tol = 1.0;  // every ADAM step counts as flat
  cfg.convergence.patience = 3;
  const Ensemble toy{{inert_member(2)}, 1.0};
  const TrainResult r = optimise(toy, Vector::Ones(2), cfg);
  std::size_t adam = 0, bfgs = 0;
  for (const auto& e : r.record.entries) (e.phase == "adam" ? adam : bfgs)++;
  CHECK(adam == 4);
  CHECK(bfgs > 0);
}

TEST_CASE("iteration limits bound the record") {
  TrainConfig cfg = quick();
  cfg.adam.max_iters = 7;
  cfg.bfgs.max_iters = 0;
  const Ensemble toy{{inert_member(2)}, 1.0};
  const TrainResult r = optimise(toy, Vector::Ones(2), cfg);
  CHECK(r.record.entries.size() == 7);
  CHECK_FALSE(r.converged);
  CHECK(r.stop_reason == "iteration limit");
}

TEST_CASE("learning record CSV") {
  LearningRecord rec;
  rec.entries.push_back({0, "adam", 12.5, 0.25, 0.0});
  rec.entries.push_back({1, "bfgs", 0.1, 1e-7, 1.5});
  std::ostringstream out;
  rec.write_csv(out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "iter,phase,cost,grad_inf_norm,wall_s");
  std::getline(in, line);
  CHECK(line.rfind("0,adam,", 0) == 0);
  std::getline(in, line);
  CHECK(line.rfind("1,bfgs,", 0) == 0);
  CHECK_FALSE(std::getline(in, line));
}

TEST_CASE("grid members") {
  const EnsembleGrid g;
  CHECK(g.size() == 108);
  const auto m = g.members();
  REQUIRE(m.size() == 108);
  CHECK(m.front().h0 == 5000.0);
  CHECK(m.front().V0 == 700.0);
  CHECK(m.front().a_z_cmd == -100.0);
  CHECK(m[1].a_z_cmd == -75.0);
  CHECK(m[9].V0 == 800.0);
  CHECK(m[27].h0 == 6000.0);
  CHECK(m.back().h0 == 8000.0);
  CHECK(make_ensemble(g, small_spec(), quick()).members.size() == 108);

  EnsembleGrid empty;
  empty.V0_values.clear();
  CHECK_THROWS_AS(empty.validate(), std::invalid_argument);
}

TEST_CASE("airframe ensemble matches its single member") {
  const MlpSpec spec = small_spec();
  const Vector p = init_params(spec, 2);
  TrainConfig cfg = quick();
  EnsembleGrid g = tiny_grid();
  g.cmd_values = {-50.0};
  const EnsembleResult e = ensemble_cost_gradient(g, spec, p, cfg);
  const CtpgProblem pr = airframe::make_problem(cfg.aero, spec, {5000.0, 800.0, -50.0});
  const GradientResult r = ctpg_cost_and_gradient(pr, p, cfg.solver);
  CHECK(e.cost == r.cost + cfg.reg_weight * p.squaredNorm());
  CHECK(e.gradient == r.gradient + 2.0 * cfg.reg_weight * p);

  g.cmd_values = {-50.0, -50.0};
  const EnsembleResult twice = ensemble_cost_gradient(g, spec, p, cfg);
  CHECK(twice.cost == doctest::Approx(e.cost).epsilon(1e-14));
}

TEST_CASE("ensemble reduction does not depend on the thread count") {
  const MlpSpec spec = small_spec();
  const Vector p = init_params(spec, 4);
  TrainConfig a = quick();
  TrainConfig b = quick();
  b.threads = 3;
  const EnsembleResult ra = ensemble_cost_gradient(tiny_grid(), spec, p, a);
  const EnsembleResult rb = ensemble_cost_gradient(tiny_grid(), spec, p, b);
  CHECK(ra.cost == rb.cost);
  CHECK(ra.gradient == rb.gradient);
}

TEST_CASE("short airframe training is deterministic and improves the cost") {
  const MlpSpec spec = small_spec();
  TrainConfig cfg = quick();
  cfg.adam.max_iters = 5;
  cfg.bfgs.max_iters = 3;
  const TrainResult a = train(tiny_grid(), spec, 1, cfg);
  const TrainResult b = train(tiny_grid(), spec, 1, cfg);
  CHECK(a.best_params == b.best_params);
  std::ostringstream ca, cb;
  a.record.write_csv(ca);
  b.record.write_csv(cb);
  CHECK(ca.str() == cb.str());
  CHECK(a.best_cost < a.record.entries.front().cost);
  CHECK(a.initial_params == init_params(spec, 1));
}
