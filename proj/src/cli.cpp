#include "ctpg/cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <random>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

namespace ctpg::cli {
namespace {

namespace fs = std::filesystem;

RunConfig load_or_default(const std::string& path) {
  return path.empty() ? parse_run_config("") : load_run_config(path);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

struct TrainArgs {
  std::string config;
  std::string output_dir;
  std::int64_t seed = -1;
  std::string case_name;
};

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = load_or_default(args.config);
    if (!args.case_name.empty()) apply_case_preset(cfg, args.case_name);
    if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
    if (!args.output_dir.empty()) cfg.output_dir = args.output_dir;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  }

  try {
    fs::create_directories(cfg.output_dir);
    out << "training case '" << cfg.case_name << "' on " << cfg.grid.size()
        << " scenarios, " << cfg.policy.parameter_count() << " parameters\n";
    TrainResult res;
    try {
      res = train(cfg.grid, cfg.policy, cfg.seed, cfg.train);
    } catch (const TrainingError& e) {
      save_snapshot({cfg.policy, e.params(), cfg.seed, cfg.case_name},
                    cfg.output_dir / "failed_params.snapshot");
      err << "training error: " << e.what() << " (iterate saved to failed_params.snapshot)\n";
      return kRunError;
    }

    {
      std::ofstream csv(cfg.output_dir / "learning_curve.csv");
      res.record.write_csv(csv);
    }
    save_snapshot({cfg.policy, res.best_params, cfg.seed, cfg.case_name},
                  cfg.output_dir / "params.snapshot");

    nlohmann::json summary;
    summary["case"] = cfg.case_name;
    summary["seed"] = cfg.seed;
    summary["scenarios"] = cfg.grid.size();
    summary["parameters"] = cfg.policy.parameter_count();
    summary["initial_cost"] =
        res.record.entries.empty() ? 0.0 : res.record.entries.front().cost;
    summary["final_cost"] = res.best_cost;
    summary["best_iteration"] = res.best_iteration;
    summary["iterations"] = res.record.entries.size();
    summary["converged"] = res.converged;
    summary["stop_reason"] = res.stop_reason;
    summary["wall_time_s"] = cfg.train.record_wall_time ? res.wall_s : 0.0;
    write_text(cfg.output_dir / "summary.json", summary.dump(2) + "\n");

    out << "final cost " << format_double(res.best_cost) << " after "
        << res.record.entries.size() << " iterations (" << res.stop_reason << ")\n";
  } catch (const std::exception& e) {
    err << "training error: " << e.what() << '\n';
    return kRunError;
  }
  return kOk;
}

struct SimulateArgs {
  std::string params;
  std::string config;
  double h0 = 5000.0;
  double V0 = 800.0;
  double cmd = -50.0;
  std::string out_path = "trajectory.csv";
};

int cmd_simulate(const SimulateArgs& args, std::ostream& out, std::ostream& err) {
  PolicySnapshot snap;
  RunConfig cfg;
  try {
    cfg = load_or_default(args.config);
    snap = load_snapshot(args.params);
  } catch (const std::exception& e) {
    err << "input error: " << e.what() << '\n';
    return kConfigError;
  }
  try {
    const airframe::Scenario sc{args.h0, args.V0, args.cmd};
    const airframe::CommandSpec cmd{args.cmd};
    const auto& aero = cfg.train.aero;
    const MlpSpec& spec = snap.spec;
    OdeProblem prob;
    prob.t0 = cfg.train.t0;
    prob.tf = cfg.train.tf;
    prob.x0 = airframe::initial_state(sc).to_vector();
    prob.p = snap.params;
    prob.rhs = airframe::make_problem(aero, spec, sc, {cfg.train.t0, cfg.train.tf, 0.0})
                   .dynamics;
    const OdeSolution sol = solve(prob, cfg.train.solver);
    if (!sol.ok()) {
      err << "simulation failed: " << to_string(sol.status) << " at t = "
          << sol.t_end() << '\n';
      return kRunError;
    }
    std::ofstream csv(args.out_path);
    if (!csv) throw std::runtime_error("cannot write " + args.out_path);
    airframe::write_trajectory_csv(csv, sol, aero, spec, snap.params, cmd);
    const auto final_state = airframe::ClosedLoopState::from_vector(sol.step_states.back());
    const double az =
        airframe::closed_loop_signals(aero, spec, snap.params, cmd, final_state).a_z;
    out << "a_z(tf) = " << format_double(az) << " m/s^2 (command " << format_double(args.cmd)
        << "), " << sol.save_times.size() << " rows written to " << args.out_path << '\n';
  } catch (const std::exception& e) {
    err << "simulation error: " << e.what() << '\n';
    return kRunError;
  }
  return kOk;
}

struct GradcheckArgs {
  std::string config;
  std::int64_t seed = 0;
  bool corrupt = false;
};

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = load_or_default(args.config);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  }
  GradcheckReport rep;
  try {
    rep = run_gradcheck(cfg, static_cast<std::uint64_t>(args.seed), args.corrupt);
  } catch (const std::exception& e) {
    err << "gradcheck error: " << e.what() << '\n';
    return kRunError;
  }
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "scenario h0=%g V0=%g cmd=%g, %td parameters\n"
                "max relative error %.6e at coordinate %td (adjoint %.10e, fd %.10e)\n",
                rep.scenario.h0, rep.scenario.V0, rep.scenario.a_z_cmd, rep.adjoint.size(),
                rep.max_rel_error, rep.worst_index, rep.adjoint[rep.worst_index],
                rep.finite_difference[rep.worst_index]);
  if (rep.max_rel_error < cfg.gradcheck.tolerance) {
    out << buf << "PASS\n";
    return kOk;
  }
  err << buf << "FAIL: tolerance " << cfg.gradcheck.tolerance << '\n';
  return kGradientMismatch;
}

struct ExportArgs {
  std::string params;
  double altitude = 5000.0;
  std::string alpha_grid = "0:0.5235987755982988:31";
  std::string mach_grid = "1.5:4:26";
  std::string out_path = "gains.csv";
};

int cmd_export_gains(const ExportArgs& args, std::ostream& out, std::ostream& err) {
  PolicySnapshot snap;
  std::vector<double> alphas, machs;
  try {
    snap = load_snapshot(args.params);
    alphas = parse_linspace(args.alpha_grid);
    machs = parse_linspace(args.mach_grid);
  } catch (const std::exception& e) {
    err << "input error: " << e.what() << '\n';
    return kConfigError;
  }
  std::ofstream csv(args.out_path);
  if (!csv) {
    err << "cannot write " << args.out_path << '\n';
    return kRunError;
  }
  csv << "alpha,M,K_A,K_I,K_R\n";
  for (double a : alphas) {
    for (double m : machs) {
      const GainVector k = mlp_gains(
          snap.spec, snap.params, normalised_input(snap.spec.normalisers, a, m, args.altitude));
      csv << format_double(a) << ',' << format_double(m) << ',' << format_double(k.K_A)
          << ',' << format_double(k.K_I) << ',' << format_double(k.K_R) << '\n';
    }
  }
  out << alphas.size() * machs.size() << " gain rows written to " << args.out_path << '\n';
  return kOk;
}

}  // namespace

GradcheckReport run_gradcheck(const RunConfig& config, const airframe::Scenario& scenario,
                              std::uint64_t seed, bool corrupt_provider) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  MlpSpec spec = config.policy;
  spec.layer_sizes = config.gradcheck.layer_sizes;
  const Vector p = init_params(spec, seed);

  CtpgProblem prob = airframe::make_problem(
      config.train.aero, spec, scenario,
      {config.train.t0, config.train.tf, config.train.reg_weight});
  if (corrupt_provider) {
    auto fused = prob.derivatives.at_point;
    prob.derivatives.at_point = [fused](double t, const Vector& x, const Vector& pp) {
      PointPartials pt = fused(t, x, pp);
      pt.dfdp *= 1.05;
      return pt;
    };
  }
  SolverConfig solver = config.train.solver;
  solver.abstol = config.gradcheck.abstol;
  solver.reltol = config.gradcheck.reltol;

  GradcheckReport rep;
  rep.scenario = scenario;
  const GradientResult adj = ctpg_cost_and_gradient(prob, p, solver);
  if (!adj.ok())
    throw std::runtime_error("adjoint gradient failed: forward " +
                             to_string(adj.diagnostics.forward_status) + ", backward " +
                             to_string(adj.diagnostics.backward_status));
  rep.adjoint = adj.gradient;
  rep.finite_difference =
      finite_difference_gradient(prob, p, solver, config.gradcheck.eps, config.train.threads);
  rep.max_rel_error = 0.0;
  const double scale = rep.finite_difference.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double denom = std::max(std::abs(rep.finite_difference[i]), 1e-6 * scale);
    const double e = std::abs(rep.adjoint[i] - rep.finite_difference[i]) /
                     (denom > 0.0 ? denom : 1.0);
    if (e > rep.max_rel_error || i == 0) {
      rep.max_rel_error = e;
      rep.worst_index = i;
    }
  }
  rep.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return rep;
}

GradcheckReport run_gradcheck(const RunConfig& config, std::uint64_t seed,
                              bool corrupt_provider) {
  const auto members = config.grid.members();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
  return run_gradcheck(config, members[pick(rng)], seed, corrupt_provider);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Structured controller policy optimisation with adjoint policy gradients"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train the gain-scheduling policy");
  train->add_option("-c,--config", train_args.config, "JSON run configuration");
  train->add_option("-o,--output-dir", train_args.output_dir, "artifact directory");
  train->add_option("-s,--seed", train_args.seed, "initialisation seed");
  train->add_option("--case", train_args.case_name, "case preset: base, unscaled, euler");

  SimulateArgs sim_args;
  auto* sim = app.add_subcommand("simulate", "simulate the closed loop with a trained policy");
  sim->add_option("-p,--params", sim_args.params, "policy snapshot")->required();
  sim->add_option("-c,--config", sim_args.config, "JSON run configuration (solver, aero)");
  sim->add_option("--h0", sim_args.h0, "initial altitude [m]");
  sim->add_option("--V0", sim_args.V0, "initial speed [m/s]");
  sim->add_option("--cmd", sim_args.cmd, "normal acceleration command [m/s^2]");
  sim->add_option("-o,--out", sim_args.out_path, "trajectory CSV");

  GradcheckArgs gc_args;
  auto* gc = app.add_subcommand("gradcheck", "compare adjoint and finite-difference gradients");
  gc->add_option("-c,--config", gc_args.config, "JSON run configuration");
  gc->add_option("-s,--seed", gc_args.seed, "seed for member choice and initialisation");
  gc->add_flag("--corrupt-provider", gc_args.corrupt, "perturb df/dp (negative control)")
      ->group("");

  ExportArgs ex_args;
  auto* ex = app.add_subcommand("export-gains", "evaluate the gain surfaces over (alpha, M)");
  ex->add_option("-p,--params", ex_args.params, "policy snapshot")->required();
  ex->add_option("--altitude", ex_args.altitude, "altitude [m] (default 5000)");
  ex->add_option("--alpha", ex_args.alpha_grid, "alpha grid start:stop:count [rad]");
  ex->add_option("--mach", ex_args.mach_grid, "Mach grid start:stop:count");
  ex->add_option("-o,--out", ex_args.out_path, "gain CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return kConfigError;
  }

  if (*train) return cmd_train(train_args, out, err);
  if (*sim) return cmd_simulate(sim_args, out, err);
  if (*gc) return cmd_gradcheck(gc_args, out, err);
  if (*ex) return cmd_export_gains(ex_args, out, err);
  return kConfigError;
}

}  // namespace ctpg::cli
