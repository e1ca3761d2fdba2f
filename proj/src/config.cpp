#include "ctpg/config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

namespace ctpg {
namespace {

using nlohmann::json;

void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
}

void reject_unknown(const json& j, const std::string& where,
                    std::initializer_list<const char*> allowed) {
  require_object(j, where);
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& target, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    target = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
  }
}

std::vector<double> split_numbers(const std::string& spec, std::size_t expected) {
  std::vector<double> parts;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ':')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("malformed range '" + spec + "'");
    }
  }
  if (parts.size() != expected) throw ConfigError("malformed range '" + spec + "'");
  return parts;
}

std::vector<double> read_axis(const json& j, const char* key, const std::string& where) {
  const json& v = j.at(key);
  if (v.is_string()) return parse_range(v.get<std::string>());
  std::vector<double> out;
  read(j, key, out, where);
  return out;
}

Vector read_vector(const json& j, const char* key, const std::string& where) {
  std::vector<double> v;
  read(j, key, v, where);
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void parse_policy(const json& j, RunConfig& c) {
  const std::string w = "policy";
  reject_unknown(j, w, {"layer_sizes", "scaling", "K_lb", "K_ub", "alpha_max",
                        "mach_max", "altitude_max"});
  read(j, "layer_sizes", c.policy.layer_sizes, w);
  if (j.contains("scaling")) {
    bool on = true;
    read(j, "scaling", on, w);
    if (on && !c.policy.scaling) c.policy.scaling = MlpSpec::table_bounds();
    if (!on) c.policy.scaling.reset();
  }
  if (j.contains("K_lb") || j.contains("K_ub")) {
    if (!c.policy.scaling) throw ConfigError("K_lb/K_ub given with scaling disabled");
    if (j.contains("K_lb")) c.policy.scaling->lower = read_vector(j, "K_lb", w);
    if (j.contains("K_ub")) c.policy.scaling->upper = read_vector(j, "K_ub", w);
  }
  read(j, "alpha_max", c.policy.normalisers.alpha_max, w);
  read(j, "mach_max", c.policy.normalisers.mach_max, w);
  read(j, "altitude_max", c.policy.normalisers.altitude_max, w);
}

void parse_solver(const json& j, SolverConfig& s) {
  const std::string w = "solver";
  reject_unknown(j, w, {"abstol", "reltol", "save_step", "max_steps", "dt_init",
                        "method", "fixed_dt"});
  read(j, "abstol", s.abstol, w);
  read(j, "reltol", s.reltol, w);
  read(j, "save_step", s.save_step, w);
  read(j, "max_steps", s.max_steps, w);
  if (j.contains("dt_init")) {
    double dt = 0.0;
    read(j, "dt_init", dt, w);
    s.dt_init = dt;
  }
  if (j.contains("method")) {
    std::string m;
    read(j, "method", m, w);
    if (m == "tsit5") s.method = OdeMethod::Tsit5;
    else if (m == "euler") s.method = OdeMethod::Euler;
    else throw ConfigError("solver.method must be 'tsit5' or 'euler'");
  }
  read(j, "fixed_dt", s.fixed_dt, w);
}

void parse_aero(const json& j, airframe::AeroParams& a) {
  const std::string w = "aero";
  reject_unknown(j, w, {"a_a", "a_n", "b_n", "c_n", "d_n", "a_m", "b_m", "c_m", "d_m",
                        "m", "I_yy", "S_ref", "d_ref", "omega_a", "zeta_a", "rho0", "H",
                        "gamma_a", "R_a", "T0", "lapse", "g"});
  read(j, "a_a", a.a_a, w);
  read(j, "a_n", a.a_n, w);
  read(j, "b_n", a.b_n, w);
  read(j, "c_n", a.c_n, w);
  read(j, "d_n", a.d_n, w);
  read(j, "a_m", a.a_m, w);
  read(j, "b_m", a.b_m, w);
  read(j, "c_m", a.c_m, w);
  read(j, "d_m", a.d_m, w);
  read(j, "m", a.mass, w);
  read(j, "I_yy", a.I_yy, w);
  read(j, "S_ref", a.S_ref, w);
  read(j, "d_ref", a.d_ref, w);
  read(j, "omega_a", a.omega_a, w);
  read(j, "zeta_a", a.zeta_a, w);
  read(j, "rho0", a.rho0, w);
  read(j, "H", a.H, w);
  read(j, "gamma_a", a.gamma_a, w);
  read(j, "R_a", a.R_a, w);
  read(j, "T0", a.T0, w);
  read(j, "lapse", a.lapse, w);
  read(j, "g", a.g, w);
}

void parse_train(const json& j, TrainConfig& t) {
  const std::string w = "train";
  reject_unknown(j, w, {"adam", "bfgs", "reg_weight", "t0", "tf", "convergence",
                        "failure_penalty", "threads", "record_wall_time"});
  if (j.contains("adam")) {
    const json& a = j["adam"];
    reject_unknown(a, "train.adam",
                   {"learning_rate", "beta1", "beta2", "epsilon", "max_iters"});
    read(a, "learning_rate", t.adam.learning_rate, "train.adam");
    read(a, "beta1", t.adam.beta1, "train.adam");
    read(a, "beta2", t.adam.beta2, "train.adam");
    read(a, "epsilon", t.adam.epsilon, "train.adam");
    read(a, "max_iters", t.adam.max_iters, "train.adam");
  }
  if (j.contains("bfgs")) {
    const json& b = j["bfgs"];
    reject_unknown(b, "train.bfgs", {"initial_step_norm", "max_iters", "armijo_c",
                                     "shrink", "max_backtracks", "secant_refine"});
    read(b, "initial_step_norm", t.bfgs.initial_step_norm, "train.bfgs");
    read(b, "max_iters", t.bfgs.max_iters, "train.bfgs");
    read(b, "armijo_c", t.bfgs.armijo_c, "train.bfgs");
    read(b, "shrink", t.bfgs.shrink, "train.bfgs");
    read(b, "max_backtracks", t.bfgs.max_backtracks, "train.bfgs");
    read(b, "secant_refine", t.bfgs.secant_refine, "train.bfgs");
  }
  if (j.contains("convergence")) {
    const json& c = j["convergence"];
    reject_unknown(c, "train.convergence", {"grad_inf_tol", "rel_cost_tol", "patience"});
    read(c, "grad_inf_tol", t.convergence.grad_inf_tol, "train.convergence");
    read(c, "rel_cost_tol", t.convergence.rel_cost_tol, "train.convergence");
    read(c, "patience", t.convergence.patience, "train.convergence");
  }
  read(j, "reg_weight", t.reg_weight, w);
  read(j, "t0", t.t0, w);
  read(j, "tf", t.tf, w);
  read(j, "failure_penalty", t.failure_penalty, w);
  read(j, "threads", t.threads, w);
  read(j, "record_wall_time", t.record_wall_time, w);
}

void parse_gradcheck(const json& j, GradcheckConfig& g) {
  const std::string w = "gradcheck";
  reject_unknown(j, w, {"layer_sizes", "abstol", "reltol", "eps", "tolerance"});
  read(j, "layer_sizes", g.layer_sizes, w);
  read(j, "abstol", g.abstol, w);
  read(j, "reltol", g.reltol, w);
  read(j, "eps", g.eps, w);
  read(j, "tolerance", g.tolerance, w);
}

void validate(const RunConfig& c) {
  try {
    c.grid.validate();
    c.policy.validate();
    c.train.solver.validate();
    c.train.aero.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const auto& t = c.train;
  if (!(t.adam.learning_rate > 0.0) || !(t.adam.epsilon > 0.0) ||
      !(t.adam.beta1 >= 0.0 && t.adam.beta1 < 1.0) ||
      !(t.adam.beta2 >= 0.0 && t.adam.beta2 < 1.0))
    throw ConfigError("ADAM hyperparameters out of range");
  if (!(t.bfgs.initial_step_norm > 0.0) || !(t.bfgs.armijo_c > 0.0 && t.bfgs.armijo_c < 1.0) ||
      !(t.bfgs.shrink > 0.0 && t.bfgs.shrink < 1.0))
    throw ConfigError("BFGS hyperparameters out of range");
  if (!(t.reg_weight >= 0.0)) throw ConfigError("reg_weight must be >= 0");
  if (!(t.t0 < t.tf)) throw ConfigError("train.t0 must be < train.tf");
  if (!(t.convergence.grad_inf_tol > 0.0) || !(t.convergence.rel_cost_tol > 0.0) ||
      t.convergence.patience < 1)
    throw ConfigError("convergence settings must be positive");
  if (!(c.gradcheck.abstol > 0.0 && c.gradcheck.reltol > 0.0 && c.gradcheck.eps > 0.0 &&
        c.gradcheck.tolerance > 0.0))
    throw ConfigError("gradcheck tolerances must be positive");
  MlpSpec g = c.policy;
  g.layer_sizes = c.gradcheck.layer_sizes;
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("gradcheck: ") + e.what());
  }
}

}  // namespace

std::vector<double> parse_range(const std::string& spec) {
  const auto v = split_numbers(spec, 3);
  const double start = v[0], step = v[1], stop = v[2];
  if (!(step > 0.0) || stop < start) throw ConfigError("malformed range '" + spec + "'");
  std::vector<double> out;
  const auto n = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) out.push_back(start + static_cast<double>(i) * step);
  return out;
}

std::vector<double> parse_linspace(const std::string& spec) {
  const auto v = split_numbers(spec, 3);
  const double start = v[0], stop = v[1], count = v[2];
  if (!(count >= 1.0) || count != std::floor(count) || stop < start)
    throw ConfigError("malformed grid '" + spec + "' (expected start:stop:count)");
  const auto n = static_cast<std::size_t>(count);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = n == 1 ? start
                    : start + (stop - start) * static_cast<double>(i) /
                                  static_cast<double>(n - 1);
  return out;
}

void apply_case_preset(RunConfig& c, const std::string& name) {
  if (name == "base") {
    if (!c.policy.scaling) c.policy.scaling = MlpSpec::table_bounds();
    c.train.solver.method = OdeMethod::Tsit5;
  } else if (name == "unscaled") {
    c.policy.scaling.reset();
  } else if (name == "euler") {
    c.train.solver.method = OdeMethod::Euler;
    c.train.solver.fixed_dt = 1e-3;
  } else {
    throw ConfigError("unknown case preset '" + name + "' (base, unscaled, euler)");
  }
  c.case_name = name;
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = text.empty() ? json::object() : json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j, "config", {"case", "seed", "output_dir", "grid", "policy", "solver",
                               "train", "aero", "gradcheck"});
  RunConfig c;
  std::string case_name = "base";
  read(j, "case", case_name, "config");
  apply_case_preset(c, case_name);
  read(j, "seed", c.seed, "config");
  if (j.contains("output_dir")) {
    std::string dir;
    read(j, "output_dir", dir, "config");
    c.output_dir = dir;
  }
  if (j.contains("grid")) {
    const json& g = j["grid"];
    reject_unknown(g, "grid", {"h0", "V0", "cmd"});
    if (g.contains("h0")) c.grid.h0_values = read_axis(g, "h0", "grid");
    if (g.contains("V0")) c.grid.V0_values = read_axis(g, "V0", "grid");
    if (g.contains("cmd")) c.grid.cmd_values = read_axis(g, "cmd", "grid");
  }
  if (j.contains("policy")) parse_policy(j["policy"], c);
  if (j.contains("solver")) parse_solver(j["solver"], c.train.solver);
  if (j.contains("train")) parse_train(j["train"], c.train);
  if (j.contains("aero")) parse_aero(j["aero"], c.train.aero);
  if (j.contains("gradcheck")) parse_gradcheck(j["gradcheck"], c.gradcheck);
  validate(c);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

}  // namespace ctpg
