#include "ctpg/airframe.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace ctpg::airframe {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kRefTimeConstant = 0.2;
constexpr double kDeltaScale = 5.0 * kPi / 36.0;
constexpr double kDeltaRateScale = 1.5;

enum Idx : Eigen::Index { H = 0, VEL, ALPHA, Q, THETA, DELTA, DELTA_DOT, XC, AREF };

using Row = Eigen::Matrix<double, 1, ClosedLoopState::kDim>;

Row unit(Eigen::Index i) {
  Row r = Row::Zero();
  r[i] = 1.0;
  return r;
}

double sign_or_zero(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void require_positive_speed(double V) {
  if (!(V > 0.0)) {
    std::ostringstream msg;
    msg << "airspeed must be positive, got V = " << V;
    throw std::domain_error(msg.str());
  }
}

}  // namespace

void AeroParams::validate() const {
  const double all[] = {a_a, a_n, b_n, c_n, d_n, a_m, b_m, c_m, d_m, mass, I_yy,
                        S_ref, d_ref, omega_a, zeta_a, rho0, H, gamma_a, R_a, T0,
                        lapse, g};
  for (double v : all)
    if (!std::isfinite(v)) throw std::invalid_argument("aero parameters must be finite");
  const double positive[] = {mass, I_yy, S_ref, d_ref, omega_a, rho0, H, T0};
  for (double v : positive)
    if (!(v > 0.0))
      throw std::invalid_argument(
          "m, I_yy, S_ref, d_ref, omega_a, rho0, H and T0 must be positive");
}

Vector ClosedLoopState::to_vector() const {
  Vector x(kDim);
  x << plant.h, plant.V, plant.alpha, plant.q, plant.theta, plant.delta,
      plant.delta_dot, x_c, a_z_ref;
  return x;
}

ClosedLoopState ClosedLoopState::from_vector(const Vector& x) {
  if (x.size() < kDim) throw std::invalid_argument("closed-loop state needs 9 entries");
  return {{x[H], x[VEL], x[ALPHA], x[Q], x[THETA], x[DELTA], x[DELTA_DOT]}, x[XC], x[AREF]};
}

Atmosphere atmosphere(const AeroParams& params, double h, double V) {
  const double T = params.T0 - params.lapse * h;
  if (!(T > 0.0)) {
    std::ostringstream msg;
    msg << "temperature " << T << " K at altitude " << h << " m is not positive";
    throw std::domain_error(msg.str());
  }
  Atmosphere a;
  a.rho = params.rho0 * std::exp(-h / params.H);
  a.sound_speed = std::sqrt(params.gamma_a * params.R_a * T);
  a.mach = V / a.sound_speed;
  a.dynamic_pressure = 0.5 * a.rho * V * V;
  return a;
}

AeroCoefficients aero_coefficients(const AeroParams& P, double alpha, double mach,
                                   double delta) {
  const double a3 = alpha * alpha * alpha;
  const double a_abs = alpha * std::abs(alpha);
  return {P.a_a,
          P.a_n * a3 + P.b_n * a_abs + P.c_n * (2.0 - mach / 3.0) * alpha + P.d_n * delta,
          P.a_m * a3 + P.b_m * a_abs + P.c_m * (-7.0 + 8.0 * mach / 3.0) * alpha +
              P.d_m * delta};
}

namespace {

// Rates of h, V, alpha and q (everything that does not involve delta_c).
struct AeroRates {
  double h_dot, V_dot, alpha_dot, q_dot;
};

AeroRates aero_rates(const AeroParams& P, const PlantState& s) {
  require_positive_speed(s.V);
  const Atmosphere atm = atmosphere(P, s.h, s.V);
  const AeroCoefficients c = aero_coefficients(P, s.alpha, atm.mach, s.delta);
  const double gamma = s.gamma();
  const double k = atm.dynamic_pressure * P.S_ref / P.mass;
  const double sa = std::sin(s.alpha);
  const double ca = std::cos(s.alpha);
  AeroRates r;
  r.h_dot = s.V * std::sin(gamma);
  r.V_dot = k * (c.C_N * sa + c.C_A * ca) - P.g * std::sin(gamma);
  r.alpha_dot = k / s.V * (c.C_N * ca - c.C_A * sa) + P.g / s.V * std::cos(gamma) + s.q;
  r.q_dot = atm.dynamic_pressure * P.S_ref * P.d_ref / P.I_yy * c.C_M;
  return r;
}

double a_z_from(const AeroParams& P, const PlantState& s, double alpha_dot) {
  const double gamma_dot = s.q - alpha_dot;
  return -s.V * gamma_dot - P.g * std::cos(s.gamma());
}

}  // namespace

double normal_acceleration(const AeroParams& params, const PlantState& state) {
  return a_z_from(params, state, aero_rates(params, state).alpha_dot);
}

PlantDerivative plant_derivatives(const AeroParams& P, const PlantState& s,
                                  double delta_c) {
  const AeroRates r = aero_rates(P, s);
  PlantDerivative d;
  d.rate.h = r.h_dot;
  d.rate.V = r.V_dot;
  d.rate.alpha = r.alpha_dot;
  d.rate.q = r.q_dot;
  d.rate.theta = s.q;
  d.rate.delta = s.delta_dot;
  d.rate.delta_dot = -P.omega_a * P.omega_a * (s.delta - delta_c) -
                     2.0 * P.zeta_a * P.omega_a * s.delta_dot;
  d.a_z = a_z_from(P, s, r.alpha_dot);
  return d;
}

AutopilotOutput three_loop_autopilot(const GainVector& K, double a_z,
                                     const CommandSpec& cmd, double q, double V,
                                     double gamma, double x_c, double g) {
  require_positive_speed(V);
  AutopilotOutput out;
  out.x_c_dot = K.K_A * (cmd.a_z_cmd - a_z) + q + (cmd.a_z_cmd + g * std::cos(gamma)) / V;
  out.delta_c = K.K_I * x_c + K.K_R * q;
  return out;
}

double reference_model_rhs(double a_z_ref, const CommandSpec& cmd) {
  return (cmd.a_z_cmd - a_z_ref) / kRefTimeConstant;
}

double running_cost(double a_z, double a_z_ref, const CommandSpec& cmd, double delta_c,
                    double delta_dot) {
  const double track = (a_z - a_z_ref) / (1.0 + std::abs(cmd.a_z_cmd));
  const double effort = delta_c / kDeltaScale;
  const double rate = delta_dot / kDeltaRateScale;
  return 100.0 * track * track + 0.01 * effort * effort + 0.1 * rate * rate;
}

ClosedLoopSignals closed_loop_signals(const AeroParams& P, const MlpSpec& spec,
                                      const ParamVector& p, const CommandSpec& cmd,
                                      const ClosedLoopState& x) {
  const PlantState& s = x.plant;
  require_positive_speed(s.V);
  ClosedLoopSignals sig;
  sig.mach = atmosphere(P, s.h, s.V).mach;
  sig.gains = mlp_gains(spec, p, normalised_input(spec.normalisers, s.alpha, sig.mach, s.h));
  sig.a_z = normal_acceleration(P, s);
  sig.delta_c = three_loop_autopilot(sig.gains, sig.a_z, cmd, s.q, s.V, s.gamma(), x.x_c, P.g)
                    .delta_c;
  return sig;
}

ClosedLoopState closed_loop_rhs(const AeroParams& P, const MlpSpec& spec,
                                const ParamVector& p, const CommandSpec& cmd, double,
                                const ClosedLoopState& x) {
  const PlantState& s = x.plant;
  require_positive_speed(s.V);
  const Atmosphere atm = atmosphere(P, s.h, s.V);
  const GainVector gains =
      mlp_gains(spec, p, normalised_input(spec.normalisers, s.alpha, atm.mach, s.h));
  const double a_z = normal_acceleration(P, s);
  const AutopilotOutput ap =
      three_loop_autopilot(gains, a_z, cmd, s.q, s.V, s.gamma(), x.x_c, P.g);
  const PlantDerivative pd = plant_derivatives(P, s, ap.delta_c);

  ClosedLoopState dx;
  dx.plant = pd.rate;
  dx.x_c = ap.x_c_dot;
  dx.a_z_ref = reference_model_rhs(x.a_z_ref, cmd);
  return dx;
}

ClosedLoopState initial_state(const Scenario& sc) {
  ClosedLoopState x;
  x.plant.h = sc.h0;
  x.plant.V = sc.V0;
  return x;
}

PointPartials closed_loop_partials(const AeroParams& P, const MlpSpec& spec,
                                   const ParamVector& p, const CommandSpec& cmd,
                                   const Vector& xv) {
  const ClosedLoopState x = ClosedLoopState::from_vector(xv);
  const PlantState& s = x.plant;
  require_positive_speed(s.V);
  const double V = s.V;
  const double alpha = s.alpha;
  const double q = s.q;

  // Atmosphere.
  const double T = P.T0 - P.lapse * s.h;
  if (!(T > 0.0)) throw std::domain_error("temperature is not positive");
  const double rho = P.rho0 * std::exp(-s.h / P.H);
  const Row d_rho = (-rho / P.H) * unit(H);
  const double Vs = std::sqrt(P.gamma_a * P.R_a * T);
  const Row d_Vs = (-P.gamma_a * P.R_a * P.lapse / (2.0 * Vs)) * unit(H);
  const double M = V / Vs;
  const Row d_M = unit(VEL) / Vs - (V / (Vs * Vs)) * d_Vs;
  const double Qd = 0.5 * rho * V * V;
  const Row d_Qd = (0.5 * V * V) * d_rho + (rho * V) * unit(VEL);

  // Aerodynamic coefficients.
  const double a_abs = std::abs(alpha);
  const AeroCoefficients c = aero_coefficients(P, alpha, M, s.delta);
  const Row d_CN = (3.0 * P.a_n * alpha * alpha + 2.0 * P.b_n * a_abs +
                    P.c_n * (2.0 - M / 3.0)) * unit(ALPHA) -
                   (P.c_n * alpha / 3.0) * d_M + P.d_n * unit(DELTA);
  const Row d_CM = (3.0 * P.a_m * alpha * alpha + 2.0 * P.b_m * a_abs +
                    P.c_m * (-7.0 + 8.0 * M / 3.0)) * unit(ALPHA) +
                   (P.c_m * 8.0 * alpha / 3.0) * d_M + P.d_m * unit(DELTA);

  const double sa = std::sin(alpha), ca = std::cos(alpha);
  const double gamma = s.gamma();
  const double sg = std::sin(gamma), cg = std::cos(gamma);
  const Row d_gamma = unit(THETA) - unit(ALPHA);

  const double k = Qd * P.S_ref / P.mass;
  const Row d_k = (P.S_ref / P.mass) * d_Qd;
  const double F_n = c.C_N * ca - c.C_A * sa;
  const Row d_Fn = ca * d_CN + (-c.C_N * sa - c.C_A * ca) * unit(ALPHA);
  const double F_a = c.C_N * sa + c.C_A * ca;
  const Row d_Fa = sa * d_CN + (c.C_N * ca - c.C_A * sa) * unit(ALPHA);

  // Plant rates that do not involve delta_c.
  const double alpha_dot = k * F_n / V + P.g * cg / V + q;
  const Row d_h_dot = sg * unit(VEL) + (V * cg) * d_gamma;
  const Row d_V_dot = F_a * d_k + k * d_Fa - (P.g * cg) * d_gamma;
  const Row d_alpha_dot = (F_n * d_k + k * d_Fn) / V -
                          ((k * F_n + P.g * cg) / (V * V)) * unit(VEL) -
                          (P.g * sg / V) * d_gamma + unit(Q);
  const double c_q = P.S_ref * P.d_ref / P.I_yy;
  const Row d_q_dot = c_q * (c.C_M * d_Qd + Qd * d_CM);

  const double a_z = -V * (q - alpha_dot) - P.g * cg;
  const Row d_az = -(q - alpha_dot) * unit(VEL) - V * (unit(Q) - d_alpha_dot) +
                   (P.g * sg) * d_gamma;

  // Policy.
  const Vector u = normalised_input(spec.normalisers, alpha, M, s.h);
  const MlpEvaluation mlp = mlp_evaluate(spec, p, u);
  const GainVector K = GainVector::from(mlp.output);
  Eigen::Matrix<double, 3, ClosedLoopState::kDim> d_u;
  d_u.row(0) = (sign_or_zero(alpha) / spec.normalisers.alpha_max) * unit(ALPHA);
  d_u.row(1) = d_M / spec.normalisers.mach_max;
  d_u.row(2) = unit(H) / spec.normalisers.altitude_max;
  const Eigen::Matrix<double, 3, ClosedLoopState::kDim> d_K = mlp.d_input * d_u;

  // Autopilot.
  const double err = cmd.a_z_cmd - a_z;
  const Row d_xc_dot = err * d_K.row(0) - K.K_A * d_az + unit(Q) -
                       (P.g * sg / V) * d_gamma -
                       ((cmd.a_z_cmd + P.g * cg) / (V * V)) * unit(VEL);
  const double delta_c = K.K_I * x.x_c + K.K_R * q;
  const Row d_delta_c =
      x.x_c * d_K.row(1) + K.K_I * unit(XC) + q * d_K.row(2) + K.K_R * unit(Q);

  const double w2 = P.omega_a * P.omega_a;
  const Row d_delta_ddot = -w2 * (unit(DELTA) - d_delta_c) -
                           (2.0 * P.zeta_a * P.omega_a) * unit(DELTA_DOT);

  PointPartials out;
  out.dfdx = Matrix::Zero(ClosedLoopState::kDim, ClosedLoopState::kDim);
  out.dfdx.row(H) = d_h_dot;
  out.dfdx.row(VEL) = d_V_dot;
  out.dfdx.row(ALPHA) = d_alpha_dot;
  out.dfdx.row(Q) = d_q_dot;
  out.dfdx.row(THETA) = unit(Q);
  out.dfdx.row(DELTA) = unit(DELTA_DOT);
  out.dfdx.row(DELTA_DOT) = d_delta_ddot;
  out.dfdx.row(XC) = d_xc_dot;
  out.dfdx.row(AREF) = (-1.0 / kRefTimeConstant) * unit(AREF);

  // Only x_c' and delta'' see the gains directly.
  Eigen::Matrix<double, ClosedLoopState::kDim, 3> d_f_d_K =
      Eigen::Matrix<double, ClosedLoopState::kDim, 3>::Zero();
  d_f_d_K(XC, 0) = err;
  d_f_d_K(DELTA_DOT, 1) = w2 * x.x_c;
  d_f_d_K(DELTA_DOT, 2) = w2 * q;
  out.dfdp = d_f_d_K * mlp.d_params;

  // Running cost.
  const double den = 1.0 + std::abs(cmd.a_z_cmd);
  const double e_track = a_z - x.a_z_ref;
  const double c_track = 200.0 * e_track / (den * den);
  const double c_effort = 0.02 * delta_c / (kDeltaScale * kDeltaScale);
  const double c_rate = 0.2 * s.delta_dot / (kDeltaRateScale * kDeltaRateScale);
  out.dLdx = c_track * (d_az - unit(AREF)) + c_effort * d_delta_c + c_rate * unit(DELTA_DOT);
  Eigen::RowVector3d d_L_d_K(0.0, c_effort * x.x_c, c_effort * q);
  out.dLdp = d_L_d_K * mlp.d_params;
  return out;
}

CtpgProblem make_problem(const AeroParams& params, const MlpSpec& spec,
                         const Scenario& scenario, const ProblemOptions& options) {
  params.validate();
  spec.validate();
  const CommandSpec cmd{scenario.a_z_cmd};
  const double nan = std::numeric_limits<double>::quiet_NaN();

  CtpgProblem pr;
  pr.t0 = options.t0;
  pr.tf = options.tf;
  pr.x0 = initial_state(scenario).to_vector();
  pr.dynamics = [params, spec, cmd, nan](double t, const Vector& x, const Vector& p) {
    try {
      return closed_loop_rhs(params, spec, p, cmd, t, ClosedLoopState::from_vector(x))
          .to_vector();
    } catch (const std::domain_error&) {
      return Vector(Vector::Constant(ClosedLoopState::kDim, nan));
    }
  };
  pr.running_cost = [params, spec, cmd, nan](double, const Vector& xv, const Vector& p) {
    try {
      const ClosedLoopState x = ClosedLoopState::from_vector(xv);
      const ClosedLoopSignals sig = closed_loop_signals(params, spec, p, cmd, x);
      return running_cost(sig.a_z, x.a_z_ref, cmd, sig.delta_c, x.plant.delta_dot);
    } catch (const std::domain_error&) {
      return nan;
    }
  };
  pr.terminal_cost = [](const Vector&) { return 0.0; };
  const double w = options.reg_weight;
  pr.regulariser = [w](const Vector& p) { return w * p.squaredNorm(); };

  DerivativeProvider& d = pr.derivatives;
  d.at_point = [params, spec, cmd](double, const Vector& x, const Vector& p) {
    return closed_loop_partials(params, spec, p, cmd, x);
  };
  d.dfdx = [params, spec, cmd](double, const Vector& x, const Vector& p) {
    return closed_loop_partials(params, spec, p, cmd, x).dfdx;
  };
  d.dfdp = [params, spec, cmd](double, const Vector& x, const Vector& p) {
    return closed_loop_partials(params, spec, p, cmd, x).dfdp;
  };
  d.dLdx = [params, spec, cmd](double, const Vector& x, const Vector& p) {
    return closed_loop_partials(params, spec, p, cmd, x).dLdx;
  };
  d.dLdp = [params, spec, cmd](double, const Vector& x, const Vector& p) {
    return closed_loop_partials(params, spec, p, cmd, x).dLdp;
  };
  d.dphidx = [](const Vector& x) { return RowVector(RowVector::Zero(x.size())); };
  d.dRdp = [w](const Vector& p) { return RowVector((2.0 * w) * p.transpose()); };
  return pr;
}

void write_trajectory_csv(std::ostream& out, const OdeSolution& solution,
                          const AeroParams& params, const MlpSpec& spec,
                          const ParamVector& p, const CommandSpec& cmd) {
  out << kTrajectoryHeader << '\n';
  char buf[64];
  auto put = [&](double v, bool last = false) {
    std::snprintf(buf, sizeof buf, "%.12g", v);
    out << buf << (last ? '\n' : ',');
  };
  for (std::size_t i = 0; i < solution.save_times.size(); ++i) {
    const ClosedLoopState x = ClosedLoopState::from_vector(solution.save_states[i]);
    const ClosedLoopSignals sig = closed_loop_signals(params, spec, p, cmd, x);
    put(solution.save_times[i]);
    put(x.plant.h);
    put(x.plant.V);
    put(x.plant.alpha);
    put(x.plant.q);
    put(x.plant.theta);
    put(x.plant.delta);
    put(x.plant.delta_dot);
    put(x.x_c);
    put(sig.a_z);
    put(x.a_z_ref);
    put(cmd.a_z_cmd);
    put(sig.delta_c);
    put(sig.gains.K_A);
    put(sig.gains.K_I);
    put(sig.gains.K_R, true);
  }
}

}  // namespace ctpg::airframe
