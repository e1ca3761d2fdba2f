#pragma once

#include <filesystem>
#include <ostream>

#include "ctpg/ode.hpp"
#include "ctpg/policy.hpp"
#include "ctpg/sensitivity.hpp"

namespace ctpg::airframe {

/// Pitch-plane model constants of a tail-controlled skid-to-turn airframe.
struct AeroParams {
  double a_a = -0.3;
  double a_n = 19.373;
  double b_n = -31.023;
  double c_n = -9.717;
  double d_n = -1.948;
  double a_m = 40.44;
  double b_m = -64.015;
  double c_m = 2.922;
  double d_m = -11.803;
  double mass = 204.02;           // kg
  double I_yy = 247.439;          // kg m^2
  double S_ref = 0.0409;          // m^2
  double d_ref = 0.2286;          // m
  double omega_a = 150.0;         // rad/s, actuator bandwidth
  double zeta_a = 0.7;            // actuator damping
  double rho0 = 1.225;            // kg/m^3
  double H = 8435.0;              // m, density scale height
  double gamma_a = 1.4;
  double R_a = 286.0;             // m^2/s^2/K
  double T0 = 288.15;             // K
  double lapse = 0.0065;          // K/m
  double g = 9.8;                 // m/s^2

  void validate() const;
};

struct PlantState {
  double h = 0.0;
  double V = 0.0;
  double alpha = 0.0;
  double q = 0.0;
  double theta = 0.0;
  double delta = 0.0;
  double delta_dot = 0.0;

  double gamma() const { return theta - alpha; }
};

struct PlantDerivative {
  PlantState rate;  // time derivative of every PlantState field
  double a_z = 0.0; // normal specific force, positive nose down
};

struct Atmosphere {
  double rho = 0.0;
  double sound_speed = 0.0;
  double mach = 0.0;
  double dynamic_pressure = 0.0;
};

struct AeroCoefficients {
  double C_A = 0.0;
  double C_N = 0.0;
  double C_M = 0.0;
};

struct CommandSpec {
  double a_z_cmd = 0.0;
};

struct AutopilotOutput {
  double x_c_dot = 0.0;
  double delta_c = 0.0;
};

/// Plant, autopilot integrator and reference-model states. The running-cost
/// quadrature is appended by the sensitivity forward pass.
struct ClosedLoopState {
  PlantState plant;
  double x_c = 0.0;
  double a_z_ref = 0.0;

  static constexpr Eigen::Index kDim = 9;
  Vector to_vector() const;
  static ClosedLoopState from_vector(const Vector& x);
};

/// Throws std::domain_error when the temperature model goes nonpositive.
Atmosphere atmosphere(const AeroParams& params, double h, double V);

AeroCoefficients aero_coefficients(const AeroParams& params, double alpha, double mach,
                                   double delta);

/// a_z = -V (theta' - alpha') - g cos(gamma). Throws std::domain_error for V <= 0.
double normal_acceleration(const AeroParams& params, const PlantState& state);

/// Throws std::domain_error for V <= 0.
PlantDerivative plant_derivatives(const AeroParams& params, const PlantState& state,
                                  double delta_c);

AutopilotOutput three_loop_autopilot(const GainVector& gains, double a_z,
                                     const CommandSpec& cmd, double q, double V,
                                     double gamma, double x_c, double g = 9.8);

/// First-order lag with 0.2 s time constant.
double reference_model_rhs(double a_z_ref, const CommandSpec& cmd);

/// Tracking, command and actuator-rate penalties; always >= 0.
double running_cost(double a_z, double a_z_ref, const CommandSpec& cmd, double delta_c,
                    double delta_dot);

/// Signals computed along the closed loop at one instant.
struct ClosedLoopSignals {
  GainVector gains;
  double a_z = 0.0;
  double delta_c = 0.0;
  double mach = 0.0;
};

ClosedLoopSignals closed_loop_signals(const AeroParams& params, const MlpSpec& spec,
                                      const ParamVector& p, const CommandSpec& cmd,
                                      const ClosedLoopState& state);

ClosedLoopState closed_loop_rhs(const AeroParams& params, const MlpSpec& spec,
                                const ParamVector& p, const CommandSpec& cmd, double t,
                                const ClosedLoopState& state);

/// One training/evaluation scenario: initial altitude, speed and command.
struct Scenario {
  double h0 = 5000.0;
  double V0 = 800.0;
  double a_z_cmd = -50.0;
};

ClosedLoopState initial_state(const Scenario& scenario);

/// Analytic partials of the closed-loop rhs and running cost with respect
/// to the state vector and the policy parameters.
PointPartials closed_loop_partials(const AeroParams& params, const MlpSpec& spec,
                                   const ParamVector& p, const CommandSpec& cmd,
                                   const Vector& x);

struct ProblemOptions {
  double t0 = 0.0;
  double tf = 3.0;
  /// Coefficient of ||p||^2; zero leaves the regulariser out.
  double reg_weight = 0.0;
};

/// Closed-loop tracking problem for one scenario with the analytic provider.
/// The dynamics return NaN instead of throwing when a trial state leaves the
/// model's domain, so the solver reports nonfinite-state.
CtpgProblem make_problem(const AeroParams& params, const MlpSpec& spec,
                         const Scenario& scenario, const ProblemOptions& options = {});

/// CSV header used by write_trajectory_csv.
inline constexpr const char* kTrajectoryHeader =
    "t,h,V,alpha,q,theta,delta,delta_dot,x_c,a_z,a_z_ref,a_z_cmd,delta_c,K_A,K_I,K_R";

/// One row per save time of `solution` (closed-loop or augmented state).
void write_trajectory_csv(std::ostream& out, const OdeSolution& solution,
                          const AeroParams& params, const MlpSpec& spec,
                          const ParamVector& p, const CommandSpec& cmd);

}  // namespace ctpg::airframe
