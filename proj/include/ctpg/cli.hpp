#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "ctpg/airframe.hpp"
#include "ctpg/config.hpp"

namespace ctpg::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 1,
  kRunError = 2,
  kGradientMismatch = 3,
};

struct GradcheckReport {
  airframe::Scenario scenario;
  Vector adjoint;
  Vector finite_difference;
  double max_rel_error = 0.0;
  Eigen::Index worst_index = 0;
  double seconds = 0.0;
};

/// Adjoint versus central-difference gradient on one grid member picked by
/// `seed`, using the gradcheck network and tolerances from `config`. With
/// `corrupt_provider` set, df/dp is scaled by 1.05 (negative control).
GradcheckReport run_gradcheck(const RunConfig& config, std::uint64_t seed,
                              bool corrupt_provider = false);

/// Same check on an explicit scenario.
GradcheckReport run_gradcheck(const RunConfig& config, const airframe::Scenario& scenario,
                              std::uint64_t seed, bool corrupt_provider = false);

/// Entry point shared by the `ctpg` executable and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ctpg::cli
