#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctpg/policy.hpp"
#include "ctpg/trainer.hpp"

namespace ctpg {

/// Settings for the adjoint-versus-finite-difference check.
struct GradcheckConfig {
  std::vector<int> layer_sizes = {3, 3, 4, 3};
  double abstol = 1e-10;
  double reltol = 1e-10;
  double eps = 1e-5;
  double tolerance = 1e-3;
};

/// Everything a CLI run needs. Defaults reproduce the `base` case.
struct RunConfig {
  std::string case_name = "base";
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  EnsembleGrid grid;
  MlpSpec policy;
  TrainConfig train;
  GradcheckConfig gradcheck;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Applies a case preset (`base`, `unscaled`, `euler`) on top of `config`.
void apply_case_preset(RunConfig& config, const std::string& case_name);

/// Parses a JSON document. The `case` preset is applied first so explicit
/// keys override it. Unknown keys raise ConfigError.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Parses "start:step:stop" (inclusive) into the listed values.
std::vector<double> parse_range(const std::string& spec);

/// Parses "start:stop:count" into `count` evenly spaced values.
std::vector<double> parse_linspace(const std::string& spec);

}  // namespace ctpg
