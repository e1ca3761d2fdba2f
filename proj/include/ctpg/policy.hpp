#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ctpg/ode.hpp"

namespace ctpg {

/// Flat array of weights and biases, layer-major: for each layer the weight
/// matrix in row-major order followed by its bias vector.
using ParamVector = Vector;

/// Elementwise output bounds of the sigmoid scaling layer.
struct GainBounds {
  Vector lower;
  Vector upper;
};

/// Characteristic maxima used to normalise the policy input.
struct InputNormalisers {
  double alpha_max = 3.14159265358979323846 / 6.0;
  double mach_max = 4.0;
  double altitude_max = 11000.0;
};

/// Fully connected network: tanh on every layer except the last, which is
/// affine, optionally followed by lower + (upper - lower) * sigmoid(.).
struct MlpSpec {
  /// Node counts including the input layer. The default applies two
  /// affine+tanh stages of widths 3 and 10 to the three normalised inputs,
  /// then an affine map to the three gains.
  std::vector<int> layer_sizes = {3, 3, 10, 3};
  std::optional<GainBounds> scaling = table_bounds();
  InputNormalisers normalisers;

  static GainBounds table_bounds();

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  std::size_t layer_count() const { return layer_sizes.size() - 1; }
  std::size_t parameter_count() const;

  /// Throws std::invalid_argument on inconsistent sizes or bounds.
  void validate() const;
};

/// Three-loop autopilot gains produced by the policy.
struct GainVector {
  double K_A = 0.0;
  double K_I = 0.0;
  double K_R = 0.0;

  static GainVector from(const Vector& v);
  Vector to_vector() const;
};

/// (|alpha| / alpha_max, M / M_max, h / h_max).
Vector normalised_input(const InputNormalisers& n, double alpha, double mach,
                        double altitude);

Vector mlp_forward(const MlpSpec& spec, const ParamVector& p, const Vector& input);

inline GainVector mlp_gains(const MlpSpec& spec, const ParamVector& p,
                            const Vector& input) {
  return GainVector::from(mlp_forward(spec, p, input));
}

/// d output / d p, [output_dim x parameter_count].
Matrix mlp_param_jacobian(const MlpSpec& spec, const ParamVector& p,
                          const Vector& input);

/// d output / d input, [output_dim x input_dim].
Matrix mlp_input_jacobian(const MlpSpec& spec, const ParamVector& p,
                          const Vector& input);

/// Output together with both Jacobians from one forward/backward sweep.
struct MlpEvaluation {
  Vector output;
  Matrix d_params;
  Matrix d_input;
};
MlpEvaluation mlp_evaluate(const MlpSpec& spec, const ParamVector& p,
                           const Vector& input);

/// Glorot-uniform weights, zero biases, reproducible from the seed.
ParamVector init_params(const MlpSpec& spec, std::uint64_t seed);

/// Serialisable parameter set with its network description.
struct PolicySnapshot {
  MlpSpec spec;
  ParamVector params;
  std::uint64_t seed = 0;
  std::string case_name = "base";
};

std::string snapshot_to_string(const PolicySnapshot& snapshot);
PolicySnapshot snapshot_from_string(const std::string& text);
void save_snapshot(const PolicySnapshot& snapshot, const std::filesystem::path& path);
PolicySnapshot load_snapshot(const std::filesystem::path& path);

}  // namespace ctpg
