#include "ctpg/policy.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ctpg {
namespace {

using nlohmann::json;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_dims(const MlpSpec& spec, const ParamVector& p, const Vector& input) {
  if (static_cast<std::size_t>(p.size()) != spec.parameter_count()) {
    std::ostringstream msg;
    msg << "parameter vector has length " << p.size() << ", network expects "
        << spec.parameter_count();
    throw std::invalid_argument(msg.str());
  }
  if (input.size() != spec.input_dim()) {
    std::ostringstream msg;
    msg << "policy input has length " << input.size() << ", network expects "
        << spec.input_dim();
    throw std::invalid_argument(msg.str());
  }
}

// Views into the flat parameter vector for one layer.
struct LayerView {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W;
  Eigen::Map<const Vector> b;
  Eigen::Index offset;  // start of W in p
};

std::vector<LayerView> layers_of(const MlpSpec& spec, const ParamVector& p) {
  std::vector<LayerView> out;
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const int n_in = spec.layer_sizes[l];
    const int n_out = spec.layer_sizes[l + 1];
    out.push_back(LayerView{
        {p.data() + off, n_out, n_in}, {p.data() + off + n_out * n_in, n_out}, off});
    off += n_out * n_in + n_out;
  }
  return out;
}

struct ForwardTrace {
  std::vector<Vector> activations;  // activations[0] = input
  Vector pre_output;                // final affine output before scaling
  Vector output;
  Vector d_output_d_pre;            // elementwise derivative of the scaling
};

ForwardTrace trace_forward(const MlpSpec& spec, const std::vector<LayerView>& layers,
                           const Vector& input) {
  ForwardTrace tr;
  tr.activations.reserve(layers.size());
  tr.activations.push_back(input);
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    Vector z = layers[l].W * tr.activations.back() + layers[l].b;
    tr.activations.push_back(z.array().tanh().matrix());
  }
  tr.pre_output = layers.back().W * tr.activations.back() + layers.back().b;
  const auto n = tr.pre_output.size();
  tr.output.resize(n);
  tr.d_output_d_pre.resize(n);
  if (spec.scaling) {
    const auto& s = *spec.scaling;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double sg = sigmoid(tr.pre_output[i]);
      const double range = s.upper[i] - s.lower[i];
      tr.output[i] = s.lower[i] + range * sg;
      tr.d_output_d_pre[i] = range * sg * (1.0 - sg);
    }
  } else {
    tr.output = tr.pre_output;
    tr.d_output_d_pre.setOnes();
  }
  return tr;
}

json vector_to_json(const Vector& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Vector vector_from_json(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

GainBounds MlpSpec::table_bounds() {
  GainBounds b;
  b.lower = Vector::Constant(3, 1e-3);
  b.upper = (Vector(3) << 4.0, 0.2, 2.0).finished();
  return b;
}

std::size_t MlpSpec::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    n += static_cast<std::size_t>(layer_sizes[l]) * layer_sizes[l + 1] +
         layer_sizes[l + 1];
  }
  return n;
}

void MlpSpec::validate() const {
  if (layer_sizes.size() < 2)
    throw std::invalid_argument("network needs at least an input and an output layer");
  for (int s : layer_sizes)
    if (s <= 0) throw std::invalid_argument("layer sizes must be positive");
  if (scaling) {
    if (scaling->lower.size() != output_dim() || scaling->upper.size() != output_dim())
      throw std::invalid_argument("scaling bounds must match the output dimension");
    for (Eigen::Index i = 0; i < scaling->lower.size(); ++i) {
      if (!(scaling->lower[i] < scaling->upper[i]))
        throw std::invalid_argument("scaling requires lower < upper elementwise");
    }
  }
  if (!(normalisers.alpha_max > 0.0 && normalisers.mach_max > 0.0 &&
        normalisers.altitude_max > 0.0))
    throw std::invalid_argument("input normalisers must be positive");
}

GainVector GainVector::from(const Vector& v) {
  if (v.size() != 3) throw std::invalid_argument("gain vector must have 3 entries");
  return {v[0], v[1], v[2]};
}

Vector GainVector::to_vector() const { return (Vector(3) << K_A, K_I, K_R).finished(); }

Vector normalised_input(const InputNormalisers& n, double alpha, double mach,
                        double altitude) {
  return (Vector(3) << std::abs(alpha) / n.alpha_max, mach / n.mach_max,
          altitude / n.altitude_max)
      .finished();
}

Vector mlp_forward(const MlpSpec& spec, const ParamVector& p, const Vector& input) {
  check_dims(spec, p, input);
  return trace_forward(spec, layers_of(spec, p), input).output;
}

MlpEvaluation mlp_evaluate(const MlpSpec& spec, const ParamVector& p,
                           const Vector& input) {
  check_dims(spec, p, input);
  const auto layers = layers_of(spec, p);
  const ForwardTrace tr = trace_forward(spec, layers, input);

  MlpEvaluation ev;
  ev.output = tr.output;
  ev.d_params = Matrix::Zero(spec.output_dim(), static_cast<Eigen::Index>(p.size()));

  // delta(j, r): d output_j / d pre-activation r of the current layer.
  Matrix delta = tr.d_output_d_pre.asDiagonal();
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& L = layers[l];
    const Vector& a_in = tr.activations[l];
    const Eigen::Index n_out = L.W.rows();
    const Eigen::Index n_in = L.W.cols();
    for (Eigen::Index r = 0; r < n_out; ++r) {
      ev.d_params.block(0, L.offset + r * n_in, delta.rows(), n_in) =
          delta.col(r) * a_in.transpose();
    }
    ev.d_params.block(0, L.offset + n_out * n_in, delta.rows(), n_out) = delta;
    Matrix back = delta * L.W;
    if (l > 0) {
      const Vector slope = (1.0 - a_in.array().square()).matrix();
      back = back * slope.asDiagonal();
    }
    delta = std::move(back);
  }
  ev.d_input = std::move(delta);
  return ev;
}

Matrix mlp_param_jacobian(const MlpSpec& spec, const ParamVector& p,
                          const Vector& input) {
  return mlp_evaluate(spec, p, input).d_params;
}

Matrix mlp_input_jacobian(const MlpSpec& spec, const ParamVector& p,
                          const Vector& input) {
  return mlp_evaluate(spec, p, input).d_input;
}

ParamVector init_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector p = ParamVector::Zero(static_cast<Eigen::Index>(spec.parameter_count()));
  std::mt19937_64 rng(seed);
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const int n_in = spec.layer_sizes[l];
    const int n_out = spec.layer_sizes[l + 1];
    const double bound = std::sqrt(6.0 / (n_in + n_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (int k = 0; k < n_in * n_out; ++k) p[off + k] = dist(rng);
    off += n_in * n_out + n_out;
  }
  return p;
}

std::string snapshot_to_string(const PolicySnapshot& s) {
  json j;
  j["format"] = "ctpg-policy-snapshot";
  j["version"] = 1;
  j["case"] = s.case_name;
  j["seed"] = s.seed;
  j["layer_sizes"] = s.spec.layer_sizes;
  j["hidden_activation"] = "tanh";
  j["output_activation"] = "linear";
  j["normalisers"] = {{"alpha_max", s.spec.normalisers.alpha_max},
                      {"mach_max", s.spec.normalisers.mach_max},
                      {"altitude_max", s.spec.normalisers.altitude_max}};
  if (s.spec.scaling) {
    j["scaling"] = {{"lower", vector_to_json(s.spec.scaling->lower)},
                    {"upper", vector_to_json(s.spec.scaling->upper)}};
  } else {
    j["scaling"] = nullptr;
  }
  j["params"] = vector_to_json(s.params);
  return j.dump(2) + "\n";
}

PolicySnapshot snapshot_from_string(const std::string& text) {
  PolicySnapshot s;
  try {
    const json j = json::parse(text);
    if (j.value("format", "") != "ctpg-policy-snapshot")
      throw std::invalid_argument("not a policy snapshot");
    s.case_name = j.value("case", "base");
    s.seed = j.at("seed").get<std::uint64_t>();
    s.spec.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
    const auto& n = j.at("normalisers");
    s.spec.normalisers = {n.at("alpha_max").get<double>(), n.at("mach_max").get<double>(),
                          n.at("altitude_max").get<double>()};
    if (j.at("scaling").is_null()) {
      s.spec.scaling.reset();
    } else {
      s.spec.scaling = GainBounds{vector_from_json(j["scaling"].at("lower")),
                                  vector_from_json(j["scaling"].at("upper"))};
    }
    s.params = vector_from_json(j.at("params"));
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed policy snapshot: ") + e.what());
  }
  s.spec.validate();
  if (static_cast<std::size_t>(s.params.size()) != s.spec.parameter_count())
    throw std::invalid_argument("snapshot parameter count does not match layer sizes");
  if (!s.params.allFinite())
    throw std::invalid_argument("snapshot parameters must be finite");
  return s;
}

void save_snapshot(const PolicySnapshot& snapshot, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << snapshot_to_string(snapshot);
}

PolicySnapshot load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return snapshot_from_string(buf.str());
}

}  // namespace ctpg
