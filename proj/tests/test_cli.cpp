#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "ctpg/cli.hpp"

using namespace ctpg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("ctpg_cli_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "ctpg");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

std::vector<std::vector<double>> read_csv(const std::string& path, std::string& header) {
  std::ifstream in(path);
  std::getline(in, header);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

const char* kSmallTrain = R"({
  "grid": {"h0": [5000], "V0": [800], "cmd": [-50]},
  "policy": {"layer_sizes": [3, 3, 4, 3]},
  "train": {"adam": {"max_iters": 3}, "bfgs": {"max_iters": 2}, "threads": 1,
            "record_wall_time": false}
})";

}  // namespace

TEST_CASE("train writes its three artifacts") {
  TempDir dir;
  write_file(dir / "cfg.json", kSmallTrain);
  const Outcome r = run_cli({"train", "-c", dir / "cfg.json", "-o", dir / "run", "-s", "3"});
  CHECK(r.code == cli::kOk);
  CHECK(fs::exists(dir / "run/learning_curve.csv"));
  CHECK(fs::exists(dir / "run/params.snapshot"));
  CHECK(fs::exists(dir / "run/summary.json"));
  const PolicySnapshot snap = load_snapshot(dir / "run/params.snapshot");
  CHECK(snap.seed == 3);
  CHECK(snap.spec.scaling.has_value());
  CHECK(slurp(dir / "run/summary.json").find("\"final_cost\"") != std::string::npos);

  // identical inputs, identical bytes
  CHECK(run_cli({"train", "-c", dir / "cfg.json", "-o", dir / "again", "-s", "3"}).code == 0);
  for (const char* f : {"learning_curve.csv", "params.snapshot", "summary.json"})
    CHECK(slurp(dir / (std::string("run/") + f)) == slurp(dir / (std::string("again/") + f)));
}

TEST_CASE("unscaled preset is recorded in the snapshot") {
  TempDir dir;
  write_file(dir / "cfg.json", kSmallTrain);
  const Outcome r =
      run_cli({"train", "-c", dir / "cfg.json", "-o", dir / "run", "--case", "unscaled"});
  CHECK(r.code == cli::kOk);
  const PolicySnapshot snap = load_snapshot(dir / "run/params.snapshot");
  CHECK_FALSE(snap.spec.scaling.has_value());
  CHECK(snap.case_name == "unscaled");
}

TEST_CASE("a malformed config exits 1 without artifacts") {
  TempDir dir;
  write_file(dir / "cfg.json", R"({"trian": {}})");
  const Outcome r = run_cli({"train", "-c", dir / "cfg.json", "-o", dir / "run"});
  CHECK(r.code == cli::kConfigError);
  CHECK(r.err.find("trian") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "run"));
  CHECK(run_cli({"train", "-c", dir / "missing.json", "-o", dir / "run"}).code == cli::kConfigError);
}

TEST_CASE("argument errors exit 1") {
  CHECK(run_cli({}).code == cli::kConfigError);
  CHECK(run_cli({"fly"}).code == cli::kConfigError);
  CHECK(run_cli({"simulate"}).code == cli::kConfigError);
  CHECK(run_cli({"simulate", "-p", "/nonexistent/p.snapshot"}).code == cli::kConfigError);
  const Outcome help = run_cli({"--help"});
  CHECK(help.code == cli::kOk);
  CHECK(help.out.find("gradcheck") != std::string::npos);
}

TEST_CASE("simulating a zero-weight policy holds the midpoint gains") {
  TempDir dir;
  const MlpSpec spec;
  save_snapshot({spec, Vector::Zero(spec.parameter_count()), 0, "base"}, dir / "zero.snapshot");
  const Outcome r = run_cli({"simulate", "-p", dir / "zero.snapshot", "--h0", "6000", "--V0",
                             "700", "--cmd", "20", "-o", dir / "traj.csv"});
  REQUIRE(r.code == cli::kOk);
  std::string header;
  const auto rows = read_csv(dir / "traj.csv", header);
  CHECK(header == airframe::kTrajectoryHeader);
  REQUIRE(rows.size() == 301);
  CHECK(rows.front()[1] == 6000.0);
  CHECK(rows.front()[2] == 700.0);
  CHECK(rows.back()[0] == doctest::Approx(3.0));
  const auto b = MlpSpec::table_bounds();
  for (const auto& row : rows) {
    CHECK(row[11] == 20.0);
    CHECK(row[13] == doctest::Approx(0.5 * (b.lower[0] + b.upper[0])).epsilon(1e-10));
    CHECK(row[14] == doctest::Approx(0.5 * (b.lower[1] + b.upper[1])).epsilon(1e-10));
    CHECK(row[15] == doctest::Approx(0.5 * (b.lower[2] + b.upper[2])).epsilon(1e-10));
  }
}

TEST_CASE("gain export") {
  TempDir dir;
  const MlpSpec spec;
  save_snapshot({spec, init_params(spec, 5) * 3.0, 5, "base"}, dir / "p.snapshot");
  Outcome r = run_cli({"export-gains", "-p", dir / "p.snapshot", "--alpha", "0:0.5:2", "--mach",
                       "2:3:2", "-o", dir / "g.csv"});
  REQUIRE(r.code == cli::kOk);
  std::string header;
  auto rows = read_csv(dir / "g.csv", header);
  CHECK(header == "alpha,M,K_A,K_I,K_R");
  CHECK(rows.size() == 4);

  r = run_cli({"export-gains", "-p", dir / "p.snapshot", "-o", dir / "full.csv"});
  REQUIRE(r.code == cli::kOk);
  rows = read_csv(dir / "full.csv", header);
  CHECK(rows.size() == 31 * 26);
  const auto b = MlpSpec::table_bounds();
  for (const auto& row : rows)
    for (int i = 0; i < 3; ++i) {
      CHECK(row[2 + i] > b.lower[i]);
      CHECK(row[2 + i] < b.upper[i]);
    }

  CHECK(run_cli({"export-gains", "-p", dir / "p.snapshot", "--alpha", "0:1", "-o",
                 dir / "bad.csv"}).code == cli::kConfigError);
}

TEST_CASE("gradcheck passes, is reproducible and catches a corrupted provider") {
  const Outcome a = run_cli({"gradcheck", "-s", "4"});
  CHECK(a.code == cli::kOk);
  CHECK(a.out.find("PASS") != std::string::npos);
  const Outcome b = run_cli({"gradcheck", "-s", "4"});
  CHECK(a.out == b.out);

  const Outcome bad = run_cli({"gradcheck", "-s", "4", "--corrupt-provider"});
  CHECK(bad.code == cli::kGradientMismatch);
  CHECK(bad.err.find("coordinate") != std::string::npos);
}
