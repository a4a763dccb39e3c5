#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;

int run_cli(const std::string& args) {
  const std::string cmd = std::string(QPSIM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_dir(const std::string& leaf) {
  const fs::path dir = fs::temp_directory_path() / "qpsim_cli_test" / leaf;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p);
  out << content;
}

const char* kFilterCfg =
    "source = synthetic\ndim = 4\nr = 0.9\neps = 0.3\ndelta = 0.3\ntrials = 50\n";

}  // namespace

TEST_CASE("identical config and seed give byte-identical outputs") {
  const auto dir = temp_dir("determinism");
  write_file(dir / "filter.cfg", kFilterCfg);
  const auto out1 = dir / "run1";
  const auto out2 = dir / "run2";
  REQUIRE(run_cli("filter --config " + (dir / "filter.cfg").string() + " --seed 42 --out " +
                  out1.string()) == 0);
  REQUIRE(run_cli("filter --config " + (dir / "filter.cfg").string() + " --seed 42 --out " +
                  out2.string()) == 0);
  CHECK(slurp(out1 / "filter_sweep.csv") == slurp(out2 / "filter_sweep.csv"));
  CHECK(slurp(out1 / "manifest.txt") == slurp(out2 / "manifest.txt"));
  CHECK(!slurp(out1 / "filter_sweep.csv").empty());

  // a different seed must change the sweep
  const auto out3 = dir / "run3";
  REQUIRE(run_cli("filter --config " + (dir / "filter.cfg").string() + " --seed 43 --out " +
                  out3.string()) == 0);
  CHECK(slurp(out1 / "filter_sweep.csv") != slurp(out3 / "filter_sweep.csv"));
}

TEST_CASE("worker count does not change the results") {
  const auto dir = temp_dir("workers");
  write_file(dir / "filter.cfg", kFilterCfg);
  const auto out1 = dir / "w1";
  const auto out2 = dir / "w4";
  REQUIRE(run_cli("filter --config " + (dir / "filter.cfg").string() +
                  " --seed 9 --workers 1 --out " + out1.string()) == 0);
  REQUIRE(run_cli("filter --config " + (dir / "filter.cfg").string() +
                  " --seed 9 --workers 4 --out " + out2.string()) == 0);
  CHECK(slurp(out1 / "filter_sweep.csv") == slurp(out2 / "filter_sweep.csv"));
}

TEST_CASE("csv outputs carry the manifest hash comment") {
  const auto dir = temp_dir("hash");
  write_file(dir / "filter.cfg", kFilterCfg);
  const auto out = dir / "run";
  REQUIRE(run_cli("filter --config " + (dir / "filter.cfg").string() + " --seed 1 --out " +
                  out.string()) == 0);
  const std::string csv = slurp(out / "filter_sweep.csv");
  CHECK(csv.rfind("# manifest_hash=", 0) == 0);
  // the hash matches the manifest content
  const std::string manifest = slurp(out / "manifest.txt");
  CHECK(!manifest.empty());
}

TEST_CASE("unknown config keys are rejected") {
  const auto dir = temp_dir("badkey");
  write_file(dir / "filter.cfg", std::string(kFilterCfg) + "trils = 10\n");
  const auto out = dir / "run";
  CHECK(run_cli("filter --config " + (dir / "filter.cfg").string() + " --seed 1 --out " +
                out.string()) != 0);
}

TEST_CASE("scene subcommand emits the summary and state dumps") {
  const auto dir = temp_dir("scene");
  write_file(dir / "scene.txt",
             "lambda_m = 1e-6\nz_o_m = 1e8\nz_i_m = 1.0\npupil_radius_m = 0.05\n"
             "pupil_samples = 64\ngrid_n = 4\npixel_pitch_m = 1.2e-5\n"
             "source1_xi_m = 0\nsource1_nu_m = 0\nsource2_xi_m = 1.2e3\nsource2_nu_m = 0\n"
             "b = 0.9\ndelta_vac = 0.5\n");
  const auto out = dir / "run";
  REQUIRE(run_cli("scene --config " + (dir / "scene.txt").string() + " --out " +
                  out.string()) == 0);
  const std::string summary = slurp(out / "scene_summary.txt");
  CHECK(summary.find("eta1=") != std::string::npos);
  CHECK(summary.find("r=") != std::string::npos);
  CHECK(!slurp(out / "psi1.csv").empty());
  CHECK(!slurp(out / "psi2.csv").empty());
}

TEST_CASE("estimate subcommand analytic mode reproduces the direct value") {
  const auto dir = temp_dir("estimate");
  write_file(dir / "est.cfg", "dim = 6\nb = 0.85\nobservable = random\n");
  const auto out = dir / "run";
  REQUIRE(run_cli("estimate --config " + (dir / "est.cfg").string() +
                  " --mode analytic --seed 3 --out " + out.string()) == 0);
  const std::string csv = slurp(out / "estimation.csv");
  CHECK(csv.find("psi2_obs") != std::string::npos);
  // parse the two rows and compare
  double est = 1e300, direct = -1e300;
  std::stringstream ss(csv);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.rfind("psi2_obs,", 0) == 0) est = std::stod(line.substr(9));
    if (line.rfind("psi2_obs_direct,", 0) == 0) direct = std::stod(line.substr(16));
  }
  CHECK(std::abs(est - direct) < 1e-8);
}

TEST_CASE("davis-kahan, complexity and resources emit their grids") {
  const auto dir = temp_dir("grids");
  const auto out = dir / "run";
  REQUIRE(run_cli("davis-kahan --out " + out.string()) == 0);
  CHECK(slurp(out / "dk_ratio.csv").find("r,eps_tom,ratio") != std::string::npos);

  const auto out2 = dir / "run2";
  REQUIRE(run_cli("complexity --out " + out2.string()) == 0);
  CHECK(slurp(out2 / "complexity_grid.csv").find("m_qsp") != std::string::npos);

  const auto out3 = dir / "run3";
  REQUIRE(run_cli("resources --n 10 --eps 0.1 --out " + out3.string()) == 0);
  const std::string res = slurp(out3 / "resources.txt");
  CHECK(res.find("pixel_qubits=100") != std::string::npos);
  CHECK(res.find("memory_qubits=36") != std::string::npos);
}

TEST_CASE("selftest exits cleanly") {
  CHECK(run_cli("selftest --seed 11") == 0);
}

TEST_CASE("environment variables override flags") {
  const auto dir = temp_dir("env");
  write_file(dir / "filter.cfg", kFilterCfg);
  const auto out1 = dir / "a";
  const auto out2 = dir / "b";
  REQUIRE(run_cli("filter --config " + (dir / "filter.cfg").string() + " --seed 5 --out " +
                  out1.string()) == 0);
  const std::string cmd = "QPSIM_SEED=5 " + std::string(QPSIM_CLI_PATH) +
                          " filter --config " + (dir / "filter.cfg").string() + " --out " +
                          out2.string() + " > /dev/null 2>&1";
  REQUIRE(std::system(cmd.c_str()) == 0);
  CHECK(slurp(out1 / "filter_sweep.csv") == slurp(out2 / "filter_sweep.csv"));
}
