#include "entrep/capacity.hpp"
#include "entrep/experiments.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;
using namespace entrep;

namespace {

struct Result {
  int code = -1;
  std::string err;
};

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("entrep_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Result run(const std::string& args, const fs::path& dir, const std::string& env = {}) {
  const auto err = dir / "stderr.txt";
  const std::string cmd = env + " " + ENTREP_CLI + " " + args + " > " + (dir / "stdout.txt").string() + " 2> " +
                          err.string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream is(err);
  std::ostringstream ss;
  ss << is.rdbuf();
  r.err = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

} // namespace

TEST_CASE("cli: validate on the free field") {
  const auto dir = scratch("validate");
  const auto r = run("validate -o " + (dir / "out").string(), dir);
  CHECK(r.code == 0);
  const auto text = slurp(dir / "out" / "validate.csv");
  CHECK(text.rfind("# command = validate\n# model.d = 3\n# model.q = 1\n", 0) == 0);
  CHECK(text.find("a,1,") != std::string::npos);
  CHECK(text.find("b,1,") != std::string::npos);
  CHECK(fs::exists(dir / "out" / "runs.jsonl"));
}

TEST_CASE("cli: failures exit 1 with the module") {
  const auto dir = scratch("fail");
  auto r = run("green --grid.eps=0 -o " + dir.string(), dir);
  CHECK(r.code == 1);
  CHECK(r.err.find("zero mode singular") != std::string::npos);
  CHECK(r.err.find("[spectral]") != std::string::npos);

  r = run("validate --model.q=-1,1 -o " + dir.string(), dir);
  CHECK(r.code == 1);
  CHECK(r.err.find("assumption (b)") != std::string::npos);

  r = run("validate --model.d=2 -o " + dir.string(), dir);
  CHECK(r.code == 1);
  CHECK(r.err.find("assumption (a)") != std::string::npos);

  r = run("validate --model.colour=red -o " + dir.string(), dir);
  CHECK(r.code == 1);
  CHECK(r.err.find("unknown key") != std::string::npos);

  std::ofstream(dir / "bad.ini") << "[model]\nd = 3\n[plots]\nwidth = 3\n";
  r = run("validate -c " + (dir / "bad.ini").string() + " -o " + dir.string(), dir);
  CHECK(r.code == 1);
  CHECK(r.err.find("bad.ini:3: unknown section 'plots'") != std::string::npos);

  r = run("height --run.seed=abc -o " + dir.string(), dir);
  CHECK(r.code == 1);
}

TEST_CASE("cli: config file, flag precedence and environment") {
  const auto dir = scratch("precedence");
  std::ofstream(dir / "c.ini") << "# comment\n[grid]\nL = 6\neps = 0.5\n[check_c]\neps = 0.25\n";
  const auto out = dir / "env_out";
  const auto r = run("check-c -c " + (dir / "c.ini").string() + " --grid.L 8", dir,
                     "ENTREP_OUTPUT_DIR=" + out.string());
  REQUIRE(r.code == 0);
  const auto text = slurp(out / "check_c.csv");
  CHECK(text.find("# grid.L = 8\n") != std::string::npos);
  CHECK(text.find("# check_c.eps = 0.25\n") != std::string::npos);
  CHECK(text.find("\n0.25,") != std::string::npos);
}

TEST_CASE("cli: capacity CSV equals the library output") {
  const auto dir = scratch("capacity");
  const auto r = run("capacity --capacity.steps=2,4 --capacity.radii=2,3 --capacity.kernel=4 -o " + dir.string(), dir);
  REQUIRE(r.code == 0);

  CapacityStudySpec spec;
  spec.inverse_steps = {2, 4};
  spec.radii = {2.0, 3.0};
  spec.kernel_resolutions = {4};
  const auto st = capacity_study(spec);
  const std::string header = "command = capacity\n"
                             "model.d = 3\n"
                             "model.q = 1\n"
                             "capacity.eta = 0\n"
                             "capacity.fit = reciprocal\n"
                             "capacity.half_width = 1\n"
                             "capacity.kernel = 4\n"
                             "capacity.max_iterations = 200000\n"
                             "capacity.near_field = 0\n"
                             "capacity.radii = 2,3\n"
                             "capacity.steps = 2,4\n"
                             "capacity.tolerance = 1e-8\n"
                             "code_version = " +
                             code_version() + "\n";
  std::ostringstream expected;
  write_capacity_csv(expected, st, header);
  CHECK(slurp(dir / "capacity.csv") == expected.str());
  std::ostringstream samples;
  write_capacity_samples_csv(samples, st, header);
  CHECK(slurp(dir / "capacity_samples.csv") == samples.str());
}

TEST_CASE("cli: unconverged runs exit 2") {
  const auto dir = scratch("unconverged");
  const auto r = run("capacity --capacity.steps=2 --capacity.radii=2 --capacity.kernel=4 --capacity.eta=0.4774648 "
                     "--capacity.max_iterations=3 -o " + dir.string(),
                     dir);
  CHECK(r.code == 2);
  CHECK(fs::exists(dir / "capacity.csv"));
}

TEST_CASE("cli: seeds determine outputs; rerun regenerates files") {
  const auto dir = scratch("seed");
  const std::string args = "repulsion --repulsion.Ns=0,1 --repulsion.samples=500 --repulsion.capacity=2.8 --grid.L=8 ";
  REQUIRE(run(args + "--seed 7 --workers 1 -o " + (dir / "a").string(), dir).code == 0);
  REQUIRE(run(args + "--seed 7 --workers 3 -o " + (dir / "b").string(), dir).code == 0);
  REQUIRE(run(args + "--seed 8 -o " + (dir / "c").string(), dir).code == 0);
  const auto a = slurp(dir / "a" / "rate.csv");
  CHECK(a == slurp(dir / "b" / "rate.csv"));
  CHECK(a != slurp(dir / "c" / "rate.csv"));
  CHECK(a.find("# run.seed = 7\n") != std::string::npos);

  REQUIRE(run("rerun " + (dir / "a" / "rate.csv").string() + " -o " + (dir / "r").string(), dir).code == 0);
  CHECK(slurp(dir / "r" / "rate.csv") == a);
  CHECK(slurp(dir / "r" / "two_site.csv") == slurp(dir / "a" / "two_site.csv"));

  const auto runs = load_runs((dir / "a" / "runs.jsonl").string());
  REQUIRE(runs.size() == 1);
  CHECK(runs[0].kind == "repulsion");
  CHECK(runs[0].seed == 7);
  CHECK(runs[0].config["repulsion.samples"] == "500");
}

TEST_CASE("cli: svg plots on request") {
  const auto dir = scratch("svg");
  REQUIRE(run("height --height.Ns=2 --height.burn_in=20 --height.kept=20 --height.thinning=1 --svg -o " +
                  dir.string(),
              dir)
              .code != 1);
  const auto svg = slurp(dir / "height.svg");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("polyline") != std::string::npos);
}
