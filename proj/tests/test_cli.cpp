#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "hbrnorm_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string at(const std::string& name) { return (workdir() / name).string(); }

struct CliRun {
  int code;
  std::string err;
};

CliRun run(const std::string& args) {
  const std::string err = at("stderr.txt");
  const std::string cmd = std::string(HBRNORM_CLI) + " " + args + " > " + at("stdout.txt") + " 2> " + err;
  const int status = std::system(cmd.c_str());
  std::ifstream in(err);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

const std::string sampler = " --warmup 300 --draws 300 --seed 4";

void simulate_once() {
  static bool done = false;
  if (done) return;
  write_text(at("gen.cfg"), "sites = 3\nsite_sizes = 40\nunits = 2\n");
  ASSERT_EQ(run("simulate --config " + at("gen.cfg") + " --seed 7 --out " + at("d.csv")).code, 0);
  done = true;
}

}  // namespace

TEST(Cli, SimulateFitScorePipeline) {
  simulate_once();
  ASSERT_EQ(run("fit --data " + at("d.csv") + " --strategy hbr --out " + at("m.model") + sampler).code, 0);
  ASSERT_EQ(run("score --model " + at("m.model") + " --data " + at("d.csv") + " --out " + at("z.csv")).code, 0);
  std::ifstream in(at("z.csv"));
  std::string header;
  std::getline(in, header);
  EXPECT_NE(header.find("roi01_z"), std::string::npos);
  EXPECT_NE(header.find("roi02_z"), std::string::npos);
  EXPECT_NE(header.find("roi02_p"), std::string::npos);
}

TEST(Cli, ReproducibleBitForBit) {
  simulate_once();
  ASSERT_EQ(run("simulate --config " + at("gen.cfg") + " --seed 7 --out " + at("d2.csv")).code, 0);
  EXPECT_EQ(slurp(at("d.csv")), slurp(at("d2.csv")));
  ASSERT_EQ(run("fit --data " + at("d.csv") + " --strategy nopool --out " + at("a.model") + sampler).code, 0);
  ASSERT_EQ(run("--jobs 2 fit --data " + at("d.csv") + " --strategy nopool --out " + at("b.model") + sampler).code, 0);
  EXPECT_EQ(slurp(at("a.model")), slurp(at("b.model")));
}

TEST(Cli, DegenerateBatchExitCode) {
  write_text(at("one.csv"),
             "subject_id,site,age,roi\n1,A,20,1.0\n2,A,30,1.2\n3,A,40,1.1\n4,B,50,0.9\n");
  write_text(at("one.schema"), "covariates = age\nresponses = roi\nbatches = site\n");
  const CliRun r = run("fit --data " + at("one.csv") + " --schema " + at("one.schema") + " --strategy nopool --out " +
                    at("x.model") + sampler);
  EXPECT_EQ(r.code, 5);
  // the seed line may precede it; the error itself is one line
  std::istringstream lines(r.err);
  std::vector<std::string> errors;
  for (std::string line; std::getline(lines, line);) {
    if (line.rfind("error: ", 0) == 0) errors.push_back(line);
  }
  ASSERT_EQ(errors.size(), 1u) << r.err;
  EXPECT_EQ(errors[0].rfind("error: E_DEGENERATE_DATA: ", 0), 0u);
  EXPECT_FALSE(fs::exists(at("x.model")));
}

TEST(Cli, ErrorClasses) {
  EXPECT_EQ(run("fit --data").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("fit --data " + at("nope.csv") + " --schema " + at("nope.schema") + " --out x").code, 3);
  write_text(at("bad.cfg"), "sites = 3\nflavour = mint\n");
  const CliRun bad = run("simulate --config " + at("bad.cfg") + " --seed 1 --out " + at("bad.csv"));
  EXPECT_EQ(bad.code, 4);
  EXPECT_EQ(bad.err.rfind("error: E_SCHEMA: ", 0), 0u);
}

TEST(Cli, UnknownBatchAtPrediction) {
  simulate_once();
  ASSERT_EQ(run("fit --data " + at("d.csv") + " --strategy nopool --out " + at("n.model") + sampler).code, 0);
  write_text(at("new.csv"), "subject_id,site,age,roi01,roi02\n1,elsewhere,30,2.0,2.0\n");
  const CliRun r = run("predict --model " + at("n.model") + " --data " + at("new.csv") + " --out " + at("p.csv"));
  EXPECT_EQ(r.code, 8);
  EXPECT_NE(r.err.find("E_UNKNOWN_BATCH"), std::string::npos);
}

TEST(Cli, HarmonizeRefusesNewSitesWithHint) {
  simulate_once();
  ASSERT_EQ(run("harmonize --data " + at("d.csv") + " --design age --out " + at("h.csv") + " --model-out " +
                at("h.combat"))
                .code,
            0);
  write_text(at("new.schema"), "covariates = age\nresponses = roi01,roi02\nbatches = site\n");
  write_text(at("new2.csv"), "subject_id,site,age,roi01,roi02\n1,elsewhere,30,2.0,2.0\n2,elsewhere,50,2.1,2.0\n");
  const CliRun r = run("harmonize --data " + at("new2.csv") + " --schema " + at("new.schema") + " --model " +
                    at("h.combat") + " --out " + at("h2.csv"));
  EXPECT_EQ(r.code, 8);
  EXPECT_NE(r.err.find("recalibrate"), std::string::npos);
}
