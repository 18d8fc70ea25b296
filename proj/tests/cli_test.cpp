#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string err;
};

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "kronvb_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

CliRun cli(const std::string &args) {
  const fs::path err = work_dir() / "stderr.txt";
  const std::string cmd = "cd '" + work_dir().string() + "' && '" KRONVB_CLI "' " + args +
                          " > /dev/null 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  std::ifstream f(err);
  std::stringstream ss;
  ss << f.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path &p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write(const fs::path &p, const std::string &text) { std::ofstream(p) << text; }

}  // namespace

TEST(Cli, SimulateWritesDeterministicFiles) {
  ASSERT_EQ(cli("simulate --dims 5,6,4,3 --n 50 --seed 1 --out sim").code, 0);
  const fs::path d = work_dir() / "sim";
  EXPECT_EQ(fs::file_size(d / "data.bin"), 360u * 50u * 8u);
  EXPECT_TRUE(fs::exists(d / "data.bin.json"));
  EXPECT_TRUE(fs::exists(d / "truth.json"));
  ASSERT_EQ(cli("simulate --dims 5,6,4,3 --n 50 --seed 1 --out sim_again").code, 0);
  EXPECT_EQ(slurp(d / "data.bin"), slurp(work_dir() / "sim_again" / "data.bin"));
  EXPECT_EQ(slurp(d / "truth.json"), slurp(work_dir() / "sim_again" / "truth.json"));
  ASSERT_EQ(cli("simulate --dims 5,6,4,3 --n 50 --seed 2 --out sim_other").code, 0);
  EXPECT_NE(slurp(d / "data.bin"), slurp(work_dir() / "sim_other" / "data.bin"));
}

TEST(Cli, SimulateRejectsBadArguments) {
  EXPECT_EQ(cli("simulate --n 0 --out x").code, 1);
  EXPECT_EQ(cli("simulate --dims 3,0 --out x").code, 1);
  EXPECT_EQ(cli("simulate --dims a,b --out x").code, 1);
  EXPECT_EQ(cli("simulate --bogus").code, 1);
  EXPECT_EQ(cli("").code, 1);
}

TEST(Cli, FitEchoReproducesOutputsByteForByte) {
  ASSERT_EQ(cli("simulate --dims 2,3,2 --n 30 --seed 3 --out fsim").code, 0);
  ASSERT_EQ(cli("fit --data fsim/data.bin --eps 10^-4.4 --iters 300 --out fit1").code, 0);
  ASSERT_EQ(cli("fit --config fit1/config.json --out fit2").code, 0);
  for (const char *f : {"trace.csv", "state.json", "config.json"})
    EXPECT_EQ(slurp(work_dir() / "fit1" / f), slurp(work_dir() / "fit2" / f)) << f;
  const std::string echo = slurp(work_dir() / "fit1" / "config.json");
  EXPECT_NE(echo.find("\"eps\": -4.4"), std::string::npos) << echo;
}

TEST(Cli, FitFailureModes) {
  ASSERT_EQ(cli("simulate --dims 2,2 --n 10 --out fsim2").code, 0);
  const CliRun naive = cli("fit --data fsim2/data.bin --metric pullback-naive --out x");
  EXPECT_EQ(naive.code, 1);
  EXPECT_NE(naive.err.find("degenerate"), std::string::npos) << naive.err;
  EXPECT_EQ(cli("fit --data missing.bin --out x").code, 3);
  EXPECT_EQ(cli("fit --out x").code, 1);
  EXPECT_EQ(cli("fit --data fsim2/data.bin --method other --out x").code, 1);
  EXPECT_EQ(cli("fit --data fsim2/data.bin --eps fast --out x").code, 1);
  const CliRun diverged =
      cli("fit --data fsim2/data.bin --eps 2 --no-backtracking --iters 50 --out xdiv");
  EXPECT_EQ(diverged.code, 2);
  EXPECT_NE(diverged.err.find("iteration,elbo"), std::string::npos) << diverged.err;
}

TEST(Cli, MeanFieldWarnsAboutNormalizationFlags) {
  ASSERT_EQ(cli("simulate --dims 2,2 --n 10 --out fsim3").code, 0);
  const CliRun r = cli("fit --data fsim3/data.bin --method meanfield --no-orthogonalize --eps -6 "
                    "--iters 10 --out mf");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("warning"), std::string::npos) << r.err;
  EXPECT_EQ(cli("fit --data fsim3/data.bin --method meanfield --eps -6 --iters 10 --out mf2").err, "");
}

TEST(Cli, SampleWritesSummary) {
  ASSERT_EQ(cli("simulate --dims 2,3 --n 20 --out ssim").code, 0);
  ASSERT_EQ(cli("fit --data ssim/data.bin --iters 100 --out sfit").code, 0);
  ASSERT_EQ(cli("sample --state sfit/state.json --truth ssim/truth.json --K 4 --m 5 --out smp").code, 0);
  const std::string s = slurp(work_dir() / "smp" / "summary.json");
  EXPECT_NE(s.find("\"separable\": false"), std::string::npos);
  EXPECT_NE(s.find("\"mahalanobis\""), std::string::npos);
  EXPECT_EQ(cli("sample --state ssim/truth.json --out x").code, 1);
  EXPECT_EQ(cli("sample --state sfit/state.json --K 0 --out x").code, 1);
}

TEST(Cli, ExperimentMisspecEmitsTwoByFourTable) {
  ASSERT_EQ(cli("experiment --experiment misspec-table --dims 2,2 --n 20 --iters 100 --out ms").code, 0);
  const std::string t = slurp(work_dir() / "ms" / "counts.csv");
  std::istringstream lines(t);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "method,r=0,r=1,r=3,r=5");
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 4) << line;
  }
  EXPECT_EQ(rows, 2);
  ASSERT_EQ(cli("experiment --config ms/config.json --out ms2").code, 0);
  EXPECT_EQ(t, slurp(work_dir() / "ms2" / "counts.csv"));
  EXPECT_EQ(slurp(work_dir() / "ms" / "summary.json"), slurp(work_dir() / "ms2" / "summary.json"));
}

TEST(Cli, ExperimentValidation) {
  write(work_dir() / "empty_grid.json",
        R"({"command": "experiment", "experiment": "convergence-sweep", "joint_grid": []})");
  EXPECT_EQ(cli("experiment --config empty_grid.json --out x").code, 1);
  EXPECT_EQ(cli("validate-config --config empty_grid.json").code, 1);
  EXPECT_EQ(cli("experiment --experiment nope --out x").code, 1);
  EXPECT_EQ(cli("experiment --experiment real-data-fit --out x").code, 1);
  EXPECT_EQ(cli("experiment --experiment convergence-sweep --K 3 --out x").code, 1);
}

TEST(Cli, ValidateConfig) {
  write(work_dir() / "ok.json", R"({"command": "simulate", "dims": [2, 2], "n": 5})");
  EXPECT_EQ(cli("validate-config --config ok.json").code, 0);
  write(work_dir() / "unknown.json", R"({"command": "fit", "data": "x", "bogus": 1})");
  EXPECT_EQ(cli("validate-config --config unknown.json").code, 1);
  write(work_dir() / "broken.json", "{");
  EXPECT_EQ(cli("validate-config --config broken.json").code, 1);
  EXPECT_EQ(cli("validate-config --config absent.json").code, 3);
  write(work_dir() / "mismatch.json", R"({"command": "fit", "data": "x"})");
  EXPECT_EQ(cli("simulate --config mismatch.json --out x").code, 1);
}

TEST(Cli, RealDataFitFromCsv) {
  std::ofstream csv(work_dir() / "slab.csv");
  // 6 variables x 8 observations.
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 8; ++c) csv << (c ? "," : "") << std::sin(1.0 + r * 8 + c * c);
    csv << "\n";
  }
  csv.close();
  const CliRun r = cli("experiment --experiment real-data-fit --data slab.csv --iters 200 --out rd");
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string eig = slurp(work_dir() / "rd" / "eigen.csv");
  EXPECT_EQ(eig.rfind("mode,name,component,eigenvalue,vector1,vector2\n", 0), 0u);
  EXPECT_TRUE(fs::exists(work_dir() / "rd" / "state.json"));
}
