#include <qdep/cli.hpp>

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <sstream>

using namespace qdep;
namespace fs = std::filesystem;

namespace {

struct Outcome
{
  int code = 0;
  std::string out;
  std::string err;
};

Outcome
invoke(std::vector<std::string> args)
{
  args.insert(args.begin(), "qdep");
  std::vector<const char*> argv;
  for (const auto& a : args)
    argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return { code, out.str(), err.str() };
}

class CliTest : public ::testing::Test
{
protected:
  void SetUp() override
  {
    dir_ = fs::temp_directory_path() /
           ("qdep_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& content)
  {
    const auto p = dir_ / name;
    io::write_atomic(p, content);
    return p.string();
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

std::string
independent_csv(std::size_t n, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::string s = "a,b\n";
  for (std::size_t i = 0; i < n; ++i)
    s += io::format_double(normal(rng)) + "," + io::format_double(normal(rng)) + "\n";
  return s;
}

} // namespace

TEST_F(CliTest, HappyPathParse)
{
  const auto input = write("d.csv", independent_csv(50, 1));
  std::ostringstream out;
  int code = -1;
  bool print = false;
  const std::vector<std::string> args{ "qdep",   "test", "--input", input, "--kernel", "gaussian",
                                       "--h",    "1.0",  "--alpha", "0.05" };
  std::vector<const char*> argv;
  for (const auto& a : args)
    argv.push_back(a.c_str());
  const auto c = cli::parse_config(int(argv.size()), argv.data(), out, code, print);
  ASSERT_TRUE(c.has_value());
  EXPECT_EQ(c->command, "test");
  EXPECT_EQ(c->input, input);
  EXPECT_EQ(c->kernel, "gaussian");
  EXPECT_EQ(c->h, 1.0);
  EXPECT_EQ(c->alpha, 0.05);
  EXPECT_FALSE(print);
}

TEST_F(CliTest, NegativeBandwidthIsAUsageError)
{
  const auto r = invoke({ "simulate", "--h", "-1" });
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("h must be positive"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("--h"), std::string::npos);
}

TEST_F(CliTest, OtherUsageErrorsNameTheFlag)
{
  EXPECT_NE(invoke({ "simulate", "--alpha", "1.5" }).err.find("--alpha"), std::string::npos);
  EXPECT_NE(invoke({ "simulate", "--kernel", "box" }).err.find("--kernel"), std::string::npos);
  EXPECT_NE(invoke({ "test", "--input", path("missing.csv") }).err.find("--input"),
            std::string::npos);
  EXPECT_NE(invoke({ "simulate", "--scenario", "gaussian:rho=2" }).err.find("--scenario"),
            std::string::npos);
  EXPECT_EQ(invoke({}).code, 1);
  EXPECT_EQ(invoke({ "frobnicate" }).code, 1);
}

TEST_F(CliTest, FlagsOverrideConfigFile)
{
  const auto cfg = write("c.json", R"({"h": 1.0, "alpha": 0.01})");
  const auto r = invoke({ "--config", cfg, "--print-config", "simulate", "--h", "2" });
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["h"], 2.0);
  EXPECT_EQ(j["alpha"], 0.01);
  EXPECT_EQ(j["command"], "simulate");
}

TEST_F(CliTest, UnknownConfigKeyIsRejected)
{
  const auto cfg = write("c.json", R"({"bandwidth": 1.0})");
  const auto r = invoke({ "--config", cfg, "simulate" });
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("bandwidth"), std::string::npos) << r.err;
}

TEST_F(CliTest, PrintConfigEchoesDefaults)
{
  const auto r = invoke({ "--print-config", "sweep" });
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["kernel"], "gaussian");
  EXPECT_EQ(j["h_grid"].size(), 5u);
}

TEST_F(CliTest, CopiedColumnIsRejectedWithExitThree)
{
  std::string csv = "x,y\n";
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  for (int i = 0; i < 200; ++i) {
    const auto v = io::format_double(normal(rng));
    csv += v + "," + v + "\n";
  }
  const auto r = invoke({ "test", "--input", write("copy.csv", csv) });
  EXPECT_EQ(r.code, 3) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j["reject"].get<bool>());
  for (const char* key : { "q_hat", "term1", "term2", "term3", "q_alpha", "p_value", "seed",
                           "config_hash", "version" })
    EXPECT_TRUE(j.contains(key)) << key;
  for (const char* key : { "e1", "v1", "gamma", "beta" })
    EXPECT_TRUE(j["null"].contains(key)) << key;
}

TEST_F(CliTest, IndependentColumnsUsuallyPass)
{
  int passes = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = invoke({ "test", "--input", write("ind.csv", independent_csv(500, seed)) });
    ASSERT_NE(r.code, 1) << r.err;
    passes += r.code == 0 ? 1 : 0;
  }
  EXPECT_GE(passes, 16);
}

TEST_F(CliTest, BadCellCitesItsLine)
{
  std::string csv = "a,b\n";
  for (int line = 2; line <= 10; ++line)
    csv += line == 7 ? "1.0,oops\n" : std::to_string(line) + ",1.5\n";
  const auto r = invoke({ "test", "--input", write("bad.csv", csv) });
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find(":7:"), std::string::npos) << r.err;
}

TEST_F(CliTest, NonFiniteCellIsRejected)
{
  const auto r = invoke({ "test", "--input", write("inf.csv", "a,b\n1,2\n3,inf\n4,5\n") });
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find(":3:"), std::string::npos) << r.err;
}

TEST_F(CliTest, ZeroVarianceNamesTheColumn)
{
  const auto r = invoke({ "test", "--input", write("const.csv", "a,flat\n1,2\n3,2\n4,2\n") });
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("flat"), std::string::npos) << r.err;
}

TEST_F(CliTest, PowerBoundWithAlternative)
{
  const auto input = write("d.csv", independent_csv(200, 3));
  const auto r = invoke({ "test", "--input", input, "--alt-q", "0.5", "--power-bound", "chebyshev" });
  ASSERT_NE(r.code, 1) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  ASSERT_TRUE(j["power_lower_bound"].is_number());
  EXPECT_GE(j["power_lower_bound"].get<double>(), 0.0);
  EXPECT_LE(j["power_lower_bound"].get<double>(), 1.0);
  EXPECT_EQ(invoke({ "test", "--input", input, "--alt-q", "x" }).code, 1);
}

TEST_F(CliTest, PermutationCalibration)
{
  const auto input = write("d.csv", independent_csv(100, 8));
  const auto r = invoke(
    { "test", "--input", input, "--calibration", "permutation", "--permutations", "99", "--seed", "3" });
  ASSERT_NE(r.code, 1) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["calibration"], "permutation");
  EXPECT_GT(j["p_value"].get<double>(), 0.0);
}

TEST_F(CliTest, SimulateIsDeterministicAndFeedsTest)
{
  const auto a = path("a.csv");
  const auto b = path("b.csv");
  const std::vector<std::string> base{ "simulate", "--scenario", "gaussian:rho=0.5",
                                       "--n",      "1000",       "--seed", "7" };
  auto with_output = [&](const std::string& p) {
    auto args = base;
    args.insert(args.end(), { "--output", p });
    return invoke(args);
  };
  ASSERT_EQ(with_output(a).code, 0);
  ASSERT_EQ(with_output(b).code, 0);
  EXPECT_EQ(io::read_file(a), io::read_file(b));
  const auto table = io::read_csv(a);
  EXPECT_EQ(table.sample.n(), 1000u);
  EXPECT_EQ(table.header, (std::vector<std::string>{ "y1", "y2" }));
  const auto r = invoke({ "test", "--input", a });
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST_F(CliTest, SimulateDiscreteScenarioFromJson)
{
  const auto joint = write("j.json", R"({"atoms": [[0, 0], [1, 1]], "probs": [0.5, 0.5]})");
  const auto r = invoke({ "simulate", "--scenario", "discrete:" + joint, "--n", "20" });
  ASSERT_EQ(r.code, 0) << r.err;
  const auto t = io::parse_csv(r.out);
  for (std::size_t i = 0; i < t.sample.n(); ++i)
    EXPECT_EQ(t.sample(i, 0), t.sample(i, 1));
}

TEST_F(CliTest, OracleCheckPasses)
{
  const auto r = invoke({ "oracle-check", "--instances", "30" });
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j["passed"].get<bool>());
  EXPECT_LT(j["max_abs_fast_minus_naive"].get<double>(), 1e-12);
  EXPECT_LT(j["max_abs_fast_minus_cf"].get<double>(), 1e-5);
}

TEST_F(CliTest, SweepCsvHasOneRowPerCell)
{
  const auto out = path("sweep.csv");
  const auto r = invoke({ "sweep", "--h-grid", "0.5,1,2", "--n-grid", "30,60", "--replicates",
                          "100", "--format", "csv", "--output", out, "--workers", "2" });
  ASSERT_EQ(r.code, 0) << r.err;
  const auto text = io::read_file(out);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 7);
  EXPECT_EQ(text.rfind("h,n,replicates,mean_q,var_q", 0), 0u);
  EXPECT_FALSE(fs::exists(dir_ / ".sweep.csv.tmp"));
  EXPECT_EQ(invoke({ "sweep", "--replicates", "10" }).code, 1);
}

TEST_F(CliTest, SweepJsonIsWorkerInvariant)
{
  const std::vector<std::string> base{ "sweep", "--h-grid", "1,2", "--n-grid", "40",
                                       "--replicates", "100", "--seed", "9" };
  auto run_with = [&](const char* workers) {
    auto args = base;
    args.insert(args.end(), { "--workers", workers });
    auto j = nlohmann::json::parse(invoke(args).out);
    for (auto& cell : j["cells"])
      cell.erase("seconds_per_replicate");
    j["plan"].erase("workers");
    j.erase("config_hash");
    return j;
  };
  EXPECT_EQ(run_with("1"), run_with("4"));
}

TEST_F(CliTest, NullLawWritesQqPairs)
{
  const auto qq = path("qq.csv");
  const auto r = invoke({ "nulllaw", "--scenario", "gaussian:rho=0", "--n", "50", "--replicates",
                          "200", "--qq-output", qq });
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_GT(j["ks"].get<double>(), 0.0);
  const auto table = io::read_csv(qq);
  EXPECT_EQ(table.sample.n(), 99u);
  EXPECT_EQ(invoke({ "nulllaw", "--scenario", "copy:noise=1" }).code, 1);
}

TEST(CliBinary, ExitStatusReachesTheShell)
{
  const auto dir = fs::temp_directory_path() / "qdep_cli_binary";
  fs::create_directories(dir);
  const auto csv = dir / "copy.csv";
  std::string text = "x,y\n";
  for (int i = 0; i < 100; ++i)
    text += std::to_string(i % 17) + "," + std::to_string(i % 17) + "\n";
  io::write_atomic(csv, text);
  const std::string cmd =
    std::string(QDEP_CLI_PATH) + " test --input " + csv.string() + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 3);
  const int version = std::system((std::string(QDEP_CLI_PATH) + " --version > /dev/null").c_str());
  EXPECT_EQ(WEXITSTATUS(version), 0);
  fs::remove_all(dir);
}
