#include "helpers.hpp"
#include "oracles.hpp"

#include "schema.hpp"

#include "linfdt/container.hpp"
#include "linfdt/ou.hpp"

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

using namespace linfdt;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    std::ofstream(dir_ / "syn.json") << R"({"d": 9, "n_out": 2, "n_samples": 2000, "seed": 4,
      "covariance_eigenvalues": [0.5, 0.7, 0.9, 1, 1.2, 1.4, 1.6, 1.8, 2],
      "teacher_scale": 0.1, "label_noise_std": 1.0, "continuous_labels": true})";
  }

  Result run(const std::string& args) const {
    const fs::path log = dir_ / "out.txt";
    const std::string cmd = "cd '" + dir_.path().string() + "' && LINFDT_CACHE=cache '" LINFDT_CLI "' " + args + " > '" +
                            log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, std::string(std::istreambuf_iterator<char>(in), {})};
  }

  json read(const std::string& rel) const {
    std::ifstream in(dir_ / rel);
    return json::parse(in);
  }

  fs::path path(const std::string& rel) const { return dir_ / rel; }

  static constexpr const char* kRun = "run --dataset syn --epsilon 0.05 --batch-size 50 --samples 400 --threshold 0.99 ";

  TempDir dir_;
};

}  // namespace

TEST_F(Cli, IngestIsIdempotent) {
  ASSERT_EQ(run("ingest --synthetic syn.json").code, 0);
  const std::string first = sha256_file(path("cache/datasets/syn.lfdt"));
  ASSERT_EQ(run("ingest --synthetic syn.json").code, 0);
  EXPECT_EQ(sha256_file(path("cache/datasets/syn.lfdt")), first);
  EXPECT_EQ(read("cache/datasets/syn.json")["dim"], 9);
}

TEST_F(Cli, SeedDeterminesTrajectory) {
  ASSERT_EQ(run("ingest --synthetic syn.json").code, 0);
  ASSERT_EQ(run(std::string(kRun) + "--seed 7 --store snapshots --out a").code, 0);
  ASSERT_EQ(run(std::string(kRun) + "--seed 7 --store snapshots --out b").code, 0);
  ASSERT_EQ(run(std::string(kRun) + "--seed 8 --store snapshots --out c").code, 0);
  EXPECT_EQ(sha256_file(path("a/trajectory.lfdt")), sha256_file(path("b/trajectory.lfdt")));
  EXPECT_NE(sha256_file(path("a/trajectory.lfdt")), sha256_file(path("c/trajectory.lfdt")));
  const json m = read("a/manifest.json");
  EXPECT_EQ(m["seed"], 7);
  EXPECT_EQ(m["artifacts"][0]["sha256"], sha256_file(path("a/trajectory.lfdt")));
  EXPECT_GE(m["result"]["final_cos_theta"].get<double>(), 0.9);
}

TEST_F(Cli, ModesAnalyzeAndReport) {
  ASSERT_EQ(run("ingest --synthetic syn.json").code, 0);
  ASSERT_EQ(run(std::string(kRun) + "--mode full-xx --out full").code, 0);
  ASSERT_EQ(run(std::string(kRun) + "--mode mini-both --out mini --refined 0,0 0,1").code, 0);
  ASSERT_EQ(run("analyze --run full").code, 0);
  const Result a = run("analyze --run mini --refined 0,0 0,1");
  ASSERT_EQ(a.code, 0) << a.out;
  const json b = read("mini/analysis/report.json");
  ASSERT_EQ(b["refined"]["pairs"].size(), 2u);
  EXPECT_EQ(b["refined"]["pairs"][1]["k"], 1);
  EXPECT_EQ(b["mode"], "mini-both");
  for (const auto& art : b["artifacts"]) EXPECT_TRUE(fs::is_regular_file(path("mini/analysis/" + art["path"].get<std::string>())));
  std::ifstream csv(path("mini/analysis/spectrum.csv"));
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "m,k_x,amplitude_lhs,amplitude_d");

  const Result r = run("report full mini --json");
  ASSERT_EQ(r.code, 0) << r.out;
  const json rows = json::parse(r.out);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0]["mode"], "full-xx");
  EXPECT_TRUE(rows[1].contains("sigma_ww_rel_diff_vs_first"));
}

TEST_F(Cli, AnalyzeIsAllOrNothing) {
  ASSERT_EQ(run("ingest --synthetic syn.json").code, 0);
  ASSERT_EQ(run(std::string(kRun) + "--out m").code, 0);
  EXPECT_EQ(run("analyze --run m --refined 1,1").code, 1);
  EXPECT_FALSE(fs::exists(path("m/analysis")));
  for (const auto& e : fs::directory_iterator(path("m"))) EXPECT_EQ(e.path().string().find(".tmp-"), std::string::npos);
  EXPECT_EQ(run("analyze --run m --refined x").code, 2);
}

TEST_F(Cli, FingerprintMismatchIsRejected) {
  ASSERT_EQ(run("ingest --synthetic syn.json").code, 0);
  ASSERT_EQ(run(std::string(kRun) + "--out m").code, 0);
  json m = read("m/manifest.json");
  m["dataset"]["fingerprint"] = std::string(64, '0');
  std::ofstream(path("m/manifest.json")) << m.dump();
  const Result r = run("analyze --run m");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("FingerprintMismatch"), std::string::npos);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("run --dataset syn").code, 2);
  EXPECT_EQ(run("run --dataset missing --out x").code, 1);
  ASSERT_EQ(run("ingest --synthetic syn.json").code, 0);
  const Result nc = run("run --dataset syn --out nc --threshold 1.0 --max-steps 300");
  EXPECT_EQ(nc.code, 3);
  EXPECT_NE(nc.out.find("NoConvergence"), std::string::npos);
  EXPECT_EQ(run("ingest --synthetic syn.json --crop 2").code, 2);
}

TEST_F(Cli, OracleCommand) {
  const Result s = run("oracle --scalar 2 3 --json");
  ASSERT_EQ(s.code, 0) << s.out;
  EXPECT_NEAR(json::parse(s.out)["sigma"][0][0].get<double>(), 1.5, 1e-15);

  std::mt19937_64 rng(5);
  save_ou_system(path("sys.lfdt"), {oracle::random_stable(5, rng), oracle::random_spd(5, rng)});
  const Result r = run("oracle sys.lfdt --json --out res.lfdt");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_LT(json::parse(r.out)["residual"].get<double>(), 1e-10);
  EXPECT_TRUE(fs::is_regular_file(path("res.lfdt")));

  const Result bad = run("oracle --scalar -1 1");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("UnstableDrift"), std::string::npos);
}

TEST_F(Cli, CnnCommand) {
  std::ofstream(dir_ / "img.json") << R"({"d": 16, "n_out": 2, "n_samples": 1000, "seed": 2,
      "teacher_scale": 0.2, "label_noise_std": 0.5, "continuous_labels": true})";
  ASSERT_EQ(run("ingest --synthetic img.json").code, 0);
  const Result r = run("cnn --dataset img --out c --c-side 2 --steps 300 --epsilon 0.05 --batch-size 50");
  ASSERT_EQ(r.code, 0) << r.out;
  const json m = read("c/manifest.json");
  EXPECT_EQ(m["command"], "cnn");
  EXPECT_EQ(m["result"]["steps"], 300);
  EXPECT_TRUE(fs::is_regular_file(path("c/cnn_state.lfdt")));
  EXPECT_EQ(run("cnn --dataset img --out d --steps 10 --tolerance 1e-3").code, 1);
}

TEST(Schema, ValidatorCatchesViolations) {
  const json schema = json::parse(R"({"type": "object", "required": ["a"], "properties": {
      "a": {"type": "integer", "minimum": 0},
      "b": {"enum": ["x", "y"]},
      "c": {"type": "array", "maxItems": 2, "items": {"type": "number"}}}})");
  EXPECT_NO_THROW(cli::validate_schema(json{{"a", 1}, {"b", "x"}, {"c", {1.5}}}, schema, "doc"));
  EXPECT_CODE(cli::validate_schema(json{{"b", "x"}}, schema, "doc"), ErrorCode::SchemaViolation);
  EXPECT_CODE(cli::validate_schema(json{{"a", -1}}, schema, "doc"), ErrorCode::SchemaViolation);
  EXPECT_CODE(cli::validate_schema(json{{"a", 1}, {"b", "z"}}, schema, "doc"), ErrorCode::SchemaViolation);
  EXPECT_CODE(cli::validate_schema(json{{"a", 1}, {"c", {1, 2, 3}}}, schema, "doc"), ErrorCode::SchemaViolation);
  EXPECT_CODE(cli::validate_schema(json{{"a", 1}, {"c", {"s"}}}, schema, "doc"), ErrorCode::SchemaViolation);
  EXPECT_EQ(cli::run_manifest_schema()["properties"]["schema"]["const"], "linfdt/run-manifest/1");
  EXPECT_EQ(cli::report_bundle_schema()["properties"]["schema"]["const"], "linfdt/report-bundle/1");
}
