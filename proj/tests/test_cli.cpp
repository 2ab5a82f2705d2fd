#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "shiftlab/datagen.hpp"
#include "shiftlab/mea.hpp"
#include "shiftlab/nn.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

Result run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + SHIFTLAB_CLI + std::string(" ") + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return {};
  Result r;
  char buf[4096];
  std::size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, got);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Drops the trailing wall-clock column of every CSV line.
std::string without_ms(const std::string& csv) {
  std::stringstream in(csv), out;
  std::string line;
  while (std::getline(in, line)) out << line.substr(0, line.rfind(',')) << '\n';
  return out.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("shiftlab-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream cfg(path("fast.ini"));
    cfg << "[source]\niterations = 200\nhidden_dim = 16\n"
           "[uda]\niterations = 200\nhidden_dim = 16\n"
           "[sfda]\niterations = 60\n"
           "[bench]\nseeds = 2\ndomain_size = 200\noverfitting_target_size = 400\n";
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Generates a rotated two-moons domain and trains a source model on it.
  void make_party(const std::string& name, double rotation, int seed) {
    ASSERT_EQ(run("gen two-moons --n 300 --rotation " + std::to_string(rotation) + " --seed " + std::to_string(seed) +
                  " --domain " + name + " --out " + path(name + ".txt"))
                  .code,
              0);
    const auto r = run("train-source --config " + path("fast.ini") + " --data " + path(name + ".txt") + " --out " +
                       path(name + ".model") + " --seed " + std::to_string(seed));
    ASSERT_EQ(r.code, 0) << r.output;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, GenWritesHeaderAndDigest) {
  const auto r = run("gen two-moons --n 1000 --rotation 30 --seed 7 --out " + path("t.csv"));
  ASSERT_EQ(r.code, 0) << r.output;
  ASSERT_TRUE(fs::exists(path("t.csv")));
  EXPECT_EQ(slurp(path("t.csv")).rfind("#shiftlab-dataset v1 n=1000 d=2 K=2 domain=two-moons\n", 0), 0u);
  EXPECT_NE(r.output.find(path("t.csv") + " sha256="), std::string::npos);
}

TEST_F(Cli, GenRejectsRotationOutOfRange) {
  const auto r = run("gen two-moons --n 100 --rotation 400 --out " + path("t.csv"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("[0, 360)"), std::string::npos) << r.output;
}

TEST_F(Cli, GenIsDeterministicAndHonoursSeed) {
  const auto a = run("gen two-moons --n 200 --seed 7 --out " + path("a.csv"));
  const auto b = run("gen two-moons --n 200 --seed 7 --out " + path("a.csv"));
  const auto c = run("gen two-moons --n 200 --seed 8 --out " + path("a.csv"));
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.output, b.output);
  EXPECT_NE(a.output, c.output);
}

TEST_F(Cli, GenBlobsSplitAndAdversarial) {
  ASSERT_EQ(run("gen blobs --n 300 --classes 3 --dim 4 --priors 0.2,0.3,0.5 --out " + path("b.txt")).code, 0);
  ASSERT_EQ(run("gen split --in " + path("b.txt") + " --fraction 0.9 --train-out " + path("tr.txt") +
                " --test-out " + path("te.txt"))
                .code,
            0);
  EXPECT_EQ(shiftlab::load_dataset(path("tr.txt")).size(), 270u);
  EXPECT_EQ(shiftlab::load_dataset(path("te.txt")).size(), 30u);
  ASSERT_EQ(run("gen adversarial --in " + path("b.txt") + " --domain adv --out " + path("adv.txt")).code, 0);
  const auto base = shiftlab::load_dataset(path("b.txt")), adv = shiftlab::load_dataset(path("adv.txt"));
  EXPECT_EQ(adv.domain_id, "adv");
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NE((*adv.labels)[i], (*base.labels)[i]);
  EXPECT_EQ(run("gen blobs --priors 0.5,0.6 --out " + path("x.txt")).code, 2);
}

TEST_F(Cli, MsfdaWithOneUniformModelBehavesAsSfda) {
  make_party("src", 0, 1);
  ASSERT_EQ(run("gen two-moons --n 300 --rotation 30 --seed 2 --out " + path("tgt.txt")).code, 0);
  const std::string common = " --config " + path("fast.ini") + " --target " + path("tgt.txt") + " --model " +
                             path("src.model") + " --seed 5 --eval " + path("tgt.txt");
  const auto a = run("adapt --paradigm sfda" + common + " --out " + path("sfda"));
  const auto b = run("adapt --paradigm msfda --weights uniform" + common + " --out " + path("msfda"));
  ASSERT_EQ(a.code, 0) << a.output;
  ASSERT_EQ(b.code, 0) << b.output;
  EXPECT_EQ(slurp(path("sfda/model.txt")), slurp(path("msfda/model.txt")));
  EXPECT_EQ(without_ms(slurp(path("sfda/trajectory.csv"))), without_ms(slurp(path("msfda/trajectory.csv"))));
}

TEST_F(Cli, UdaWithoutSourceIsUsageError) {
  ASSERT_EQ(run("gen two-moons --n 100 --out " + path("tgt.txt")).code, 0);
  const auto r = run("adapt --paradigm uda --target " + path("tgt.txt") + " --out " + path("o"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("requires source data"), std::string::npos) << r.output;
}

TEST_F(Cli, SourceFreeParadigmRefusesSourceData) {
  make_party("src", 0, 1);
  const auto r = run("adapt --paradigm sfda --source " + path("src.txt") + " --target " + path("src.txt") +
                     " --model " + path("src.model") + " --out " + path("o"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("source-free paradigm accepts no source data"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(path("o")));
}

TEST_F(Cli, UdaWritesFullTrajectory) {
  make_party("src", 0, 1);
  ASSERT_EQ(run("gen two-moons --n 300 --rotation 30 --seed 2 --out " + path("tgt.txt")).code, 0);
  const auto r = run("adapt --paradigm uda --config " + path("fast.ini") + " --source " + path("src.txt") +
                     " --target " + path("tgt.txt") + " --eval " + path("tgt.txt") + " --out " + path("uda"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto csv = slurp(path("uda/trajectory.csv"));
  EXPECT_EQ(csv.rfind("iteration,loss_total,loss_ce,loss_mmd,loss_im,acc_target,ms\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 201);
}

TEST_F(Cli, EstimateWithoutVisibleDataFallsBack) {
  make_party("a", 0, 1);
  make_party("b", 20, 2);
  ASSERT_EQ(run("gen two-moons --n 300 --rotation 30 --seed 3 --out " + path("tgt.txt")).code, 0);
  {
    std::ofstream m(path("models.manifest"));
    m << "#shiftlab-manifest v1\nsource model=a.model\nsource model=b.model\n";
  }
  const auto r = run("estimate --manifest " + path("models.manifest") + " --target " + path("tgt.txt") + " --out " +
                     path("w.txt"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto est = shiftlab::load_weights(path("w.txt"));
  EXPECT_TRUE(est.fallback);
  EXPECT_EQ(est.w_final, est.w_t);
  EXPECT_TRUE(fs::exists(path("w.txt.provenance")));
  const auto v = run("verify " + path("w.txt"));
  EXPECT_EQ(v.code, 0) << v.output;
}

TEST_F(Cli, EstimateWithVisibleDataAndZeroLambda) {
  make_party("a", 0, 1);
  make_party("b", 20, 2);
  ASSERT_EQ(run("gen two-moons --n 300 --rotation 30 --seed 3 --out " + path("tgt.txt")).code, 0);
  {
    std::ofstream m(path("fusion.manifest"));
    m << "#shiftlab-manifest v1\nsource model=a.model data=a.txt\nsource model=b.model data=b.txt\n";
  }
  const std::string base = "estimate --manifest " + path("fusion.manifest") + " --target " + path("tgt.txt");
  ASSERT_EQ(run(base + " --out " + path("w1.txt")).code, 0);
  const auto est = shiftlab::load_weights(path("w1.txt"));
  EXPECT_FALSE(est.fallback);
  EXPECT_EQ(run("verify " + path("w1.txt")).code, 0);
  const auto prov = slurp(path("w1.txt.provenance"));
  EXPECT_NE(prov.find("model_domain=a proxy=b"), std::string::npos);
  EXPECT_EQ(prov.find("model_domain=a proxy=a"), std::string::npos);

  ASSERT_EQ(run(base + " --lambda 0 --out " + path("w0.txt")).code, 0);
  const auto zero = shiftlab::load_weights(path("w0.txt"));
  EXPECT_EQ(zero.w_final, zero.w_t);

  const auto mea = run("adapt --paradigm msfda --weights mea --config " + path("fast.ini") + " --manifest " +
                       path("fusion.manifest") + " --target " + path("tgt.txt") + " --out " + path("mea"));
  ASSERT_EQ(mea.code, 0) << mea.output;
  EXPECT_TRUE(fs::exists(path("mea/weights.txt")));
  EXPECT_TRUE(fs::exists(path("mea/model_1.txt")));
}

TEST_F(Cli, ManifestMismatchIsUsageError) {
  make_party("a", 0, 1);
  make_party("b", 20, 2);
  {
    std::ofstream m(path("bad.manifest"));
    m << "#shiftlab-manifest v1\nsource model=a.model data=b.txt\nsource model=b.model data=b.txt\n";
  }
  const auto r =
      run("estimate --manifest " + path("bad.manifest") + " --target " + path("a.txt") + " --out " + path("w.txt"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("manifest mismatch"), std::string::npos) << r.output;
}

TEST_F(Cli, VerifyFlagsBrokenWeightFile) {
  {
    std::ofstream w(path("w.txt"));
    w << "#shiftlab-weights v1\nlambda=1\nfallback=1\nw_s=absent\nw_t=0.5,0.6\nw_raw=0.5,0.6\nw_final=0.5,0.6\n";
  }
  const auto r = run("verify " + path("w.txt"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("FAIL"), std::string::npos);
  EXPECT_EQ(run("verify " + path("missing.txt")).code, 2);
}

TEST_F(Cli, VerifyChecksTrajectories) {
  make_party("src", 0, 1);
  const auto ok = run("verify " + path("src.model.csv"));
  EXPECT_EQ(ok.code, 0) << ok.output;
  EXPECT_NE(ok.output.find("(trajectory)"), std::string::npos);
  auto csv = slurp(path("src.model.csv"));
  csv.insert(csv.find('\n', csv.find('\n') + 1), ",7");
  {
    std::ofstream os(path("broken.csv"));
    os << csv;
  }
  const auto bad = run("verify " + path("broken.csv"));
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.output.find("row 1: expected 7 fields"), std::string::npos) << bad.output;
}

TEST_F(Cli, TrainingSummaryReportsConvergence) {
  ASSERT_EQ(run("gen blobs --n 300 --separation 8 --out " + path("easy.txt")).code, 0);
  const auto r = run("train-source --data " + path("easy.txt") + " --out " + path("easy.model"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("final_accuracy=1 converged=1 iterations_to_convergence="), std::string::npos) << r.output;
}

TEST_F(Cli, BenchOverfittingReportsPerSeedGaps) {
  const auto r = run("bench overfitting --seeds 5 --config " + path("fast.ini") + " --out " + path("bench"));
  ASSERT_TRUE(r.code == 0 || r.code == 1) << r.output;
  std::size_t gaps = 0;
  for (std::size_t pos = 0; (pos = r.output.find(" gap=", pos)) != std::string::npos; ++pos) ++gaps;
  EXPECT_EQ(gaps, 5u) << r.output;
  EXPECT_NE(r.output.find("rule name=train_test_gap_small passed="), std::string::npos);
  EXPECT_EQ(r.code == 0, r.output.find("\npass=1\n") != std::string::npos);
  EXPECT_TRUE(fs::exists(path("bench/overfitting/suite.txt")));
}

TEST_F(Cli, BenchUnknownSuiteListsValidOnes) {
  const auto r = run("bench speed");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("convergence, negative-transfer, overfitting, fusion"), std::string::npos) << r.output;
}

TEST_F(Cli, BenchConvergenceIsReproducible) {
  const std::string args = "bench convergence --config " + path("fast.ini") + " --out ";
  const auto a = run(args + path("a"));
  const auto b = run(args + path("b"), "SHIFTLAB_THREADS=2");
  ASSERT_TRUE(a.code == 0 || a.code == 1) << a.output;
  EXPECT_EQ(a.code, b.code);
  const fs::path ra = path("a/convergence"), rb = path("b/convergence");
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(ra)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto other = rb / fs::relative(e.path(), ra);
    if (e.path().extension() == ".csv" && e.path().parent_path().filename() == "trajectories")
      EXPECT_EQ(without_ms(slurp(e.path())), without_ms(slurp(other))) << e.path();
    else
      EXPECT_EQ(slurp(e.path()), slurp(other)) << e.path();
  }
  EXPECT_EQ(files, 4u + 3u);
}

TEST_F(Cli, NumericFailureExitsThree) {
  auto model = shiftlab::init_model(2, 4, 2, 1, 0);
  model.classifier.weight.setConstant(1e308);
  model.classifier.weight(0, 1) = -1e308;
  model.extractor[0].weight.setConstant(50.0);
  shiftlab::save_model(model, path("huge.model"));
  ASSERT_EQ(run("gen two-moons --n 100 --out " + path("tgt.txt")).code, 0);
  const auto r = run("adapt --paradigm sfda --model " + path("huge.model") + " --target " + path("tgt.txt") +
                     " --out " + path("o"));
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("numeric error"), std::string::npos);
}

TEST_F(Cli, HelpListsDefaultsAndExitCodes) {
  const auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* needle : {"lambda_uda = 5", "beta_pseudo = 0", "pseudo_refresh = 50", "[mea]", "lambda = 1",
                             "iterations = 2000", "SHIFTLAB_THREADS", "3 numeric"})
    EXPECT_NE(r.output.find(needle), std::string::npos) << needle;
}

TEST_F(Cli, DefaultsOutputIsAValidConfig) {
  const auto r = run("defaults --seed 4");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.output.rfind("; base seed = 4\n", 0), 0u);
  {
    std::ofstream os(path("defaults.ini"));
    os << r.output;
  }
  ASSERT_EQ(run("gen two-moons --n 100 --out " + path("d.txt")).code, 0);
  const auto t = run("train-source --config " + path("defaults.ini") + " --data " + path("d.txt") + " --out " +
                     path("m.model"));
  EXPECT_EQ(t.code, 0) << t.output;
}

TEST_F(Cli, BadConfigAndUnknownFlagsAreUsageErrors) {
  {
    std::ofstream os(path("bad.ini"));
    os << "[sfda]\nlearnin_rate = 0.1\n";
  }
  ASSERT_EQ(run("gen two-moons --n 100 --out " + path("d.txt")).code, 0);
  const auto r = run("train-source --config " + path("bad.ini") + " --data " + path("d.txt") + " --out " +
                     path("m.model"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("sfda.learnin_rate"), std::string::npos) << r.output;
  EXPECT_EQ(run("gen two-moons --frobnicate --out " + path("x.txt")).code, 2);
  EXPECT_EQ(run("bench convergence", "SHIFTLAB_THREADS=abc").code, 2);
}
