#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "bem/cli.hpp"
#include "bem/dataio.hpp"
#include "bem/trainer.hpp"

using namespace bem;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("bem_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string p(const std::string& name) const { return (dir_ / name).string(); }

  Outcome run(const std::string& args) const {
    const std::string cmd = std::string("'") + BEM_CLI_PATH + "' " + args + " >'" + p("_out") + "' 2>'" +
                            p("_err") + "'";
    const int status = std::system(cmd.c_str());
    Outcome r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(p("_out"));
    r.err = slurp(p("_err"));
    return r;
  }

  static std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
  }

  // A small dataset that trains in well under a second.
  void make_data(const std::string& sub = "data") const {
    const Outcome r = run("synth --out " + p(sub) +
                      " --n 200 --d-w 4 --d-z 6 --clusters 4 --true-hidden 16 --seed 5");
    ASSERT_EQ(r.code, 0) << r.err;
  }

  std::string small_hyper() const { return " --nh 16 --nB 50 --epochs 2 --normalize false"; }

  fs::path dir_;
};

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_F(CliTest, SynthWritesFilesDeterministically) {
  make_data("a");
  make_data("b");
  for (const char* f : {"kg.tsv", "bg.tsv", "labels.tsv", "truth.tsv", "manifest.txt"})
    EXPECT_TRUE(fs::exists(dir_ / "a" / f)) << f;
  for (const char* f : {"kg.tsv", "bg.tsv", "labels.tsv", "truth.tsv"})
    EXPECT_EQ(slurp(p(std::string("a/") + f)), slurp(p(std::string("b/") + f))) << f;
  EXPECT_EQ(load_table(p("a/kg.tsv")).size(), 200);
  EXPECT_EQ(load_table(p("a/bg.tsv")).dim(), 6);
}

TEST_F(CliTest, ExitCodes) {
  make_data();
  EXPECT_EQ(run("train --kg " + p("data/kg.tsv") + " --out " + p("m.bin")).code, kExitUsage);
  EXPECT_EQ(run("eval --table " + p("data/bg.tsv") + " --task nonsense").code, kExitUsage);
  EXPECT_EQ(run("frobnicate").code, kExitUsage);
  const Outcome again = run("synth --out " + p("data") + " --n 50");
  EXPECT_EQ(again.code, kExitData);
  EXPECT_FALSE(again.err.empty());
  EXPECT_EQ(run("train --kg " + p("nope.tsv") + " --bg " + p("data/bg.tsv") + " --out " + p("m.bin")).code,
            kExitData);
  std::ofstream(p("bad.tsv")) << "x\t1\tnan\n";
  EXPECT_EQ(run("eval --table " + p("bad.tsv") + " --task histogram").code, kExitData);
  EXPECT_EQ(run("--version").code, kExitOk);
}

TEST_F(CliTest, ShortTrainingStillTakesAStep) {
  make_data();
  const Outcome r = run("train --kg " + p("data/kg.tsv") + " --bg " + p("data/bg.tsv") + " --out " + p("m.bin") +
                    " --nh 8 --nB 50 --epochs 0.01");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("for 1 steps"), std::string::npos) << r.out;
  const std::string steps = slurp(p("m.bin.steps.tsv"));
  EXPECT_EQ(line_count(steps), 2u);
  EXPECT_TRUE(fs::exists(p("m.bin.manifest.txt")));
  const ModelBundle b = load_model(p("m.bin"));
  EXPECT_EQ(b.config.hidden_dim, 8);
}

TEST_F(CliTest, IndependentModeMatchesIdentityEdge) {
  make_data();
  const std::string base = "train --kg " + p("data/kg.tsv") + " --bg " + p("data/bg.tsv") + small_hyper();
  ASSERT_EQ(run(base + " --mode i --out " + p("i.bin")).code, 0);
  ASSERT_EQ(run(base + " --mode p --edge identity --out " + p("p.bin")).code, 0);
  std::istringstream a(slurp(p("i.bin.steps.tsv"))), b(slurp(p("p.bin.steps.tsv")));
  std::string la, lb;
  std::getline(a, la);
  std::getline(b, lb);
  int rows = 0;
  while (std::getline(a, la) && std::getline(b, lb)) {
    double xa[4], xb[4];
    std::istringstream sa(la), sb(lb);
    for (int k = 0; k < 4; ++k) sa >> xa[k], sb >> xb[k];
    for (int k = 1; k < 4; ++k) EXPECT_NEAR(xa[k], xb[k], 1e-9 * std::max(1.0, std::abs(xa[k])));
    ++rows;
  }
  EXPECT_EQ(rows, 8);
}

TEST_F(CliTest, RefineMatchesTheLibrary) {
  make_data();
  ASSERT_EQ(run("train --kg " + p("data/kg.tsv") + " --bg " + p("data/bg.tsv") + " --out " + p("m.bin") +
                small_hyper())
                .code,
            0);
  const Outcome r = run("refine --kg " + p("data/kg.tsv") + " --bg " + p("data/bg.tsv") + " --model " + p("m.bin") +
                    " --out " + p("ref"));
  ASSERT_EQ(r.code, 0) << r.err;
  const EmbeddingTable kg_hat = load_table(p("ref/kg_refined.tsv")), bg_hat = load_table(p("ref/bg_refined.tsv"));
  EXPECT_EQ(kg_hat.size(), 200);
  const ModelBundle b = load_model(p("m.bin"));
  const RefinedTables lib = refine(load_table(p("data/kg.tsv")), load_table(p("data/bg.tsv")), b.f, b.h, false);
  EXPECT_EQ(kg_hat, lib.kg);
  EXPECT_EQ(bg_hat, lib.bg);
}

TEST_F(CliTest, ZeroPosteriorLeavesKgUnchanged) {
  make_data();
  TrainConfig cfg;
  cfg.hidden_dim = 4;
  cfg.normalize_inputs = false;
  Rng rng(1);
  TrainedModel m = initial_model(4, 6, cfg, rng);
  m.h = m.h.zeros_like();
  save_model(p("zero.bin"), m.f, m.h, cfg);
  ASSERT_EQ(run("refine --kg " + p("data/kg.tsv") + " --bg " + p("data/bg.tsv") + " --model " + p("zero.bin") +
                " --out " + p("ref"))
                .code,
            0);
  EXPECT_EQ(load_table(p("ref/kg_refined.tsv")), load_table(p("data/kg.tsv")));
}

TEST_F(CliTest, EvalTasks) {
  {
    const Outcome r = run("synth --out " + p("clean") + " --n 400 --noise-scale 0 --seed 3");
    ASSERT_EQ(r.code, 0) << r.err;
  }
  const Outcome c = run("eval --table " + p("clean/truth.tsv") + " --labels " + p("clean/labels.tsv") +
                    " --task classify --json " + p("c.json"));
  ASSERT_EQ(c.code, 0) << c.err;
  const auto cj = nlohmann::json::parse(slurp(p("c.json")));
  EXPECT_GE(cj["accuracy"].get<double>(), 0.95);

  const Outcome h = run("eval --table " + p("clean/bg.tsv") + " --task histogram --pairs 5000 --json " +
                    p("h.json") + " --out " + p("h.txt"));
  ASSERT_EQ(h.code, 0) << h.err;
  const auto hj = nlohmann::json::parse(slurp(p("h.json")));
  double total = 0;
  for (double m : hj["mass"]) total += m;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_EQ(hj["mass"].size(), 20u);
  EXPECT_EQ(slurp(p("h.txt")), h.out);
  EXPECT_TRUE(fs::exists(p("h.txt.manifest.txt")));

  const Outcome cr = run("eval --table " + p("clean/kg.tsv") + " --labels " + p("clean/labels.tsv") +
                     " --task cluster-ratio");
  ASSERT_EQ(cr.code, 0) << cr.err;
  EXPECT_NE(cr.out.find("ratio: "), std::string::npos);

  const Outcome pj = run("eval --table " + p("clean/bg.tsv") + " --table2 " + p("clean/kg.tsv") + " --labels " +
                     p("clean/labels.tsv") + " --task classify --project-dim 8 --n-proj 2 --splits 2");
  ASSERT_EQ(pj.code, 0) << pj.err;
  EXPECT_NE(pj.out.find("dim: 48"), std::string::npos);
  EXPECT_NE(pj.out.find("runs: 4"), std::string::npos);

  std::ofstream(p("users.tsv")) << "u1\te001,e002\tc0,c1\n";
  const Outcome rc = run("eval --table " + p("clean/bg.tsv") + " --labels " + p("clean/labels.tsv") +
                     " --task recall --k 399 --users " + p("users.tsv"));
  ASSERT_EQ(rc.code, 0) << rc.err;
  EXPECT_NE(rc.out.find("recall: 1.0000"), std::string::npos) << rc.out;
}

TEST_F(CliTest, SweepProducesOneRowPerValue) {
  make_data();
  const std::string base = "sweep --kg " + p("data/kg.tsv") + " --bg " + p("data/bg.tsv") + " --truth " +
                           p("data/truth.tsv") + " --param lambda1 --values 0.1,1,5" + small_hyper();
  const Outcome r = run(base + " --out " + p("s.tsv"));
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(slurp(p("s.tsv")));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "param\tvalue\toracle-error\tfinal_elbo\tchecksum");
  std::set<std::string> sums;
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    sums.insert(line.substr(line.rfind('\t') + 1));
  }
  EXPECT_EQ(rows, 3);
  EXPECT_EQ(sums.size(), 3u);

  const Outcome par = run(base + " --parallel --jobs 3 --out " + p("s2.tsv"));
  ASSERT_EQ(par.code, 0) << par.err;
  EXPECT_EQ(slurp(p("s2.tsv")), slurp(p("s.tsv")));

  EXPECT_EQ(run("sweep --kg " + p("data/kg.tsv") + " --bg " + p("data/bg.tsv") + " --truth " +
                p("data/truth.tsv") + " --param lambda1 --values 0.1,abc")
                .code,
            kExitUsage);
}

TEST_F(CliTest, ReplayReproducesOutputs) {
  make_data();
  ASSERT_EQ(run("train --kg " + p("data/kg.tsv") + " --bg " + p("data/bg.tsv") + " --out " + p("m.bin") +
                small_hyper())
                .code,
            0);
  const std::string before = slurp(p("m.bin"));
  const Outcome r = run("replay " + p("m.bin.manifest.txt"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("identical"), std::string::npos);
  EXPECT_EQ(slurp(p("m.bin")), before);

  const Outcome s = run("replay " + p("data/manifest.txt"));
  EXPECT_EQ(s.code, 0) << s.err;

  // A tampered record is reported as a mismatch.
  std::string manifest = slurp(p("m.bin.manifest.txt"));
  const auto pos = manifest.find("output.model.crc32 = ");
  ASSERT_NE(pos, std::string::npos);
  manifest.replace(pos + 21, 8, "00000000");
  std::ofstream(p("tampered.txt")) << manifest;
  EXPECT_EQ(run("replay " + p("tampered.txt")).code, kExitData);
}

TEST_F(CliTest, FlagsOverrideConfigFileOverDefaults) {
  make_data();
  std::ofstream(p("cfg.txt")) << "# comment\nlambda1 = 5\nhidden_dim = 12\nbatch_size = 40\n";
  ASSERT_EQ(run("train --kg " + p("data/kg.tsv") + " --bg " + p("data/bg.tsv") + " --out " + p("m.bin") +
                " --config " + p("cfg.txt") + " --nh 10 --epochs 1")
                .code,
            0);
  const ModelBundle b = load_model(p("m.bin"));
  EXPECT_EQ(b.config.lambda1, 5.0);
  EXPECT_EQ(b.config.hidden_dim, 10);
  EXPECT_EQ(b.config.batch_size, 40);
  EXPECT_EQ(b.config.lambda2, 1.0);
  EXPECT_EQ(b.f.hidden_dim(), 10);
}

TEST(CliInProcess, RunCliReportsUsageErrors) {
  std::ostringstream out, err;
  EXPECT_EQ(run_cli({"train"}, out, err), kExitUsage);
  EXPECT_FALSE(err.str().empty());
  std::ostringstream out2, err2;
  EXPECT_EQ(run_cli({"--help"}, out2, err2), kExitOk);
  EXPECT_NE(out2.str().find("synth"), std::string::npos);
  EXPECT_EQ(exit_code(ErrorKind::Numerical), kExitNumerical);
  EXPECT_EQ(exit_code(ErrorKind::Data), kExitData);
}

TEST(Manifest, FormatParseRoundTrip) {
  Manifest m;
  m.set("command", "train");
  m.set("arg.0", "train");
  m.set("arg.1", "--kg");
  m.set("arg.2", "a b.tsv");
  m.set("output.model", "m.bin");
  m.set("output.model.crc32", "deadbeef");
  const Manifest back = parse_manifest(format_manifest(m));
  EXPECT_EQ(back.args(), (std::vector<std::string>{"train", "--kg", "a b.tsv"}));
  ASSERT_EQ(back.outputs().size(), 1u);
  EXPECT_EQ(back.outputs()[0].crc32, "deadbeef");
  EXPECT_EQ(*back.get("command"), "train");
}
