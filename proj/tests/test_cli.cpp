#include <gtest/gtest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sbir/run.hpp"

namespace fs = std::filesystem;
using namespace sbir;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("sbir_cli_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int count_lines(const fs::path& p) {
  std::ifstream is(p);
  std::string line;
  int n = 0;
  while (std::getline(is, line))
    if (!line.empty()) ++n;
  return n;
}

struct Result {
  int code;
  std::string out, err;
};

Result run(const std::string& args) {
  static int k = 0;
  const auto o = scratch("stdout" + std::to_string(k)), e = scratch("stderr" + std::to_string(k++));
  const std::string cmd = std::string(SBIR_CLI_PATH) + " " + args + " >" + o.string() + " 2>" + e.string();
  const int status = std::system(cmd.c_str());
  Result r{WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(o), slurp(e)};
  fs::remove(o);
  fs::remove(e);
  return r;
}

// Small architecture for 16-pixel images.
fs::path tiny_config_file() {
  const auto p = scratch("tiny.cfg");
  std::ofstream(p) << "# tiny end-to-end configuration\n"
                      "image_size = 16\nraster_pad = 1\n"
                      "n_labeled = 12\nn_unlabeled = 12\nn_test = 8\n"
                      "gen_widths = 4,8\nret_widths = 4,8\ndisc_widths = 4,8\n"
                      "latent_dim = 4\nhidden_size = 8\nattention_dim = 4\nmixtures = 3\nmax_length = 40\n"
                      "embed_dim = 6\nbatch_gen = 4\nbatch_ret = 4\nbatch_rl = 2\n"
                      "k_r = 2\nk_g = 2\npretrain_gen_epochs = 1\npretrain_ret_epochs = 2\n"
                      "certainty_pairs = 8\nlog_wall_time = false\n";
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, ParsesKeysCommentsAndRejectsUnknown) {
  ExperimentConfig c = desk_defaults();
  std::istringstream good("# comment\n\n lambda_kd = 0.25 \nk_r=3\ngen_widths = 8, 16\niw = false\n");
  apply_text(c, good, "good.cfg");
  EXPECT_EQ(c.train.lambda_kd, 0.25);
  EXPECT_EQ(c.train.k_r, 3);
  EXPECT_EQ(c.train.gen.encoder_widths, (std::vector<int>{8, 16}));
  EXPECT_FALSE(c.train.iw);

  std::istringstream unknown("k_r = 2\nlambda_typo = 1\n");
  try {
    apply_text(c, unknown, "bad.cfg");
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.cfg:2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("lambda_typo"), std::string::npos);
  }
  std::istringstream bad_value("k_r = five\n");
  EXPECT_THROW(apply_text(c, bad_value, "v.cfg"), ConfigError);
  std::istringstream no_eq("k_r 5\n");
  EXPECT_THROW(apply_text(c, no_eq, "e.cfg"), ConfigError);
}

TEST(Config, DumpRoundTripsAndEveryKeyIsDocumented) {
  ExperimentConfig c = desk_defaults();
  c.train.lambda_g = 3.5;
  c.train.kd_mode = KdMode::absolute;
  const std::string dump = dump_config(c);
  ExperimentConfig d = desk_defaults();
  std::istringstream is(dump);
  apply_text(d, is, "dump");
  EXPECT_EQ(dump_config(d), dump);
  for (const auto& k : config_keys()) EXPECT_FALSE(k.doc.empty()) << k.name;
}

TEST(Config, EnvironmentOverridesAndValidation) {
  ExperimentConfig c = desk_defaults();
  std::string a = "SBIR_LAMBDA_KD=0.5", b = "SBIR_CYCLES=7", other = "PATH=/bin";
  char* env[] = {a.data(), b.data(), other.data(), nullptr};
  apply_env(c, env);
  EXPECT_EQ(c.train.lambda_kd, 0.5);
  EXPECT_EQ(c.train.cycles, 7);
  std::string bad = "SBIR_NOT_A_KEY=1";
  char* env2[] = {bad.data(), nullptr};
  EXPECT_THROW(apply_env(c, env2), ConfigError);

  ExperimentConfig v = desk_defaults();
  EXPECT_NO_THROW(validate(v));
  v.train.k_r = 0;
  EXPECT_THROW(validate(v), ConfigError);
  ExperimentConfig w = desk_defaults();
  EXPECT_THROW(set_key(w, "shape_family", "hexagon", "test"), ConfigError);
}

// ---------------------------------------------------------------------------
// Exit codes

TEST(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("train --no-such-flag").code, 2);
  const auto d = scratch("badfamily");
  auto r = run("gen-data --out " + d.string() + " --set shape_family=hexagon");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("hexagon"), std::string::npos);
  EXPECT_EQ(run("gen-data --out " + d.string() + " --set no_such_key=1").code, 2);
  EXPECT_EQ(run("--version").code, 0);
  EXPECT_EQ(run("--list-keys").code, 0);
}

TEST(Cli, MissingPrerequisitesExitWithOne) {
  const auto d = scratch("empty_run");
  auto r = run("pretrain --data " + (d / "nodata").string() + " --out " + d.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("gen-data"), std::string::npos) << r.err;
  fs::create_directories(d);
  std::ofstream(d / "metrics.ndjson").close();
  r = run("plot --out " + d.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("no data"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(d / "plots" / "retrieval_curves.ppm"));
  fs::remove_all(d);
}

// ---------------------------------------------------------------------------
// gen-data

TEST(Cli, GenDataCountsAndDeterminism) {
  const auto a = scratch("corpus_a"), b = scratch("corpus_b");
  auto r = run("gen-data --out " + a.string() + " --seed 4 --set n_labeled=200 --set n_unlabeled=2000");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(a / "train" / "manifest.tsv"), 2200);
  EXPECT_EQ(count_lines(a / "train" / "sketches.ndjson"), 200);
  EXPECT_NE(r.out.find("offset std"), std::string::npos);
  EXPECT_TRUE(fs::exists(a / "config.txt"));
  EXPECT_TRUE(fs::exists(a / "version.txt"));

  // Output directory exists without --force.
  EXPECT_EQ(run("gen-data --out " + a.string() + " --seed 4").code, 1);

  ASSERT_EQ(run("gen-data --out " + b.string() + " --seed 4 --set n_labeled=200 --set n_unlabeled=0").code, 0);
  EXPECT_EQ(slurp(a / "train" / "sketches.ndjson"), slurp(b / "train" / "sketches.ndjson"));
  ASSERT_EQ(run("gen-data --force --out " + b.string() + " --seed 5 --set n_labeled=200 --set n_unlabeled=0").code,
            0);
  EXPECT_NE(slurp(a / "train" / "sketches.ndjson"), slurp(b / "train" / "sketches.ndjson"));
  fs::remove_all(a);
  fs::remove_all(b);
}

// ---------------------------------------------------------------------------
// End to end on a tiny configuration

TEST(Cli, PretrainTrainResumeEvalPlot) {
  const auto cfg = tiny_config_file();
  const auto data = scratch("e2e_data"), one = scratch("e2e_one"), two = scratch("e2e_two");
  const std::string common = " --config " + cfg.string() + " --data " + data.string();
  ASSERT_EQ(run("gen-data --config " + cfg.string() + " --out " + data.string()).code, 0);

  // Training needs pre-trained checkpoints.
  auto r = run("train" + common + " --out " + one.string() + " --cycles 1");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("pretrain"), std::string::npos) << r.err;

  for (const auto& d : {one, two}) ASSERT_EQ(run("pretrain" + common + " --out " + d.string()).code, 0);
  EXPECT_EQ(slurp(one / "pretrain" / "teacher.ckpt"), slurp(two / "pretrain" / "teacher.ckpt"));
  EXPECT_EQ(run("pretrain" + common + " --out " + one.string()).code, 1);  // exists, no --force

  // Teacher evaluation reproduces the pre-training metrics exactly.
  ASSERT_EQ(run("eval" + common + " --out " + one.string() + " --checkpoint teacher").code, 0);
  const auto pre = nlohmann::json::parse(slurp(one / "pretrain" / "eval.json"));
  const auto ev = nlohmann::json::parse(slurp(one / "eval" / "teacher" / "metrics.json"));
  EXPECT_EQ(pre.at("retrieval"), ev.at("retrieval"));
  EXPECT_TRUE(fs::exists(one / "eval" / "teacher" / "certainty.csv"));

  // 3 + 2 cycles with resume equals 5 cycles in one go.
  ASSERT_EQ(run("train" + common + " --out " + one.string() + " --cycles 3").code, 0);
  EXPECT_EQ(run("train" + common + " --out " + one.string() + " --cycles 2").code, 1);  // needs --resume
  ASSERT_EQ(run("train" + common + " --out " + one.string() + " --cycles 2 --resume").code, 0);
  ASSERT_EQ(run("train" + common + " --out " + two.string() + " --cycles 5").code, 0);
  EXPECT_EQ(latest_cycle(one / "train"), 5);
  for (const char* part : {"gen", "ret", "disc"})
    EXPECT_EQ(slurp(one / "train" / part / "step-5.ckpt"), slurp(two / "train" / part / "step-5.ckpt")) << part;
  EXPECT_EQ(slurp(one / "metrics.ndjson"), slurp(two / "metrics.ndjson"));
  EXPECT_NE(slurp(one / "config.txt").find("cycles = 2"), std::string::npos);
  EXPECT_NE(slurp(one / "version.txt").find("sbir "), std::string::npos);

  ASSERT_EQ(run("eval" + common + " --out " + one.string()).code, 0);
  EXPECT_TRUE(fs::exists(one / "eval" / "cycle-5" / "metrics.json"));
  EXPECT_EQ(run("eval" + common + " --out " + one.string() + " --checkpoint 99").code, 1);
  EXPECT_EQ(run("eval" + common + " --out " + one.string() + " --checkpoint soon").code, 2);

  r = run("plot" + common + " --out " + one.string());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"pretrain_curves.ppm", "retrieval_curves.ppm", "critic_curves.ppm", "generator_curves.ppm",
                        "certainty_teacher.ppm", "certainty_cycle-5.ppm"})
    EXPECT_TRUE(fs::exists(one / "plots" / f)) << f;
  const auto img = read_ppm(one / "plots" / "retrieval_curves.ppm");
  EXPECT_EQ(img.width, 720);

  // Ablation flags reach the effective configuration.
  ASSERT_EQ(run("train" + common + " --out " + two.string() + " --cycles 1 --resume --no-iw --no-tr --no-jt").code, 0);
  const auto echoed = slurp(two / "config.txt");
  EXPECT_NE(echoed.find("iw = false"), std::string::npos);
  EXPECT_NE(echoed.find("tr = false"), std::string::npos);
  EXPECT_NE(echoed.find("jt = false"), std::string::npos);

  for (const auto& d : {data, one, two}) fs::remove_all(d);
  fs::remove(cfg);
}
