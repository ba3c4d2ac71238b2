// sbir: command-line front end.
//
//   sbir gen-data | pretrain | train | eval | plot  [options]
//
// Configuration layers, lowest first: built-in desk defaults, --config file,
// SBIR_<KEY> environment variables, --set key=value and the dedicated flags.
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sbir/run.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out, data, checkpoint;
  std::vector<std::string> set;
  std::optional<int> cycles;
  bool force = false, resume = false;
  bool no_iw = false, no_tr = false, attn_1d = false, no_jt = false;
  bool keys = false;
};

sbir::ExperimentConfig build_config(const Flags& f, bool out_is_data) {
  sbir::ExperimentConfig c = sbir::desk_defaults();
  if (!f.config.empty()) sbir::apply_file(c, f.config);
  sbir::apply_env(c);
  for (const auto& kv : f.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw sbir::ConfigError("--set expects key=value, got '" + kv + "'");
    sbir::set_key(c, sbir::detail::trim(kv.substr(0, eq)), sbir::detail::trim(kv.substr(eq + 1)), "--set");
  }
  if (f.seed) c.train.seed = *f.seed;
  if (!f.data.empty()) c.data_dir = f.data;
  if (!f.out.empty()) (out_is_data ? c.data_dir : c.out_dir) = f.out;
  if (!f.checkpoint.empty()) c.checkpoint = f.checkpoint;
  if (f.cycles) c.train.cycles = *f.cycles;
  if (f.no_iw) c.train.iw = false;
  if (f.no_tr) c.train.tr = false;
  if (f.attn_1d) c.train.gen.attention_2d = false;
  if (f.no_jt) c.train.jt = false;
  sbir::validate(c);
  return c;
}

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "key = value configuration file")->check(CLI::ExistingFile);
  sub->add_option("--seed", f.seed, "base random seed");
  sub->add_option("--set", f.set, "override one configuration key (key=value), repeatable");
}

void add_run(CLI::App* sub, Flags& f) {
  sub->add_option("--out", f.out, "run directory (config key out_dir)");
  sub->add_option("--data", f.data, "corpus directory (config key data_dir)");
}

void add_ablation(CLI::App* sub, Flags& f) {
  sub->add_flag("--no-iw", f.no_iw, "disable instance weighting");
  sub->add_flag("--no-tr", f.no_tr, "disable teacher regularisation");
  sub->add_flag("--attn-1d", f.attn_1d, "1-D attention over the flattened feature map");
  sub->add_flag("--no-jt", f.no_jt, "disable joint training of the generator");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised fine-grained sketch-based image retrieval on synthetic data"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", sbir::version_stamp());
  Flags f;
  app.add_flag("--list-keys", f.keys, "print every configuration key with its default and exit");

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic train/test corpora");
  add_common(gen, f);
  gen->add_option("--out", f.out, "corpus directory (config key data_dir)");
  gen->add_flag("--force", f.force, "overwrite an existing corpus directory");

  auto* pre = app.add_subcommand("pretrain", "pre-train generator and retrieval model, snapshot the teacher");
  add_common(pre, f);
  add_run(pre, f);
  pre->add_flag("--force", f.force, "redo pre-training (also clears joint-training state)");
  add_ablation(pre, f);

  auto* train = app.add_subcommand("train", "joint training from the pre-trained checkpoints");
  add_common(train, f);
  add_run(train, f);
  train->add_option("--cycles", f.cycles, "cycles to run (added to the current cycle when resuming)");
  train->add_flag("--resume", f.resume, "continue from the latest saved cycle");
  train->add_flag("--force", f.force, "discard existing joint-training state");
  add_ablation(train, f);

  auto* eval = app.add_subcommand("eval", "metrics, generated-sketch retrieval, FID and certainty table");
  add_common(eval, f);
  add_run(eval, f);
  eval->add_option("--checkpoint", f.checkpoint, "teacher | pretrain | latest | <cycle>");
  add_ablation(eval, f);

  auto* plot = app.add_subcommand("plot", "render figures from the run's logs into <out>/plots");
  add_common(plot, f);
  add_run(plot, f);

  // --list-keys works without a subcommand.
  for (int i = 1; i < argc; ++i)
    if (std::string(argv[i]) == "--list-keys") {
      std::cout << sbir::describe_keys();
      return 0;
    }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const bool is_gen = gen->parsed();
    const sbir::ExperimentConfig cfg = build_config(f, is_gen);
    if (is_gen) sbir::cmd_gen_data(cfg, cfg.data_dir, f.force, std::cout);
    else if (pre->parsed()) sbir::cmd_pretrain(cfg, f.force, std::cout);
    else if (train->parsed()) sbir::cmd_train(cfg, f.resume, f.force, std::cout);
    else if (eval->parsed()) sbir::cmd_eval(cfg, std::cout);
    else if (plot->parsed()) sbir::cmd_plot(cfg, std::cout);
  } catch (const sbir::ConfigError& e) {
    std::cerr << "sbir: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "sbir: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
