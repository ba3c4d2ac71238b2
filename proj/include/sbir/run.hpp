#pragma once

// Run-directory commands behind the command-line front end.
//
// <data_dir>/{train,test}/           corpora (manifest.tsv, sketches.ndjson, photos/)
// <out_dir>/config.txt, version.txt  effective configuration and build stamp
// <out_dir>/metrics.ndjson           one record per optimizer step
// <out_dir>/pretrain/*.ckpt          pre-trained G, F, teacher F^T and initial D_C
// <out_dir>/train/<part>/step-N.*    joint-training checkpoints per cycle
// <out_dir>/eval/<name>/             metrics.json, ranks.csv, certainty.csv
// <out_dir>/plots/*.ppm              figures

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "sbir/config.hpp"
#include "sbir/experiment.hpp"
#include "sbir/plot.hpp"

#ifndef SBIR_VERSION
#define SBIR_VERSION "0.1.0+unknown"
#endif

namespace sbir {

namespace fs = std::filesystem;

// Missing prerequisites or conflicting outputs; exit code 1.
class RunError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string version_stamp() { return std::string("sbir ") + SBIR_VERSION; }

inline void echo_run(const fs::path& dir, const ExperimentConfig& cfg) {
  fs::create_directories(dir);
  std::ofstream(dir / "config.txt") << dump_config(cfg);
  std::ofstream(dir / "version.txt") << version_stamp() << "\n";
}

inline void prepare_output(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw RunError("output directory " + dir.string() + " already exists; pass --force to overwrite it");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

// ---------------------------------------------------------------------------
// gen-data

struct CorpusStats {
  int n_labeled = 0, n_unlabeled = 0, n_test = 0;
  double offset_std = 0.0;
};

inline CorpusStats cmd_gen_data(const ExperimentConfig& cfg, const fs::path& dir, bool force, std::ostream& out) {
  prepare_output(dir, force);
  const auto train = make_synthetic_corpus(cfg.shape, cfg.n_labeled, cfg.n_unlabeled, mix_seed(cfg.train.seed, 11));
  const auto test = make_synthetic_corpus(cfg.shape, cfg.n_test, 0, mix_seed(cfg.train.seed, 12));
  save_corpus(dir / "train", train);
  save_corpus(dir / "test", test);
  echo_run(dir, cfg);
  CorpusStats s{static_cast<int>(train.labeled.size()), static_cast<int>(train.unlabeled.size()),
                static_cast<int>(test.labeled.size()), normalize_offsets(train.labeled).second};
  out << "labeled pairs    " << s.n_labeled << "\n"
      << "unlabeled photos " << s.n_unlabeled << "\n"
      << "test pairs       " << s.n_test << "\n"
      << "offset std       " << fmt(s.offset_std) << " px\n";
  return s;
}

// ---------------------------------------------------------------------------
// Shared loading

inline TrainData load_train(const ExperimentConfig& cfg) {
  const fs::path dir = fs::path(cfg.data_dir) / "train";
  if (!fs::exists(dir / "manifest.tsv"))
    throw RunError("no training corpus at " + dir.string() + "; run `sbir gen-data` first");
  return TrainData::from_corpus(load_corpus(dir, cfg.train.gen.max_length), cfg.train);
}

inline EvalData load_test(const ExperimentConfig& cfg) {
  const fs::path dir = fs::path(cfg.data_dir) / "test";
  if (!fs::exists(dir / "manifest.tsv"))
    throw RunError("no test corpus at " + dir.string() + "; run `sbir gen-data` first");
  return EvalData::from_pairs(load_corpus(dir, cfg.train.gen.max_length).labeled, cfg.shape.image_size,
                              cfg.train.raster_pad);
}

inline fs::path pretrain_dir(const ExperimentConfig& cfg) { return fs::path(cfg.out_dir) / "pretrain"; }
inline fs::path train_dir(const ExperimentConfig& cfg) { return fs::path(cfg.out_dir) / "train"; }

inline ModelSet load_pretrained(const ExperimentConfig& cfg) {
  const fs::path d = pretrain_dir(cfg);
  for (const char* part : {"gen", "ret", "teacher", "disc"})
    if (!fs::exists(d / (std::string(part) + ".ckpt")))
      throw RunError("missing pre-trained checkpoint " + (d / (std::string(part) + ".ckpt")).string() +
                     "; run `sbir pretrain` first");
  ModelSet m;
  m.gen = std::make_unique<Generator>(Generator::from_checkpoint(load_checkpoint(d / "gen.ckpt")));
  m.ret = std::make_unique<RetrievalModel>(RetrievalModel::from_checkpoint(load_checkpoint(d / "ret.ckpt")));
  m.disc = std::make_unique<Discriminator>(Discriminator::from_checkpoint(load_checkpoint(d / "disc.ckpt")));
  m.teacher.emplace(load_checkpoint(d / "teacher.ckpt"));
  return m;
}

inline nlohmann::json metrics_json(const VariantResult& r) {
  return {{"retrieval", to_json(r.retrieval)}, {"generation", to_json(r.generation)}, {"fid", r.fid}};
}

// ---------------------------------------------------------------------------
// pretrain

inline nlohmann::json cmd_pretrain(const ExperimentConfig& cfg, bool force, std::ostream& out) {
  const fs::path dir = pretrain_dir(cfg);
  if (fs::exists(dir) && !force)
    throw RunError("pre-trained checkpoints already exist in " + dir.string() + "; pass --force to redo them");
  const TrainData data = load_train(cfg);
  const EvalData test = load_test(cfg);
  if (force) {
    fs::remove_all(dir);
    fs::remove_all(train_dir(cfg));
  }
  fs::create_directories(dir);
  echo_run(cfg.out_dir, cfg);
  MetricLog log(fs::path(cfg.out_dir) / "metrics.ndjson", false, cfg.train.log_wall_time);
  ModelSet m = pretrain_models(cfg.train, data, log);
  save_checkpoint(dir / "gen.ckpt", m.gen->to_checkpoint());
  save_checkpoint(dir / "ret.ckpt", m.ret->to_checkpoint());
  save_checkpoint(dir / "teacher.ckpt", m.teacher->to_checkpoint());
  save_checkpoint(dir / "disc.ckpt", m.disc->to_checkpoint());
  const auto r = retrieval_metrics(rank_table(m.teacher->model(), test.view(), cfg.train.eval_gallery));
  nlohmann::json rec{{"checkpoint", "teacher"},
                     {"retrieval", to_json(r)},
                     {"generator_validation_loss",
                      generator_validation_loss(*m.gen, data.labeled, cfg.train.kl_weight)}};
  std::ofstream(dir / "eval.json") << rec.dump(2) << "\n";
  out << "pre-training done: acc@1 " << fmt(r.acc1) << "  acc@10 " << fmt(r.acc10) << "  arp " << fmt(r.arp) << "\n";
  return rec;
}

// ---------------------------------------------------------------------------
// train

inline void cmd_train(const ExperimentConfig& cfg, bool resume, bool force, std::ostream& out) {
  const fs::path dir = train_dir(cfg);
  const TrainData data = load_train(cfg);
  int done = latest_cycle(dir);
  if (done >= 0 && !resume && !force)
    throw RunError("training state exists in " + dir.string() + " (cycle " + std::to_string(done) +
                   "); pass --resume to continue or --force to restart");
  if (force && !resume) {
    fs::remove_all(dir);
    done = -1;
  }
  if (resume && done < 0) throw RunError("nothing to resume in " + dir.string());
  echo_run(cfg.out_dir, cfg);

  std::unique_ptr<JointState> st;
  if (done >= 0) {
    st = std::make_unique<JointState>(load_joint_state(dir, done, cfg.train));
    out << "resuming from cycle " << done << "\n";
  } else {
    st = std::make_unique<JointState>(load_pretrained(cfg), cfg.train);
  }
  std::optional<EvalData> test;
  if (cfg.train.eval_every > 0) test.emplace(load_test(cfg));

  MetricLog log(fs::path(cfg.out_dir) / "metrics.ndjson", true, cfg.train.log_wall_time);
  const int target = st->cycle + cfg.train.cycles;
  auto hook = [&](const JointState& s) {
    if (s.cycle == target || (cfg.train.checkpoint_every > 0 && s.cycle % cfg.train.checkpoint_every == 0))
      save_joint_state(dir, s);
  };
  joint_train(*st, data, cfg.train, cfg.train.cycles, log, test ? &*test : nullptr, hook);
  if (cfg.train.cycles == 0) save_joint_state(dir, *st);
  out << "trained to cycle " << st->cycle << "\n";
}

// ---------------------------------------------------------------------------
// eval

inline ModelSet load_for_eval(const ExperimentConfig& cfg, const std::string& which, std::string& name) {
  if (which == "teacher" || which == "pretrain") {
    ModelSet m = load_pretrained(cfg);
    if (which == "teacher") m.ret = std::make_unique<RetrievalModel>(m.teacher->model());
    name = which;
    return m;
  }
  int cycle = -1;
  if (which == "latest") {
    cycle = latest_cycle(train_dir(cfg));
    if (cycle < 0) throw RunError("no joint-training checkpoints in " + train_dir(cfg).string());
  } else {
    try {
      std::size_t pos = 0;
      cycle = std::stoi(which, &pos);
      if (pos != which.size()) throw std::invalid_argument(which);
    } catch (const std::exception&) {
      throw ConfigError("checkpoint must be teacher, pretrain, latest or a cycle number, got '" + which + "'");
    }
  }
  auto st = load_joint_state(train_dir(cfg), cycle, cfg.train);
  name = "cycle-" + std::to_string(cycle);
  return std::move(st.models);
}

inline Table certainty_table(const ConsistencyResult& c) {
  Table t;
  t.columns = {"bin", "lo", "hi", "count", "mean_score", "mean_arp"};
  for (const auto& b : c.bins)
    t.rows.push_back({std::to_string(b.index), fmt(b.index / 10.0, 1), fmt((b.index + 1) / 10.0, 1),
                      std::to_string(b.count), fmt(b.mean_score), fmt(b.mean_arp)});
  return t;
}

// Greedy pseudo sketches for up to n photos, each ranked against those photos.
inline ConsistencyResult consistency_on_photos(const ModelSet& m, const std::vector<UnlabeledPhoto>& photos, int n,
                                               int pad) {
  n = std::min<int>(n, static_cast<int>(photos.size()));
  EvalSet gallery;
  for (int i = 0; i < n; ++i) {
    gallery.ids.push_back(photos[i].id);
    gallery.photos.push_back(&photos[i].photo);
  }
  std::vector<RasterImage> rasters;
  for (int s = 0; s < n; s += 64) {
    std::vector<const RasterImage*> part(gallery.photos.begin() + s, gallery.photos.begin() + std::min(n, s + 64));
    for (auto& p : make_pseudo_pairs(part, *m.gen, PseudoMode::greedy, 1.0, nullptr, pad))
      rasters.push_back(std::move(p.raster));
  }
  std::vector<ScoredPseudoPair> pairs;
  for (int i = 0; i < n; ++i) pairs.push_back({static_cast<std::size_t>(i), &rasters[i]});
  return certainty_consistency(pairs, *m.disc, *m.ret, gallery);
}

inline nlohmann::json cmd_eval(const ExperimentConfig& cfg, std::ostream& out) {
  std::string name;
  const ModelSet m = load_for_eval(cfg, cfg.checkpoint, name);
  const EvalData test = load_test(cfg);
  const fs::path dir = fs::path(cfg.out_dir) / "eval" / name;
  fs::create_directories(dir);

  const auto view = test.view();
  const RankTable ranks = rank_table(*m.ret, view, cfg.train.eval_gallery);
  const VariantResult r = evaluate_models(m, test, cfg.train.raster_pad, true, cfg.train.eval_gallery);
  nlohmann::json rec = metrics_json(r);
  rec["checkpoint"] = name;

  {
    std::ofstream os(dir / "ranks.csv");
    os << "query,rank,gallery_size\n";
    for (const auto& e : ranks) os << e.query_id << "," << e.rank << "," << e.gallery_size << "\n";
  }
  const TrainData data = load_train(cfg);
  if (data.unlabeled.size() >= 2 && cfg.certainty_pairs >= 2) {
    const auto c = consistency_on_photos(m, data.unlabeled, cfg.certainty_pairs, cfg.train.raster_pad);
    certainty_table(c).write_csv((dir / "certainty.csv").string());
    rec["certainty"] = {{"pairs", c.scores.size()}, {"bins", c.bins.size()}, {"spearman", c.spearman}};
  }
  std::ofstream(dir / "metrics.json") << rec.dump(2) << "\n";
  out << name << ": acc@1 " << fmt(r.retrieval.acc1) << "  acc@10 " << fmt(r.retrieval.acc10) << "  arp "
      << fmt(r.retrieval.arp) << "  gen acc@1 " << fmt(r.generation.acc1) << "  fid " << fmt(r.fid) << "\n";
  return rec;
}

// ---------------------------------------------------------------------------
// plot

inline std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw RunError("cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

inline std::size_t column(const std::vector<std::string>& header, const std::string& name, const fs::path& file) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw RunError(file.string() + ": missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

inline void plot_certainty_csv(const fs::path& csv, const fs::path& ppm, const std::string& title) {
  const auto rows = read_csv(csv);
  if (rows.size() < 2) throw PlotError("no data in " + csv.string());
  const auto lo = column(rows[0], "lo", csv), ar = column(rows[0], "mean_arp", csv);
  Series s{"mean ARP", {}, {}};
  for (std::size_t i = 1; i < rows.size(); ++i) {
    s.x.push_back(std::stod(rows[i][lo]) + 0.05);
    s.y.push_back(std::stod(rows[i][ar]));
  }
  save_plot(ppm, {title, "critic certainty", "ARP", {s}, 720, 440, true});
}

// Sweep CSV: fraction, variant, seed, acc1, ... ; plots mean acc@1 per variant.
inline void plot_sweep_csv(const fs::path& csv, const fs::path& ppm) {
  const auto rows = read_csv(csv);
  if (rows.size() < 2) throw PlotError("no data in " + csv.string());
  const auto fr = column(rows[0], "fraction", csv), va = column(rows[0], "variant", csv),
             ac = column(rows[0], "acc1", csv);
  std::map<std::string, std::map<double, std::pair<double, int>>> acc;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    auto& cell = acc[rows[i][va]][std::stod(rows[i][fr])];
    cell.first += std::stod(rows[i][ac]);
    ++cell.second;
  }
  PlotSpec spec{"labeled data size", "labeled fraction", "acc@1", {}, 720, 440, true};
  for (const auto& [name, pts] : acc) {
    Series s{name, {}, {}};
    for (const auto& [f, v] : pts) {
      s.x.push_back(f);
      s.y.push_back(v.first / v.second);
    }
    spec.series.push_back(s);
  }
  save_plot(ppm, spec);
}

inline std::vector<fs::path> cmd_plot(const ExperimentConfig& cfg, std::ostream& out) {
  const fs::path run(cfg.out_dir);
  const fs::path log_path = run / "metrics.ndjson";
  std::vector<nlohmann::json> recs;
  if (fs::exists(log_path)) {
    std::ifstream is(log_path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        recs.push_back(nlohmann::json::parse(line));
      } catch (const std::exception& e) {
        throw RunError(log_path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
  if (recs.empty()) throw PlotError("no data: " + log_path.string() + " is missing or empty");

  const fs::path dir = run / "plots";
  fs::create_directories(dir);
  std::vector<fs::path> written;
  auto series = [&](const std::string& phase, const std::string& key, const std::string& label, bool by_step) {
    Series s{label, {}, {}};
    int k = 0;
    for (const auto& r : recs)
      if (r.value("phase", "") == phase && r.contains(key)) {
        s.x.push_back(by_step ? r.value("step", 0.0) : static_cast<double>(k));
        s.y.push_back(r.at(key).get<double>());
        ++k;
      }
    return s;
  };
  auto emit = [&](const std::string& file, PlotSpec spec, std::size_t window) {
    std::erase_if(spec.series, [](const Series& s) { return s.x.empty(); });
    if (spec.series.empty()) return;
    for (auto& s : spec.series) s.y = smooth(s.y, window);
    save_plot(dir / file, spec);
    written.push_back(dir / file);
  };
  emit("pretrain_curves.ppm",
       {"pre-training", "step", "loss",
        {series("pretrain_generator", "loss", "generator vae", false),
         series("pretrain_retrieval", "loss", "retrieval triplet", false)}},
       10);
  emit("retrieval_curves.ppm",
       {"joint training: retrieval", "step", "loss",
        {series("retrieval", "total", "total", true), series("retrieval", "trip_l", "labeled", true),
         series("retrieval", "trip_u", "unlabeled", true), series("retrieval", "kd", "distillation", true),
         series("retrieval", "weight_mean", "mean weight", true)}},
       20);
  emit("critic_curves.ppm",
       {"joint training: critic", "step", "value",
        {series("discriminator", "loss", "loss", true), series("discriminator", "real_mean", "real score", true),
         series("discriminator", "fake_mean", "fake score", true)}},
       20);
  emit("generator_curves.ppm",
       {"joint training: generator", "step", "value",
        {series("generator", "vae", "vae", true), series("generator", "reward_mean", "reward", true),
         series("generator", "critic_mean", "critic", true), series("generator", "triplet_mean", "triplet", true)}},
       20);
  emit("eval_curves.ppm",
       {"held-out retrieval", "cycle", "metric",
        {series("eval", "acc1", "acc@1", false), series("eval", "acc10", "acc@10", false),
         series("eval", "arp", "arp", false)}},
       1);
  if (fs::exists(run / "eval"))
    for (const auto& e : fs::directory_iterator(run / "eval"))
      if (fs::exists(e.path() / "certainty.csv")) {
        const fs::path p = dir / ("certainty_" + e.path().filename().string() + ".ppm");
        plot_certainty_csv(e.path() / "certainty.csv", p, "certainty consistency");
        written.push_back(p);
      }
  if (fs::exists(run / "sweep.csv")) {
    plot_sweep_csv(run / "sweep.csv", dir / "sweep.ppm");
    written.push_back(dir / "sweep.ppm");
  }
  if (written.empty()) throw PlotError("no data: no plottable records in " + log_path.string());
  for (const auto& p : written) out << "wrote " << p.string() << "\n";
  return written;
}

}  // namespace sbir
