#pragma once

// Pre-training and the alternating semi-supervised loop:
//   per cycle: k_r x (pseudo pairs, retrieval step, critic step)
//              k_g x generator step (VAE on labeled data + REINFORCE on the
//                    output layer with a retrieval/critic reward)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sbir/autograd.hpp"
#include "sbir/batch.hpp"
#include "sbir/checkpoint.hpp"
#include "sbir/corpus.hpp"
#include "sbir/discriminator.hpp"
#include "sbir/evaluation.hpp"
#include "sbir/generator.hpp"
#include "sbir/losses.hpp"
#include "sbir/nn.hpp"
#include "sbir/retrieval.hpp"
#include "sbir/rng.hpp"
#include "sbir/sketch.hpp"

namespace sbir {

enum class PseudoMode { greedy, stochastic };
enum class KdMode { relative, absolute };
// combined: both generator paths in one optimizer step; alternate: even
// generator steps are supervised, odd ones are policy-gradient only.
enum class RlMode { combined, alternate };
enum class GenPaths { both, supervised_only, rl_only };

struct TrainConfig {
  std::uint64_t seed = 0;

  int k_r = 5;
  int k_g = 5;
  double margin = 0.3;
  double kl_weight = 1.0;
  double lambda_kd = 0.1;
  double lambda_r1 = 1.0;
  double lambda_r2 = 1.0;
  double lambda_g = 10.0;
  double lr = 1e-4;
  double pretrain_lr = 1e-4;
  int batch_gen = 64;
  int batch_ret = 16;
  int batch_rl = 16;  // photos per source (labeled, unlabeled) in the RL path

  int pretrain_gen_epochs = 20;
  int pretrain_ret_epochs = 20;
  int cycles = 10;
  int eval_every = 0;  // cycles; 0 disables periodic evaluation
  int eval_gallery = 0;  // evaluation gallery size; 0 ranks against the whole held-out set
  int checkpoint_every = 1;

  // Ablation switches. use_unlabeled=false is the supervised-only baseline.
  bool iw = true;
  bool tr = true;
  bool jt = true;
  bool use_unlabeled = true;
  bool baseline = true;
  KdMode kd_mode = KdMode::relative;
  PseudoMode pseudo_mode = PseudoMode::greedy;
  RlMode rl_mode = RlMode::combined;
  double rl_temperature = 1.0;
  bool log_wall_time = true;

  int raster_pad = 2;
  GeneratorConfig gen{};
  RetrievalConfig ret{};
  DiscriminatorConfig disc{};

  void validate() const {
    auto need = [](bool ok, const std::string& what) {
      if (!ok) throw std::invalid_argument("config: " + what);
    };
    need(k_r >= 1 && k_g >= 1, "k_r and k_g must be at least 1");
    need(lambda_kd >= 0 && lambda_r1 >= 0 && lambda_r2 >= 0 && lambda_g >= 0 && kl_weight >= 0,
         "loss weights must be non-negative");
    need(lr > 0 && pretrain_lr > 0, "learning rates must be positive");
    need(margin > 0, "margin must be positive");
    need(batch_gen >= 1 && batch_ret >= 2 && batch_rl >= 1, "batch sizes too small (retrieval needs at least 2)");
    need(pretrain_gen_epochs >= 0 && pretrain_ret_epochs >= 0 && cycles >= 0, "budgets must be non-negative");
    need(rl_temperature > 0, "rl_temperature must be positive");
    need(gen.image_size == ret.image_size && ret.image_size == disc.image_size, "model image sizes differ");
    gen.validate();
    ret.validate();
    disc.validate();
  }
};

// ---------------------------------------------------------------------------
// Data

struct TrainData {
  std::vector<LabeledPair> labeled;  // offsets normalized
  std::vector<RasterImage> labeled_rasters;
  std::vector<UnlabeledPhoto> unlabeled;
  double offset_scale = 1.0;

  static TrainData from_corpus(const Corpus& c, const TrainConfig& cfg) {
    if (c.labeled.empty()) throw CorpusError("training corpus has no labeled pairs");
    TrainData d;
    auto [pairs, scale] = normalize_offsets(c.labeled);
    d.labeled = std::move(pairs);
    d.offset_scale = scale;
    d.unlabeled = c.unlabeled;
    const RasterOptions ro{cfg.gen.image_size, cfg.gen.image_size, cfg.raster_pad, false};
    for (const auto& p : d.labeled) {
      if (p.photo.height != cfg.gen.image_size || p.photo.width != cfg.gen.image_size)
        throw CorpusError("photo '" + p.id + "' is not " + std::to_string(cfg.gen.image_size) + "px square");
      if (static_cast<int>(p.sketch.size()) > cfg.gen.max_length)
        throw CorpusError("sketch '" + p.id + "' is longer than max_length " + std::to_string(cfg.gen.max_length));
      d.labeled_rasters.push_back(rasterize(p.sketch, ro));
    }
    return d;
  }
};

// Held-out pairs: each sketch queries a gallery made of all the photos.
struct EvalData {
  std::vector<LabeledPair> pairs;
  std::vector<RasterImage> rasters;

  static EvalData from_pairs(std::vector<LabeledPair> pairs, int image_size, int pad) {
    EvalData d;
    d.pairs = std::move(pairs);
    const RasterOptions ro{image_size, image_size, pad, false};
    for (const auto& p : d.pairs) d.rasters.push_back(rasterize(p.sketch, ro));
    return d;
  }

  EvalSet view() const {
    EvalSet s;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      s.ids.push_back(pairs[i].id);
      s.photos.push_back(&pairs[i].photo);
      s.sketches.push_back(&rasters[i]);
    }
    return s;
  }
};

// k distinct indices from [0, n), in draw order.
inline std::vector<int> sample_indices(Rng& rng, int n, int k) {
  if (k > n) throw std::invalid_argument("sample_indices: k > n");
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < k; ++i) std::swap(idx[i], idx[uniform_int(rng, i, n - 1)]);
  idx.resize(k);
  return idx;
}

// For each i, a uniformly random j != i.
inline std::vector<int> random_negatives(Rng& rng, int n) {
  if (n < 2) throw std::invalid_argument("negative sampling needs a batch of at least 2");
  std::vector<int> neg(n);
  for (int i = 0; i < n; ++i) {
    int j = uniform_int(rng, 0, n - 2);
    neg[i] = j >= i ? j + 1 : j;
  }
  return neg;
}

inline std::vector<int> shuffled(Rng& rng, int n) { return sample_indices(rng, n, n); }

// ---------------------------------------------------------------------------
// Metric log

class MetricLog {
 public:
  MetricLog() = default;
  MetricLog(const std::filesystem::path& path, bool append, bool wall_time) : wall_time_(wall_time) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    os_ = std::make_unique<std::ofstream>(path, append ? std::ios::app : std::ios::trunc);
    if (!*os_) throw std::runtime_error("cannot open log " + path.string());
  }

  void set_wall_time(bool on) { wall_time_ = on; }

  void write(nlohmann::json rec) {
    if (wall_time_)
      rec["wall_time"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    if (os_) {
      *os_ << rec.dump() << '\n';
      os_->flush();
    }
    records_.push_back(std::move(rec));
  }

  const std::vector<nlohmann::json>& records() const { return records_; }

 private:
  std::unique_ptr<std::ofstream> os_;
  std::vector<nlohmann::json> records_;
  bool wall_time_ = false;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// Models

struct ModelSet {
  std::unique_ptr<Generator> gen;
  std::unique_ptr<RetrievalModel> ret;
  std::unique_ptr<Discriminator> disc;
  std::optional<TeacherSnapshot> teacher;

  static ModelSet fresh(const TrainConfig& cfg) {
    ModelSet m;
    Rng rg(mix_seed(cfg.seed, 101)), rr(mix_seed(cfg.seed, 102)), rd(mix_seed(cfg.seed, 103));
    m.gen = std::make_unique<Generator>(cfg.gen, rg);
    m.ret = std::make_unique<RetrievalModel>(cfg.ret, rr);
    m.disc = std::make_unique<Discriminator>(cfg.disc, rd);
    return m;
  }

  // Deep copy through the checkpoint container.
  ModelSet clone() const {
    ModelSet m;
    m.gen = std::make_unique<Generator>(Generator::from_checkpoint(gen->to_checkpoint()));
    m.ret = std::make_unique<RetrievalModel>(RetrievalModel::from_checkpoint(ret->to_checkpoint()));
    m.disc = std::make_unique<Discriminator>(Discriminator::from_checkpoint(disc->to_checkpoint()));
    if (teacher) m.teacher.emplace(teacher->to_checkpoint());
    return m;
  }
};

// ---------------------------------------------------------------------------
// Pre-training

struct PretrainResult {
  int steps = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
};

inline std::vector<const StrokeSequence*> sequences_of(const std::vector<const LabeledPair*>& pairs) {
  std::vector<const StrokeSequence*> out;
  for (const auto* p : pairs) out.push_back(&p->sketch);
  return out;
}

inline int padded_length(const std::vector<const StrokeSequence*>& seqs) {
  int t = 0;
  for (const auto* s : seqs) t = std::max(t, static_cast<int>(s->size()));
  return t;
}

// One VAE forward on a labeled batch; eps is drawn from rng.
inline VaeLoss vae_batch_loss(const Generator& g, const std::vector<const LabeledPair*>& batch, double kl_weight,
                              Rng& rng) {
  std::vector<const RasterImage*> photos;
  for (const auto* p : batch) photos.push_back(&p->photo);
  const auto seqs = sequences_of(batch);
  std::vector<double> eps(batch.size() * g.config().latent_dim);
  for (double& e : eps) e = normal(rng);
  const auto trace = g.teacher_force(image_batch(photos), seqs, padded_length(seqs), eps);
  return vae_loss(trace, seqs, g.config().mixtures, kl_weight);
}

// Epochs of shuffled mini-batches (last batch may be short).
inline PretrainResult pretrain_generator(Generator& g, const TrainData& data, const TrainConfig& cfg, MetricLog& log,
                                         Rng& rng) {
  if (data.labeled.empty()) throw std::invalid_argument("pretrain_generator: empty labeled set");
  nn::Adam opt(g.parameters(), cfg.pretrain_lr);
  PretrainResult r;
  const int n = static_cast<int>(data.labeled.size());
  for (int epoch = 0; epoch < cfg.pretrain_gen_epochs; ++epoch) {
    const auto order = shuffled(rng, n);
    for (int s = 0; s < n; s += cfg.batch_gen) {
      std::vector<const LabeledPair*> batch;
      for (int i = s; i < std::min(n, s + cfg.batch_gen); ++i) batch.push_back(&data.labeled[order[i]]);
      auto loss = vae_batch_loss(g, batch, cfg.kl_weight, rng);
      backward(loss.total);
      opt.step();
      const double total = loss.total.item();
      if (r.steps == 0) r.first_loss = total;
      r.last_loss = total;
      log.write({{"phase", "pretrain_generator"}, {"step", r.steps}, {"epoch", epoch}, {"loss", total},
                 {"reconstruction", loss.reconstruction}, {"kl", loss.kl}});
      ++r.steps;
    }
  }
  return r;
}

// Mean VAE loss over the whole labeled set with z = mu, no randomness.
inline double generator_validation_loss(const Generator& g, const std::vector<LabeledPair>& pairs, double kl_weight,
                                        int chunk = 64) {
  NoGradGuard no_grad;
  double total = 0.0;
  for (std::size_t s = 0; s < pairs.size(); s += chunk) {
    std::vector<const LabeledPair*> batch;
    std::vector<const RasterImage*> photos;
    for (std::size_t i = s; i < std::min(pairs.size(), s + chunk); ++i) {
      batch.push_back(&pairs[i]);
      photos.push_back(&pairs[i].photo);
    }
    const auto seqs = sequences_of(batch);
    const auto trace = g.teacher_force(image_batch(photos), seqs, padded_length(seqs));
    total += vae_loss(trace, seqs, g.config().mixtures, kl_weight).total.item() * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(pairs.size());
}

struct PairBatch {
  std::vector<const RasterImage*> photos;
  std::vector<const RasterImage*> sketches;

  std::size_t size() const { return photos.size(); }
};

inline PairBatch labeled_batch(const TrainData& data, const std::vector<int>& idx) {
  PairBatch b;
  for (int i : idx) {
    b.photos.push_back(&data.labeled[i].photo);
    b.sketches.push_back(&data.labeled_rasters[i]);
  }
  return b;
}

// Mean in-batch triplet loss; the batch's embeddings come from one forward.
inline Var supervised_triplet(const RetrievalModel& f, const PairBatch& b, double margin, Rng& rng) {
  const int n = static_cast<int>(b.size());
  std::vector<const RasterImage*> images = b.photos;
  images.insert(images.end(), b.sketches.begin(), b.sketches.end());
  Var e = f.forward(image_batch(images)).embedding;
  std::vector<int> ph(n), sk(n);
  std::iota(ph.begin(), ph.end(), 0);
  std::iota(sk.begin(), sk.end(), n);
  auto neg = random_negatives(rng, n);
  return triplet_loss(ops::gather_rows(e, sk), ops::gather_rows(e, ph), ops::gather_rows(e, neg), margin,
                      std::vector<double>(n, 1.0 / n));
}

// Triplet training on labeled pairs; returns the frozen teacher copy.
inline TeacherSnapshot pretrain_retrieval(RetrievalModel& f, const TrainData& data, const TrainConfig& cfg,
                                          MetricLog& log, Rng& rng, PretrainResult* result = nullptr) {
  const int n = static_cast<int>(data.labeled.size());
  if (n < 2) throw std::invalid_argument("pretrain_retrieval: need at least 2 labeled pairs for negatives");
  nn::Adam opt(f.parameters(), cfg.pretrain_lr);
  PretrainResult r;
  for (int epoch = 0; epoch < cfg.pretrain_ret_epochs; ++epoch) {
    const auto order = shuffled(rng, n);
    for (int s = 0; s < n; s += cfg.batch_ret) {
      std::vector<int> idx(order.begin() + s, order.begin() + std::min(n, s + cfg.batch_ret));
      if (idx.size() < 2) continue;
      Var loss = supervised_triplet(f, labeled_batch(data, idx), cfg.margin, rng);
      backward(loss);
      opt.step();
      if (r.steps == 0) r.first_loss = loss.item();
      r.last_loss = loss.item();
      log.write({{"phase", "pretrain_retrieval"}, {"step", r.steps}, {"epoch", epoch}, {"loss", loss.item()}});
      ++r.steps;
    }
  }
  if (result) *result = r;
  return TeacherSnapshot(f);
}

// ---------------------------------------------------------------------------
// Pseudo pairs

struct PseudoPair {
  const RasterImage* photo = nullptr;
  StrokeSequence sketch;
  RasterImage raster;
};

inline std::vector<PseudoPair> make_pseudo_pairs(const std::vector<const RasterImage*>& photos, const Generator& g,
                                                 PseudoMode mode, double temperature, Rng* rng, int pad = 2) {
  if (photos.empty()) return {};
  SampleOptions opt;
  opt.greedy = mode == PseudoMode::greedy;
  opt.temperature = temperature;
  opt.max_length = g.config().max_length;
  auto samples = g.sample(image_batch(photos), opt, opt.greedy ? nullptr : rng);
  const RasterOptions ro{g.config().image_size, g.config().image_size, pad, false};
  std::vector<PseudoPair> out;
  out.reserve(photos.size());
  for (std::size_t i = 0; i < photos.size(); ++i) {
    RasterImage r = rasterize(samples[i].sketch, ro);
    out.push_back({photos[i], std::move(samples[i].sketch), std::move(r)});
  }
  return out;
}

inline PairBatch pseudo_batch(const std::vector<PseudoPair>& pairs) {
  PairBatch b;
  for (const auto& p : pairs) {
    b.photos.push_back(p.photo);
    b.sketches.push_back(&p.raster);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Retrieval step

struct RetrievalBreakdown {
  double trip_l = 0.0;
  double trip_u = 0.0;  // sum_j w_j * trip_j / |U|
  double kd = 0.0;      // unscaled distillation term
  double total = 0.0;
  std::vector<double> weights;
};

// One optimizer step on F. `unl` null means labeled triplets only.
inline RetrievalBreakdown retrieval_step(const PairBatch& lab, const PairBatch* unl, RetrievalModel& f, nn::Adam& opt,
                                         const TeacherSnapshot* teacher, const Discriminator* dc,
                                         const TrainConfig& cfg, Rng& rng_lab, Rng& rng_unl) {
  const int nl = static_cast<int>(lab.size());
  const int nu = unl ? static_cast<int>(unl->size()) : 0;
  if (nl < 2 || (unl && nu < 2)) throw std::invalid_argument("retrieval_step: batches need at least 2 pairs");
  if (unl && nu != nl) throw std::invalid_argument("retrieval_step: labeled and unlabeled batches must be equal-sized");

  std::vector<const RasterImage*> images = lab.photos;
  images.insert(images.end(), lab.sketches.begin(), lab.sketches.end());
  if (unl) {
    images.insert(images.end(), unl->photos.begin(), unl->photos.end());
    images.insert(images.end(), unl->sketches.begin(), unl->sketches.end());
  }
  Var e = f.forward(image_batch(images)).embedding;
  auto range = [](int start, int n) {
    std::vector<int> v(n);
    std::iota(v.begin(), v.end(), start);
    return v;
  };
  auto offset = [](std::vector<int> v, int by) {
    for (int& x : v) x += by;
    return v;
  };

  RetrievalBreakdown out;
  const auto neg_l = random_negatives(rng_lab, nl);
  Var trip_l = triplet_loss(ops::gather_rows(e, range(nl, nl)), ops::gather_rows(e, range(0, nl)),
                            ops::gather_rows(e, neg_l), cfg.margin, std::vector<double>(nl, 1.0 / nl));
  out.trip_l = trip_l.item();
  Var total = trip_l;
  if (!unl) {
    out.total = total.item();
    backward(total);
    opt.step();
    return out;
  }

  // Unlabeled triplets weighted by frozen critic certainty.
  const int base = 2 * nl;
  if (cfg.iw && dc) {
    std::vector<PairRef> refs;
    for (int j = 0; j < nu; ++j) refs.push_back({unl->photos[j], unl->sketches[j]});
    out.weights = dc->certainty_weights(refs);
  } else {
    out.weights.assign(nu, 1.0);
  }
  std::vector<double> wu(nu);
  for (int j = 0; j < nu; ++j) wu[j] = out.weights[j] / nu;
  const auto neg_u = offset(random_negatives(rng_unl, nu), base);
  Var trip_u = triplet_loss(ops::gather_rows(e, range(base + nu, nu)), ops::gather_rows(e, range(base, nu)),
                            ops::gather_rows(e, neg_u), cfg.margin, wu);
  out.trip_u = trip_u.item();
  total = ops::add(total, trip_u);

  if (cfg.tr && teacher && cfg.lambda_kd > 0.0) {
    const auto te = teacher->model().embed_all(images);
    const int n_pairs = nl + nu;
    std::vector<int> ph = range(0, nl), sk = range(nl, nl);
    const auto ph_u = range(base, nu), sk_u = range(base + nu, nu);
    ph.insert(ph.end(), ph_u.begin(), ph_u.end());
    sk.insert(sk.end(), sk_u.begin(), sk_u.end());
    Var kd;
    if (cfg.kd_mode == KdMode::relative) {
      std::vector<double> td(n_pairs);
      for (int i = 0; i < n_pairs; ++i) td[i] = l2_distance(te[ph[i]], te[sk[i]]);
      kd = kd_relative_loss(ops::gather_rows(e, ph), ops::gather_rows(e, sk), td,
                            std::vector<double>(n_pairs, 1.0 / n_pairs));
    } else {
      std::vector<double> flat;
      for (const auto& v : te) flat.insert(flat.end(), v.begin(), v.end());
      kd = kd_absolute_loss(e, flat, std::vector<double>(images.size(), 0.5 / n_pairs));
    }
    out.kd = kd.item();
    total = ops::add(total, ops::scale(kd, cfg.lambda_kd));
  }
  out.total = total.item();
  backward(total);
  opt.step();
  return out;
}

// ---------------------------------------------------------------------------
// Critic step

struct DiscriminatorBreakdown {
  double loss = 0.0;
  double real_mean = 0.0;
  double fake_mean = 0.0;
};

inline DiscriminatorBreakdown discriminator_step(const PairBatch& real, const PairBatch& fake, Discriminator& dc,
                                                 nn::Adam& opt) {
  if (real.size() == 0 || fake.size() == 0) throw std::invalid_argument("discriminator_step: empty batch");
  Var rs = dc.forward(pair_batch(real.photos, real.sketches));
  Var fs = dc.forward(pair_batch(fake.photos, fake.sketches));
  Var loss = d_loss(rs, fs);
  DiscriminatorBreakdown out;
  out.loss = loss.item();
  for (double s : rs.value()) out.real_mean += s / static_cast<double>(rs.size());
  for (double s : fs.value()) out.fake_mean += s / static_cast<double>(fs.size());
  backward(loss);
  opt.step();
  return out;
}

// ---------------------------------------------------------------------------
// Reward and generator step

struct RewardRecord {
  double reward = 0.0;
  double triplet = 0.0;
  double critic = 0.0;
  double baseline = 0.0;
};

// R = -lambda_r1 * trip + lambda_r2 * critic.
inline RewardRecord compute_reward(double triplet, double critic, const TrainConfig& cfg) {
  return {-cfg.lambda_r1 * triplet + cfg.lambda_r2 * critic, triplet, critic, 0.0};
}

inline RewardRecord compute_reward(const RasterImage& photo, const RasterImage& sketch_raster,
                                   const RasterImage& neg_photo, const RetrievalModel& f, const Discriminator& dc,
                                   const TrainConfig& cfg) {
  if (&photo == &neg_photo) throw std::invalid_argument("compute_reward: negative must differ from the photo");
  const double trip = triplet_loss(f.embed(sketch_raster), f.embed(photo), f.embed(neg_photo), cfg.margin);
  return compute_reward(trip, dc.score_pair(photo, sketch_raster), cfg);
}

// Mean that is exact when all values are equal.
inline double stable_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x - v.front();
  return v.front() + s / static_cast<double>(v.size());
}

struct GeneratorBreakdown {
  double vae = 0.0, reconstruction = 0.0, kl = 0.0;
  double rl = 0.0;
  double reward_mean = 0.0, reward_std = 0.0, baseline = 0.0;
  double triplet_mean = 0.0, critic_mean = 0.0;
  double log_prob_mean = 0.0, length_mean = 0.0;
  bool supervised = false, policy = false;
  std::vector<RewardRecord> rewards;
};

// Policy-gradient surrogate over sampled sketches: its gradient w.r.t. the
// output layer is -lambda_G / N * sum_n (R_n - b) * grad sum_t log p.
// Decoder hidden states are constants, so nothing upstream of W_y, b_y moves.
inline Var policy_loss(const Generator& g, const std::vector<SampledSketch>& samples, const std::vector<double>& adv,
                       double lambda_g, double temperature) {
  const int n = static_cast<int>(samples.size());
  const int h = g.config().hidden_size;
  int steps = 0;
  for (const auto& s : samples) steps = std::max(steps, static_cast<int>(s.sketch.size()));
  std::vector<double> hidden(static_cast<std::size_t>(steps) * n * h, 0.0);
  std::vector<StepTarget> targets(static_cast<std::size_t>(steps) * n);
  std::vector<double> w(targets.size(), 0.0);
  for (int b = 0; b < n; ++b) {
    const auto& s = samples[b];
    if (s.hidden.size() != s.sketch.size()) throw std::logic_error("policy_loss: samples lack hidden states");
    for (int t = 0; t < static_cast<int>(s.sketch.size()); ++t) {
      const std::size_t k = static_cast<std::size_t>(t) * n + b;
      std::copy(s.hidden[t].begin(), s.hidden[t].end(), hidden.begin() + k * h);
      targets[k] = {s.sketch[t].dx, s.sketch[t].dy, s.sketch[t].pen};
      w[k] = lambda_g * adv[b] / n;
    }
  }
  Var y = g.output_layer(Var::constant({steps * n, h}, std::move(hidden)));
  Var raw = ops::reshape(y, {steps, n, g.config().output_size()});
  return mixture_sequence_loss(raw, std::move(targets), w, w, g.config().mixtures, temperature);
}

// Supervised VAE path on `vae_batch` plus the policy path on `rl_photos`
// (labeled and unlabeled), combined in one optimizer step.
inline GeneratorBreakdown generator_rl_step(const std::vector<const LabeledPair*>& vae_batch,
                                            const std::vector<const RasterImage*>& rl_photos, Generator& g,
                                            nn::Adam& opt, const RetrievalModel& f, const Discriminator& dc,
                                            const TrainConfig& cfg, Rng& rng, GenPaths paths = GenPaths::both) {
  GeneratorBreakdown out;
  Var total;
  if (paths != GenPaths::rl_only && !vae_batch.empty()) {
    auto vl = vae_batch_loss(g, vae_batch, cfg.kl_weight, rng);
    out.vae = vl.total.item();
    out.reconstruction = vl.reconstruction;
    out.kl = vl.kl;
    out.supervised = true;
    total = vl.total;
  }
  if (paths != GenPaths::supervised_only && rl_photos.size() >= 2) {
    SampleOptions so;
    so.temperature = cfg.rl_temperature;
    so.max_length = g.config().max_length;
    so.keep_hidden = true;
    auto samples = g.sample(image_batch(rl_photos), so, &rng);
    const int n = static_cast<int>(samples.size());
    const RasterOptions ro{g.config().image_size, g.config().image_size, cfg.raster_pad, false};
    std::vector<RasterImage> rasters;
    for (const auto& s : samples) rasters.push_back(rasterize(s.sketch, ro));
    std::vector<const RasterImage*> sk, refs_img;
    std::vector<PairRef> refs;
    for (int i = 0; i < n; ++i) {
      sk.push_back(&rasters[i]);
      refs.push_back({rl_photos[i], &rasters[i]});
    }
    const auto neg = random_negatives(rng, n);
    const auto pe = f.embed_all(rl_photos);
    const auto se = f.embed_all(sk);
    const auto critic = dc.certainty_weights(refs);
    std::vector<double> rewards(n);
    for (int i = 0; i < n; ++i) {
      out.rewards.push_back(compute_reward(triplet_loss(se[i], pe[i], pe[neg[i]], cfg.margin), critic[i], cfg));
      rewards[i] = out.rewards.back().reward;
    }
    const double b = cfg.baseline ? stable_mean(rewards) : 0.0;
    std::vector<double> adv(n);
    double lp = 0.0, len = 0.0;
    for (int i = 0; i < n; ++i) {
      out.rewards[i].baseline = b;
      adv[i] = rewards[i] - b;
      out.reward_mean += rewards[i] / n;
      out.triplet_mean += out.rewards[i].triplet / n;
      out.critic_mean += out.rewards[i].critic / n;
      lp += std::accumulate(samples[i].log_prob.begin(), samples[i].log_prob.end(), 0.0) / n;
      len += static_cast<double>(samples[i].sketch.size()) / n;
    }
    for (double r : rewards) out.reward_std += (r - out.reward_mean) * (r - out.reward_mean) / n;
    out.reward_std = std::sqrt(out.reward_std);
    out.baseline = b;
    out.log_prob_mean = lp;
    out.length_mean = len;
    Var pl = policy_loss(g, samples, adv, cfg.lambda_g, cfg.rl_temperature);
    out.rl = pl.item();
    out.policy = true;
    total = total.defined() ? ops::add(total, pl) : pl;
  }
  if (total.defined()) {
    backward(total);
    opt.step();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Joint training

inline nlohmann::json rng_json(const Rng& r) { return rng_state(r); }

struct JointState {
  ModelSet models;
  std::unique_ptr<nn::Adam> opt_ret, opt_disc, opt_gen;
  Rng rng_lab, rng_unl, rng_pseudo, rng_gen;
  int cycle = 0;
  long long step = 0;
  long long gen_steps = 0;

  JointState(ModelSet m, const TrainConfig& cfg)
      : models(std::move(m)),
        rng_lab(mix_seed(cfg.seed, 201)),
        rng_unl(mix_seed(cfg.seed, 202)),
        rng_pseudo(mix_seed(cfg.seed, 203)),
        rng_gen(mix_seed(cfg.seed, 204)) {
    opt_ret = std::make_unique<nn::Adam>(models.ret->parameters(), cfg.lr);
    opt_disc = std::make_unique<nn::Adam>(models.disc->parameters(), cfg.lr);
    opt_gen = std::make_unique<nn::Adam>(models.gen->parameters(), cfg.lr);
  }

  nlohmann::json counters() const {
    return {{"cycle", cycle},
            {"step", step},
            {"gen_steps", gen_steps},
            {"rng_lab", rng_state(rng_lab)},
            {"rng_unl", rng_state(rng_unl)},
            {"rng_pseudo", rng_state(rng_pseudo)},
            {"rng_gen", rng_state(rng_gen)}};
  }

  void restore_counters(const nlohmann::json& j) {
    cycle = j.at("cycle").get<int>();
    step = j.at("step").get<long long>();
    gen_steps = j.at("gen_steps").get<long long>();
    restore_rng_state(rng_lab, j.at("rng_lab").get<std::string>());
    restore_rng_state(rng_unl, j.at("rng_unl").get<std::string>());
    restore_rng_state(rng_pseudo, j.at("rng_pseudo").get<std::string>());
    restore_rng_state(rng_gen, j.at("rng_gen").get<std::string>());
  }
};

inline nlohmann::json retrieval_record(const RetrievalBreakdown& r) {
  double wmean = 0.0;
  for (double w : r.weights) wmean += w / static_cast<double>(r.weights.size());
  return {{"trip_l", r.trip_l}, {"trip_u", r.trip_u}, {"kd", r.kd}, {"total", r.total}, {"weight_mean", wmean}};
}

inline nlohmann::json generator_record(const GeneratorBreakdown& g) {
  return {{"vae", g.vae},
          {"reconstruction", g.reconstruction},
          {"kl", g.kl},
          {"rl", g.rl},
          {"reward_mean", g.reward_mean},
          {"reward_std", g.reward_std},
          {"baseline", g.baseline},
          {"triplet_mean", g.triplet_mean},
          {"critic_mean", g.critic_mean},
          {"log_prob_mean", g.log_prob_mean},
          {"length_mean", g.length_mean},
          {"supervised", g.supervised},
          {"policy", g.policy}};
}

// Called after each completed cycle (checkpointing, evaluation).
using CycleHook = std::function<void(const JointState&)>;

// Runs `cycles` more cycles of the alternation from the current state.
inline void joint_train(JointState& st, const TrainData& data, const TrainConfig& cfg, int cycles, MetricLog& log,
                        const EvalData* eval = nullptr, const CycleHook& hook = {}) {
  if (!st.models.gen || !st.models.ret || !st.models.disc)
    throw std::invalid_argument("joint_train: pre-trained models are missing");
  const int nl = static_cast<int>(data.labeled.size());
  const int nu = static_cast<int>(data.unlabeled.size());
  const bool semi = cfg.use_unlabeled;
  if (semi && nu < 2) throw std::invalid_argument("joint_train: need at least 2 unlabeled photos");
  const int b = std::min(cfg.batch_ret, nl);
  if (b < 2) throw std::invalid_argument("joint_train: need at least 2 labeled pairs");
  const TeacherSnapshot* teacher = st.models.teacher ? &*st.models.teacher : nullptr;

  for (int c = 0; c < cycles; ++c) {
    for (int r = 0; r < cfg.k_r; ++r) {
      const PairBatch lab = labeled_batch(data, sample_indices(st.rng_lab, nl, b));
      if (!semi) {
        auto rb = retrieval_step(lab, nullptr, *st.models.ret, *st.opt_ret, nullptr, nullptr, cfg, st.rng_lab,
                                 st.rng_unl);
        auto rec = retrieval_record(rb);
        rec.update({{"phase", "retrieval"}, {"step", st.step++}, {"cycle", st.cycle}});
        log.write(rec);
        continue;
      }
      std::vector<const RasterImage*> photos;
      for (int i : sample_indices(st.rng_unl, nu, std::min(b, nu))) photos.push_back(&data.unlabeled[i].photo);
      const auto pseudo =
          make_pseudo_pairs(photos, *st.models.gen, cfg.pseudo_mode, 1.0, &st.rng_pseudo, cfg.raster_pad);
      const PairBatch unl = pseudo_batch(pseudo);
      const PairBatch lab_eq = unl.size() < lab.size()
                                   ? PairBatch{{lab.photos.begin(), lab.photos.begin() + unl.size()},
                                               {lab.sketches.begin(), lab.sketches.begin() + unl.size()}}
                                   : lab;
      auto rb = retrieval_step(lab_eq, &unl, *st.models.ret, *st.opt_ret, teacher, st.models.disc.get(), cfg,
                               st.rng_lab, st.rng_unl);
      auto rec = retrieval_record(rb);
      rec.update({{"phase", "retrieval"}, {"step", st.step++}, {"cycle", st.cycle}});
      log.write(rec);
      auto db = discriminator_step(lab_eq, unl, *st.models.disc, *st.opt_disc);
      log.write({{"phase", "discriminator"},
                 {"step", st.step++},
                 {"cycle", st.cycle},
                 {"loss", db.loss},
                 {"real_mean", db.real_mean},
                 {"fake_mean", db.fake_mean}});
    }
    if (semi && cfg.jt) {
      for (int k = 0; k < cfg.k_g; ++k) {
        std::vector<const LabeledPair*> vae_batch;
        for (int i : sample_indices(st.rng_gen, nl, std::min(cfg.batch_gen, nl))) vae_batch.push_back(&data.labeled[i]);
        std::vector<const RasterImage*> rl_photos;
        for (int i : sample_indices(st.rng_gen, nl, std::min(cfg.batch_rl, nl)))
          rl_photos.push_back(&data.labeled[i].photo);
        for (int i : sample_indices(st.rng_gen, nu, std::min(cfg.batch_rl, nu)))
          rl_photos.push_back(&data.unlabeled[i].photo);
        GenPaths paths = GenPaths::both;
        if (cfg.rl_mode == RlMode::alternate)
          paths = (st.gen_steps % 2 == 0) ? GenPaths::supervised_only : GenPaths::rl_only;
        auto gb = generator_rl_step(vae_batch, rl_photos, *st.models.gen, *st.opt_gen, *st.models.ret,
                                    *st.models.disc, cfg, st.rng_gen, paths);
        ++st.gen_steps;
        auto rec = generator_record(gb);
        rec.update({{"phase", "generator"}, {"step", st.step++}, {"cycle", st.cycle}});
        log.write(rec);
      }
    }
    ++st.cycle;
    if (eval && cfg.eval_every > 0 && st.cycle % cfg.eval_every == 0) {
      auto m = retrieval_metrics(rank_table(*st.models.ret, eval->view(), cfg.eval_gallery));
      auto rec = to_json(m);
      rec.update({{"phase", "eval"}, {"cycle", st.cycle}});
      log.write(rec);
    }
    if (hook) hook(st);
  }
}

// ---------------------------------------------------------------------------
// Run directory checkpoints: <dir>/{gen,ret,teacher,disc}/step-N.ckpt and
// <dir>/state/step-N.json, N = completed cycles.

inline std::filesystem::path step_file(const std::filesystem::path& dir, const std::string& part, int cycle,
                                       const char* ext = ".ckpt") {
  return dir / part / ("step-" + std::to_string(cycle) + ext);
}

inline void save_joint_state(const std::filesystem::path& dir, const JointState& st) {
  auto gen = st.models.gen->to_checkpoint();
  append_optimizer(gen, *st.opt_gen);
  save_checkpoint(step_file(dir, "gen", st.cycle), gen);
  auto ret = st.models.ret->to_checkpoint();
  append_optimizer(ret, *st.opt_ret);
  save_checkpoint(step_file(dir, "ret", st.cycle), ret);
  auto disc = st.models.disc->to_checkpoint();
  append_optimizer(disc, *st.opt_disc);
  save_checkpoint(step_file(dir, "disc", st.cycle), disc);
  if (st.models.teacher) save_checkpoint(step_file(dir, "teacher", st.cycle), st.models.teacher->to_checkpoint());
  const auto path = step_file(dir, "state", st.cycle, ".json");
  std::filesystem::create_directories(path.parent_path());
  std::ofstream(path) << st.counters().dump(2) << '\n';
}

// Highest N with a complete state file, or -1.
inline int latest_cycle(const std::filesystem::path& dir) {
  int best = -1;
  if (!std::filesystem::exists(dir / "state")) return best;
  for (const auto& e : std::filesystem::directory_iterator(dir / "state")) {
    const std::string name = e.path().filename().string();
    if (name.rfind("step-", 0) != 0 || e.path().extension() != ".json") continue;
    try {
      best = std::max(best, std::stoi(name.substr(5)));
    } catch (const std::exception&) {
    }
  }
  return best;
}

inline JointState load_joint_state(const std::filesystem::path& dir, int cycle, const TrainConfig& cfg) {
  ModelSet m;
  const auto gen = load_checkpoint(step_file(dir, "gen", cycle));
  const auto ret = load_checkpoint(step_file(dir, "ret", cycle));
  const auto disc = load_checkpoint(step_file(dir, "disc", cycle));
  m.gen = std::make_unique<Generator>(Generator::from_checkpoint(gen));
  m.ret = std::make_unique<RetrievalModel>(RetrievalModel::from_checkpoint(ret));
  m.disc = std::make_unique<Discriminator>(Discriminator::from_checkpoint(disc));
  if (std::filesystem::exists(step_file(dir, "teacher", cycle)))
    m.teacher.emplace(load_checkpoint(step_file(dir, "teacher", cycle)));
  JointState st(std::move(m), cfg);
  restore_optimizer(gen, *st.opt_gen);
  restore_optimizer(ret, *st.opt_ret);
  restore_optimizer(disc, *st.opt_disc);
  std::ifstream is(step_file(dir, "state", cycle, ".json"));
  if (!is) throw CheckpointError("missing state file for cycle " + std::to_string(cycle));
  st.restore_counters(nlohmann::json::parse(is));
  return st;
}

// ---------------------------------------------------------------------------
// Score-function estimator check on a K-armed categorical bandit.

struct ReinforceReport {
  std::vector<double> exact_grad;
  std::vector<double> weighted_grad;
  double max_abs_diff = 0.0;           // exact vs probability-weighted estimator
  double baseline_max_abs_diff = 0.0;  // exact vs estimator with a constant baseline
  double initial_expected_reward = 0.0;
  double final_expected_reward = 0.0;
  double max_reward = 0.0;
  int steps = 0;
};

inline std::vector<double> softmax(const std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) z += (p[k] = std::exp(logits[k] - m));
  for (double& v : p) v /= z;
  return p;
}

inline double expected_reward(const std::vector<double>& logits, const std::vector<double>& rewards) {
  const auto p = softmax(logits);
  double e = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) e += p[k] * rewards[k];
  return e;
}

// d E[R] / d theta_j = p_j (R_j - E[R]).
inline std::vector<double> exact_bandit_gradient(const std::vector<double>& logits, const std::vector<double>& rewards) {
  const auto p = softmax(logits);
  const double e = expected_reward(logits, rewards);
  std::vector<double> g(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) g[j] = p[j] * (rewards[j] - e);
  return g;
}

// sum_k p_k (R_k - b) grad log p_k, with grad_j log p_k = [j = k] - p_j.
inline std::vector<double> weighted_score_gradient(const std::vector<double>& logits, const std::vector<double>& rewards,
                                                   double baseline = 0.0) {
  const auto p = softmax(logits);
  std::vector<double> g(p.size(), 0.0);
  for (std::size_t k = 0; k < p.size(); ++k)
    for (std::size_t j = 0; j < p.size(); ++j) g[j] += p[k] * (rewards[k] - baseline) * ((j == k ? 1.0 : 0.0) - p[j]);
  return g;
}

// Monte-Carlo score-function estimate from n draws, optionally with the
// batch-mean baseline.
inline std::vector<double> sampled_score_gradient(const std::vector<double>& logits, const std::vector<double>& rewards,
                                                  int n, bool baseline, Rng& rng) {
  const auto p = softmax(logits);
  std::discrete_distribution<int> dist(p.begin(), p.end());
  std::vector<int> arms(n);
  for (int& a : arms) a = dist(rng);
  double b = 0.0;
  if (baseline) {
    for (int a : arms) b += rewards[a];
    b /= n;
  }
  std::vector<double> g(p.size(), 0.0);
  for (int a : arms)
    for (std::size_t j = 0; j < p.size(); ++j)
      g[j] += (rewards[a] - b) * ((static_cast<int>(j) == a ? 1.0 : 0.0) - p[j]) / n;
  return g;
}

// Root-mean-square error of the Monte-Carlo estimate over `trials` repeats.
inline double score_gradient_rmse(const std::vector<double>& logits, const std::vector<double>& rewards, int n,
                                  int trials, Rng& rng) {
  const auto exact = exact_bandit_gradient(logits, rewards);
  double s = 0.0;
  for (int t = 0; t < trials; ++t) {
    const auto g = sampled_score_gradient(logits, rewards, n, false, rng);
    for (std::size_t j = 0; j < g.size(); ++j) s += (g[j] - exact[j]) * (g[j] - exact[j]);
  }
  return std::sqrt(s / trials);
}

// Checks the estimator identity, then trains the policy by gradient ascent
// with the sampled estimator (batch-mean baseline, `batch` draws per step).
inline ReinforceReport reinforce_selfcheck(const std::vector<double>& rewards, Rng& rng, int steps = 2000,
                                           double lr = 0.1, int batch = 16, std::vector<double> logits = {}) {
  const std::size_t k = rewards.size();
  if (k < 2) throw std::invalid_argument("reinforce_selfcheck: need at least 2 arms");
  if (logits.empty()) logits.assign(k, 0.0);
  if (logits.size() != k) throw std::invalid_argument("reinforce_selfcheck: logits/rewards size mismatch");
  ReinforceReport r;
  r.exact_grad = exact_bandit_gradient(logits, rewards);
  r.weighted_grad = weighted_score_gradient(logits, rewards);
  const auto with_b = weighted_score_gradient(logits, rewards, expected_reward(logits, rewards));
  for (std::size_t j = 0; j < k; ++j) {
    r.max_abs_diff = std::max(r.max_abs_diff, std::abs(r.exact_grad[j] - r.weighted_grad[j]));
    r.baseline_max_abs_diff = std::max(r.baseline_max_abs_diff, std::abs(r.exact_grad[j] - with_b[j]));
  }
  r.max_reward = *std::max_element(rewards.begin(), rewards.end());
  r.initial_expected_reward = expected_reward(logits, rewards);
  for (int s = 0; s < steps; ++s) {
    const auto g = sampled_score_gradient(logits, rewards, batch, true, rng);
    for (std::size_t j = 0; j < k; ++j) logits[j] += lr * g[j];
  }
  r.steps = steps;
  r.final_expected_reward = expected_reward(logits, rewards);
  return r;
}

}  // namespace sbir
