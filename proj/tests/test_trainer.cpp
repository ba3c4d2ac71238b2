#include <gtest/gtest.h>

#include <filesystem>
#include <unistd.h>

#include "oracles.hpp"

using namespace sbir;

namespace {

std::vector<std::string> phases(const MetricLog& log) {
  std::vector<std::string> out;
  for (const auto& r : log.records()) out.push_back(r.at("phase").get<std::string>());
  return out;
}

std::string dump_all(const MetricLog& log) {
  std::string s;
  for (const auto& r : log.records()) s += r.dump() + "\n";
  return s;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("sbir_trainer_" + std::to_string(::getpid()) + "_" + name);
  std::filesystem::remove_all(p);
  return p;
}

// Shared fixture: one tiny pre-trained model set.
struct Tiny {
  TrainConfig cfg = oracle::tiny_config(3);
  TrainData data = oracle::tiny_data(cfg, 8, 8);
  ModelSet pre = oracle::pretrained_tiny(cfg, data);
};

const Tiny& tiny() {
  static const Tiny t;
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Pre-training

TEST(Pretrain, OneEpochOnTenPairsIsOneStep) {
  auto cfg = oracle::tiny_config();
  cfg.batch_gen = 64;
  auto data = oracle::tiny_data(cfg, 10, 0);
  Rng init(1), rng(2);
  Generator g(cfg.gen, init);
  MetricLog log;
  auto r = pretrain_generator(g, data, cfg, log, rng);
  EXPECT_EQ(r.steps, 1);
  EXPECT_EQ(log.records().size(), 1u);
  TrainData empty = data;
  empty.labeled.clear();
  EXPECT_THROW(pretrain_generator(g, empty, cfg, log, rng), std::invalid_argument);
}

TEST(Pretrain, GeneratorLossDecreasesAndReloadIsExact) {
  auto cfg = oracle::tiny_config();
  cfg.pretrain_gen_epochs = 30;
  cfg.pretrain_lr = 1e-2;
  auto data = oracle::tiny_data(cfg, 16, 0);
  Rng init(1), rng(2);
  Generator g(cfg.gen, init);
  const double before = generator_validation_loss(g, data.labeled, cfg.kl_weight);
  MetricLog log;
  pretrain_generator(g, data, cfg, log, rng);
  const double after = generator_validation_loss(g, data.labeled, cfg.kl_weight);
  EXPECT_LT(after, before);
  auto path = scratch("gen.ckpt");
  save_checkpoint(path, g.to_checkpoint());
  auto h = Generator::from_checkpoint(load_checkpoint(path));
  EXPECT_EQ(generator_validation_loss(h, data.labeled, cfg.kl_weight), after);
  std::filesystem::remove_all(path);
}

TEST(Pretrain, RetrievalTeacherSnapshotAndSmoke) {
  auto cfg = oracle::tiny_config();
  cfg.pretrain_ret_epochs = 40;
  cfg.pretrain_lr = 3e-3;
  cfg.batch_ret = 8;
  auto spec = oracle::tiny_spec();
  auto corpus = make_synthetic_corpus(spec, 48, 0, 11);
  auto data = TrainData::from_corpus(corpus, cfg);
  auto held = make_synthetic_corpus(spec, 16, 0, 12);
  auto eval = EvalData::from_pairs(held.labeled, 16, cfg.raster_pad);

  Rng init(1), rng(2);
  RetrievalModel f(cfg.ret, init);
  MetricLog log;
  PretrainResult res;
  TeacherSnapshot t = pretrain_retrieval(f, data, cfg, log, rng, &res);
  EXPECT_EQ(oracle::values(t.model().parameters()), oracle::values(f.parameters()));
  // At this size the model fits its training pairs; held-out ranking is only
  // reported, it is too noisy over 16 items to assert on.
  EXPECT_LT(res.last_loss, res.first_loss);
  const auto fit = EvalData::from_pairs(corpus.labeled, 16, cfg.raster_pad);
  EXPECT_GT(arp(rank_table(f, fit.view())), 0.7);  // chance is 0.5
  RecordProperty("held_out_arp", std::to_string(arp(rank_table(f, eval.view()))));

  TrainData one = data;
  one.labeled.resize(1);
  EXPECT_THROW(pretrain_retrieval(f, one, cfg, log, rng), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Pseudo pairs

TEST(PseudoPairs, CountValidityAndGreedyDeterminism) {
  const auto& t = tiny();
  std::vector<const RasterImage*> photos;
  for (const auto& u : t.data.unlabeled) photos.push_back(&u.photo);
  auto a = make_pseudo_pairs(photos, *t.pre.gen, PseudoMode::greedy, 1.0, nullptr, t.cfg.raster_pad);
  auto b = make_pseudo_pairs(photos, *t.pre.gen, PseudoMode::greedy, 1.0, nullptr, t.cfg.raster_pad);
  ASSERT_EQ(a.size(), photos.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NO_THROW(a[i].sketch.validate(t.cfg.gen.max_length));
    EXPECT_EQ(a[i].photo, photos[i]);
    EXPECT_EQ(a[i].sketch, b[i].sketch);
    EXPECT_EQ(a[i].raster.pixels, b[i].raster.pixels);
  }
  Rng rng(4);
  auto s = make_pseudo_pairs(photos, *t.pre.gen, PseudoMode::stochastic, 1.0, &rng, t.cfg.raster_pad);
  EXPECT_EQ(s.size(), photos.size());
  for (const auto& p : s) EXPECT_NO_THROW(p.sketch.validate(t.cfg.gen.max_length));
}

// ---------------------------------------------------------------------------
// Retrieval step

namespace {

struct StepFixture {
  TrainConfig cfg;
  ModelSet m;
  std::vector<PseudoPair> pseudo;
  PairBatch lab, unl;

  explicit StepFixture(const Tiny& t) : cfg(t.cfg), m(t.pre.clone()) {
    std::vector<const RasterImage*> photos;
    for (int i = 0; i < 4; ++i) photos.push_back(&t.data.unlabeled[i].photo);
    pseudo = make_pseudo_pairs(photos, *m.gen, PseudoMode::greedy, 1.0, nullptr, cfg.raster_pad);
    lab = labeled_batch(t.data, {0, 1, 2, 3});
    unl = pseudo_batch(pseudo);
  }
};

// Eq. 7 recomputed from per-image embeddings and the same negatives.
double oracle_total(const StepFixture& s, const std::vector<double>& w, Rng rng_lab, Rng rng_unl) {
  const auto& f = *s.m.ret;
  const int n = static_cast<int>(s.lab.size());
  auto emb = [&](const std::vector<const RasterImage*>& v) { return f.embed_all(v); };
  const auto lp = emb(s.lab.photos), ls = emb(s.lab.sketches), up = emb(s.unl.photos), us = emb(s.unl.sketches);
  const auto nl = random_negatives(rng_lab, n), nu = random_negatives(rng_unl, n);
  double trip_l = 0.0, trip_u = 0.0;
  for (int i = 0; i < n; ++i) {
    trip_l += oracle::triplet(ls[i], lp[i], lp[nl[i]], s.cfg.margin) / n;
    trip_u += w[i] * oracle::triplet(us[i], up[i], up[nu[i]], s.cfg.margin) / n;
  }
  double kd = 0.0;
  if (s.cfg.tr && s.cfg.lambda_kd > 0) {
    const auto& t = s.m.teacher->model();
    const auto tlp = t.embed_all(s.lab.photos), tls = t.embed_all(s.lab.sketches);
    const auto tup = t.embed_all(s.unl.photos), tus = t.embed_all(s.unl.sketches);
    for (int i = 0; i < n; ++i) {
      kd += std::abs(oracle::dist(tlp[i], tls[i]) - oracle::dist(lp[i], ls[i])) / (2 * n);
      kd += std::abs(oracle::dist(tup[i], tus[i]) - oracle::dist(up[i], us[i])) / (2 * n);
    }
  }
  return trip_l + trip_u + s.cfg.lambda_kd * kd;
}

}  // namespace

TEST(RetrievalStep, TotalMatchesIndependentRecomputation) {
  for (bool iw : {true, false}) {
    StepFixture s(tiny());
    s.cfg.iw = iw;
    std::vector<PairRef> refs;
    for (std::size_t j = 0; j < s.unl.size(); ++j) refs.push_back({s.unl.photos[j], s.unl.sketches[j]});
    const auto w = iw ? s.m.disc->certainty_weights(refs) : std::vector<double>(4, 1.0);
    Rng rl(7), ru(8);
    const double want = oracle_total(s, w, rl, ru);
    nn::Adam opt(s.m.ret->parameters(), s.cfg.lr);
    auto r = retrieval_step(s.lab, &s.unl, *s.m.ret, opt, &*s.m.teacher, s.m.disc.get(), s.cfg, rl, ru);
    EXPECT_NEAR(r.total, want, 1e-9) << "iw=" << iw;
    EXPECT_NEAR(r.total, r.trip_l + r.trip_u + s.cfg.lambda_kd * r.kd, 1e-9);
    EXPECT_EQ(r.weights, w);
  }
}

TEST(RetrievalStep, ZeroWeightsAndNoDistillationLeaveLabeledTriplets) {
  StepFixture s(tiny());
  s.cfg.lambda_kd = 0.0;
  Var w = s.m.disc->head().weight, b = s.m.disc->head().bias;
  for (double& v : w.mutable_value()) v = 0.0;
  b.mutable_value()[0] = -1000.0;  // sigmoid underflows to exactly 0
  Rng rl(7), ru(8);
  nn::Adam opt(s.m.ret->parameters(), s.cfg.lr);
  Rng rl2 = rl;
  const auto lp = s.m.ret->embed_all(s.lab.photos), ls = s.m.ret->embed_all(s.lab.sketches);
  const auto neg = random_negatives(rl2, 4);
  double trip_l = 0.0;
  for (int i = 0; i < 4; ++i) trip_l += oracle::triplet(ls[i], lp[i], lp[neg[i]], s.cfg.margin) / 4;
  auto r = retrieval_step(s.lab, &s.unl, *s.m.ret, opt, &*s.m.teacher, s.m.disc.get(), s.cfg, rl, ru);
  for (double x : r.weights) EXPECT_EQ(x, 0.0);
  EXPECT_EQ(r.trip_u, 0.0);
  EXPECT_NEAR(r.total, trip_l, 1e-12);
}

TEST(RetrievalStep, IsolationAndErrors) {
  StepFixture s(tiny());
  const auto g0 = oracle::values(s.m.gen->parameters()), d0 = oracle::values(s.m.disc->parameters());
  const auto t0 = oracle::values(s.m.teacher->model().parameters()), f0 = oracle::values(s.m.ret->parameters());
  nn::Adam opt(s.m.ret->parameters(), s.cfg.lr);
  Rng rl(1), ru(2);
  retrieval_step(s.lab, &s.unl, *s.m.ret, opt, &*s.m.teacher, s.m.disc.get(), s.cfg, rl, ru);
  EXPECT_EQ(oracle::values(s.m.gen->parameters()), g0);
  EXPECT_EQ(oracle::values(s.m.disc->parameters()), d0);
  EXPECT_EQ(oracle::values(s.m.teacher->model().parameters()), t0);
  EXPECT_NE(oracle::values(s.m.ret->parameters()), f0);
  PairBatch one{{s.lab.photos[0]}, {s.lab.sketches[0]}};
  EXPECT_THROW(retrieval_step(one, nullptr, *s.m.ret, opt, nullptr, nullptr, s.cfg, rl, ru), std::invalid_argument);
  PairBatch three{{s.unl.photos.begin(), s.unl.photos.begin() + 3}, {s.unl.sketches.begin(), s.unl.sketches.begin() + 3}};
  EXPECT_THROW(retrieval_step(s.lab, &three, *s.m.ret, opt, nullptr, nullptr, s.cfg, rl, ru), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Critic step

TEST(DiscriminatorStep, LossMatchesScoresAndTouchesOnlyTheCritic) {
  StepFixture s(tiny());
  std::vector<double> real, fake;
  for (std::size_t i = 0; i < 4; ++i) {
    real.push_back(s.m.disc->score_pair(*s.lab.photos[i], *s.lab.sketches[i]));
    fake.push_back(s.m.disc->score_pair(*s.unl.photos[i], *s.unl.sketches[i]));
  }
  const auto g0 = oracle::values(s.m.gen->parameters()), f0 = oracle::values(s.m.ret->parameters());
  const auto d0 = oracle::values(s.m.disc->parameters());
  nn::Adam opt(s.m.disc->parameters(), s.cfg.lr);
  auto r = discriminator_step(s.lab, s.unl, *s.m.disc, opt);
  EXPECT_NEAR(r.loss, d_loss(real, fake), 1e-12);
  EXPECT_EQ(oracle::values(s.m.gen->parameters()), g0);
  EXPECT_EQ(oracle::values(s.m.ret->parameters()), f0);
  EXPECT_NE(oracle::values(s.m.disc->parameters()), d0);
  EXPECT_THROW(discriminator_step(PairBatch{}, s.unl, *s.m.disc, opt), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Reward

TEST(Reward, ExamplesAndLinearity) {
  TrainConfig cfg;
  EXPECT_NEAR(compute_reward(0.2, 0.8, cfg).reward, 0.6, 1e-15);
  cfg.lambda_r1 = 0.0;
  EXPECT_EQ(compute_reward(0.7, 0.35, cfg).reward, 0.35);
  cfg.lambda_r1 = 1.0;
  cfg.lambda_r2 = 0.0;
  EXPECT_EQ(compute_reward(0.0, 0.9, cfg).reward, 0.0);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    TrainConfig a;
    a.lambda_r1 = uniform(rng, 0, 2);
    a.lambda_r2 = uniform(rng, 0, 2);
    const double t = uniform(rng, 0, 1), d = uniform(rng, 0, 1), c = uniform(rng, 0.1, 5);
    TrainConfig b = a;
    b.lambda_r1 *= c;
    b.lambda_r2 *= c;
    const auto ra = compute_reward(t, d, a);
    EXPECT_NEAR(compute_reward(t, d, b).reward, c * ra.reward, 1e-12);
    EXPECT_NEAR(ra.reward, -a.lambda_r1 * ra.triplet + a.lambda_r2 * ra.critic, 1e-15);
  }
}

TEST(Reward, FromModelsUsesSketchAsAnchor) {
  const auto& t = tiny();
  const auto& ph = t.data.labeled[0].photo;
  const auto& sk = t.data.labeled_rasters[0];
  const auto& neg = t.data.labeled[1].photo;
  auto r = compute_reward(ph, sk, neg, *t.pre.ret, *t.pre.disc, t.cfg);
  const auto& f = *t.pre.ret;
  EXPECT_NEAR(r.triplet, oracle::triplet(f.embed(sk), f.embed(ph), f.embed(neg), t.cfg.margin), 1e-12);
  EXPECT_EQ(r.critic, t.pre.disc->score_pair(ph, sk));
  EXPECT_THROW(compute_reward(ph, sk, ph, f, *t.pre.disc, t.cfg), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Generator step

namespace {

std::vector<const LabeledPair*> vae_batch_of(const TrainData& d) {
  return {&d.labeled[0], &d.labeled[1], &d.labeled[2], &d.labeled[3]};
}

std::vector<const RasterImage*> rl_photos_of(const TrainData& d) {
  return {&d.labeled[4].photo, &d.labeled[5].photo, &d.unlabeled[0].photo, &d.unlabeled[1].photo};
}

}  // namespace

TEST(GeneratorStep, ZeroPolicyWeightEqualsPureVaeStep) {
  const auto& t = tiny();
  auto cfg = t.cfg;
  cfg.lambda_g = 0.0;
  auto a = t.pre.clone(), b = t.pre.clone();
  nn::Adam oa(a.gen->parameters(), cfg.lr), ob(b.gen->parameters(), cfg.lr);
  Rng ra(9), rb(9);
  auto ga = generator_rl_step(vae_batch_of(t.data), rl_photos_of(t.data), *a.gen, oa, *a.ret, *a.disc, cfg, ra);
  generator_rl_step(vae_batch_of(t.data), rl_photos_of(t.data), *b.gen, ob, *b.ret, *b.disc, cfg, rb,
                    GenPaths::supervised_only);
  EXPECT_TRUE(ga.policy);
  EXPECT_EQ(oracle::values(a.gen->parameters()), oracle::values(b.gen->parameters()));
}

TEST(GeneratorStep, EqualRewardsWithBaselineGiveNoUpdate) {
  const auto& t = tiny();
  auto cfg = t.cfg;
  cfg.lambda_r1 = 0.0;  // reward = critic score, made constant below
  auto m = t.pre.clone();
  Var w = m.disc->head().weight, b = m.disc->head().bias;
  for (double& v : w.mutable_value()) v = 0.0;
  b.mutable_value()[0] = 0.3;
  const auto before = oracle::values(m.gen->parameters());
  nn::Adam opt(m.gen->parameters(), cfg.lr);
  Rng rng(10);
  auto r = generator_rl_step({}, rl_photos_of(t.data), *m.gen, opt, *m.ret, *m.disc, cfg, rng, GenPaths::rl_only);
  ASSERT_EQ(r.rewards.size(), 4u);
  for (const auto& x : r.rewards) {
    EXPECT_EQ(x.reward, r.rewards[0].reward);
    EXPECT_EQ(x.baseline, x.reward);
  }
  EXPECT_EQ(oracle::values(m.gen->parameters()), before);
  for (const auto& p : m.gen->output_parameters())
    for (double g : p.var.grad()) EXPECT_EQ(g, 0.0);
}

TEST(GeneratorStep, PolicyPathTouchesOnlyOutputLayer) {
  const auto& t = tiny();
  auto m = t.pre.clone();
  std::map<std::string, std::vector<double>> before;
  for (const auto& p : m.gen->parameters()) before[p.name].assign(p.var.value().begin(), p.var.value().end());
  nn::Adam opt(m.gen->parameters(), t.cfg.lr);
  Rng rng(11);
  auto r = generator_rl_step({}, rl_photos_of(t.data), *m.gen, opt, *m.ret, *m.disc, t.cfg, rng, GenPaths::rl_only);
  EXPECT_TRUE(r.policy);
  EXPECT_FALSE(r.supervised);
  int moved = 0;
  for (const auto& p : m.gen->parameters()) {
    const bool out = p.name.rfind("decoder.output.", 0) == 0;
    const std::vector<double> now(p.var.value().begin(), p.var.value().end());
    if (out) moved += now != before[p.name];
    else EXPECT_EQ(now, before[p.name]) << p.name;
  }
  EXPECT_EQ(moved, 2);
  EXPECT_EQ(oracle::values(m.ret->parameters()), oracle::values(t.pre.ret->parameters()));
  EXPECT_EQ(oracle::values(m.disc->parameters()), oracle::values(t.pre.disc->parameters()));
}

// ---------------------------------------------------------------------------
// Joint loop

namespace {

TrainConfig loop_config() {
  auto cfg = oracle::tiny_config(3);
  cfg.k_r = 5;
  cfg.k_g = 5;
  return cfg;
}

}  // namespace

TEST(JointTrain, ThreeCyclesInterleaveFifteenOfEach) {
  const auto& t = tiny();
  auto cfg = loop_config();
  JointState st(t.pre.clone(), cfg);
  MetricLog log;
  joint_train(st, t.data, cfg, 3, log);
  const auto ph = phases(log);
  std::vector<std::string> want;
  for (int c = 0; c < 3; ++c) {
    for (int r = 0; r < 5; ++r) {
      want.push_back("retrieval");
      want.push_back("discriminator");
    }
    for (int g = 0; g < 5; ++g) want.push_back("generator");
  }
  EXPECT_EQ(ph, want);
  for (std::size_t i = 0; i < log.records().size(); ++i) EXPECT_EQ(log.records()[i].at("step"), i);
  EXPECT_EQ(st.cycle, 3);
}

TEST(JointTrain, FixedSeedIsBitIdentical) {
  const auto& t = tiny();
  auto cfg = loop_config();
  std::string logs[2];
  std::vector<double> params[2];
  for (int k = 0; k < 2; ++k) {
    JointState st(t.pre.clone(), cfg);
    MetricLog log;
    joint_train(st, t.data, cfg, 2, log);
    logs[k] = dump_all(log);
    params[k] = oracle::values(st.models.ret->parameters());
  }
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(params[0], params[1]);
}

TEST(JointTrain, ResumeEqualsSingleRun) {
  const auto& t = tiny();
  auto cfg = loop_config();
  JointState whole(t.pre.clone(), cfg);
  MetricLog log_whole;
  joint_train(whole, t.data, cfg, 5, log_whole);

  auto dir = scratch("resume");
  JointState first(t.pre.clone(), cfg);
  MetricLog log_a;
  joint_train(first, t.data, cfg, 3, log_a);
  save_joint_state(dir, first);
  EXPECT_EQ(latest_cycle(dir), 3);
  JointState second = load_joint_state(dir, 3, cfg);
  MetricLog log_b;
  joint_train(second, t.data, cfg, 2, log_b);

  EXPECT_EQ(dump_all(log_a) + dump_all(log_b), dump_all(log_whole));
  EXPECT_EQ(oracle::values(second.models.gen->parameters()), oracle::values(whole.models.gen->parameters()));
  EXPECT_EQ(oracle::values(second.models.ret->parameters()), oracle::values(whole.models.ret->parameters()));
  EXPECT_EQ(oracle::values(second.models.disc->parameters()), oracle::values(whole.models.disc->parameters()));
  std::filesystem::remove_all(dir);
}

TEST(JointTrain, MissingModelsAreRejected) {
  const auto& t = tiny();
  auto cfg = loop_config();
  JointState st(t.pre.clone(), cfg);
  st.models.gen.reset();
  MetricLog log;
  EXPECT_THROW(joint_train(st, t.data, cfg, 1, log), std::invalid_argument);
  EXPECT_EQ(latest_cycle(scratch("none")), -1);
}

// The supervised baseline ignores D_U entirely and equals a hand-written
// loop of labeled-only retrieval steps.
TEST(JointTrain, SupervisedBaselineMatchesDirectLoop) {
  const auto& t = tiny();
  auto cfg = variant_supervised().apply(loop_config());
  JointState st(t.pre.clone(), cfg);
  MetricLog log;
  joint_train(st, t.data, cfg, 2, log);
  EXPECT_EQ(phases(log), std::vector<std::string>(10, "retrieval"));

  auto m = t.pre.clone();
  nn::Adam opt(m.ret->parameters(), cfg.lr);
  Rng rl(mix_seed(cfg.seed, 201)), ru(0);
  for (int s = 0; s < 10; ++s)
    retrieval_step(labeled_batch(t.data, sample_indices(rl, 8, 4)), nullptr, *m.ret, opt, nullptr, nullptr, cfg, rl,
                   ru);
  EXPECT_EQ(oracle::values(st.models.ret->parameters()), oracle::values(m.ret->parameters()));

  TrainData other = t.data;
  other.unlabeled.resize(2);
  JointState st2(t.pre.clone(), cfg);
  MetricLog log2;
  joint_train(st2, other, cfg, 2, log2);
  EXPECT_EQ(oracle::values(st2.models.ret->parameters()), oracle::values(st.models.ret->parameters()));
  EXPECT_EQ(oracle::values(st.models.gen->parameters()), oracle::values(t.pre.gen->parameters()));
}

// ---------------------------------------------------------------------------
// Score-function estimator

TEST(Reinforce, ExactIdentityAndTraining) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto rewards = oracle::randn(rng, 5);
    auto logits = oracle::randn(rng, 5);
    auto r = reinforce_selfcheck(rewards, rng, 0, 0.1, 16, logits);
    EXPECT_LE(r.max_abs_diff, 1e-9);
    EXPECT_LE(r.baseline_max_abs_diff, 1e-9);
  }
  auto eq = reinforce_selfcheck({0.4, 0.4, 0.4, 0.4, 0.4}, rng, 0);
  for (double g : eq.exact_grad) EXPECT_NEAR(g, 0.0, 1e-15);
  auto r = reinforce_selfcheck({0, 0, 0, 0, 1}, rng, 2000, 0.1);
  EXPECT_GE(r.final_expected_reward, 0.99 * r.max_reward);
  EXPECT_THROW(reinforce_selfcheck({1.0}, rng), std::invalid_argument);
}

TEST(Reinforce, MonteCarloErrorShrinksAsInverseSqrtN) {
  Rng rng(2);
  const std::vector<double> logits{0.3, -0.2, 0.5, 0.0, -0.7}, rewards{1.0, 0.2, -0.5, 0.8, 0.1};
  const double e2 = score_gradient_rmse(logits, rewards, 100, 400, rng);
  const double e4 = score_gradient_rmse(logits, rewards, 10000, 100, rng);
  const double ratio = e2 / e4;
  EXPECT_GT(ratio, 10.0 * 0.8);
  EXPECT_LT(ratio, 10.0 * 1.25);
}
