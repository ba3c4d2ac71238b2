#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace sbir;

namespace {

DiscriminatorConfig small_disc() { return oracle::tiny_config().disc; }

RasterImage random_image(Rng& rng, int size = 16) {
  RasterImage img(size, size);
  for (float& v : img.pixels) v = static_cast<float>(uniform(rng));
  return img;
}

}  // namespace

TEST(ScorePair, ZeroHeadGivesSigmoidOfBias) {
  Rng rng(1);
  Discriminator d(small_disc(), rng);
  Var w = d.head().weight, b = d.head().bias;
  for (double& v : w.mutable_value()) v = 0.0;
  b.mutable_value()[0] = 0.7;
  auto ph = random_image(rng), sk = random_image(rng);
  EXPECT_NEAR(d.score_pair(ph, sk), 1.0 / (1.0 + std::exp(-0.7)), 1e-15);
}

TEST(ScorePair, RangeDeterminismAndSizeCheck) {
  Rng rng(2);
  Discriminator d(small_disc(), rng);
  for (int i = 0; i < 20; ++i) {
    auto ph = random_image(rng), sk = random_image(rng);
    const double s = d.score_pair(ph, sk);
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
    EXPECT_EQ(s, d.score_pair(ph, sk));
  }
  EXPECT_THROW(d.score_pair(RasterImage(16, 16), RasterImage(8, 8)), std::invalid_argument);
}

TEST(DLoss, Examples) {
  EXPECT_NEAR(d_loss(std::vector<double>{0.5}, std::vector<double>{0.5}), 2 * std::log(2.0), 1e-15);
  EXPECT_NEAR(d_loss(std::vector<double>{1 - 1e-9}, std::vector<double>{1e-9}), 2e-6, 1e-9);  // clamped
  EXPECT_NEAR(d_loss(std::vector<double>{0.9, 0.8}, std::vector<double>{0.1}),
              -(std::log(0.9) + std::log(0.8)) / 2 - std::log(0.9), 1e-15);
  EXPECT_NEAR(d_loss(std::vector<double>{0.9, 0.8}, std::vector<double>{0.1}), 0.2696, 1e-4);
  EXPECT_THROW(d_loss(std::vector<double>{}, std::vector<double>{0.1}), std::invalid_argument);
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> r{uniform(rng), uniform(rng)}, f{uniform(rng)};
    EXPECT_GE(d_loss(r, f), 0.0);
  }
}

TEST(DLoss, GradientWrtScoresAndParameters) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Var r = Var::parameter({3, 1}, {uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95)});
    Var f = Var::parameter({2, 1}, {uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95)});
    EXPECT_LT(oracle::grad_check([&] { return d_loss(r, f); }, {r, f}), 1e-4);
  }
  DiscriminatorConfig cfg = small_disc();
  cfg.widths = {2, 3};
  Discriminator d(cfg, rng);
  std::vector<RasterImage> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back(random_image(rng));
  std::vector<Var> ps;
  for (const auto& p : d.parameters()) ps.push_back(p.var);
  auto loss = [&] {
    return d_loss(d.forward(pair_batch({&imgs[0]}, {&imgs[1]})), d.forward(pair_batch({&imgs[2]}, {&imgs[3]})));
  };
  EXPECT_LT(oracle::grad_check(loss, ps), 1e-4);
}

TEST(CertaintyWeights, MatchDirectScoresAndCarryNoGraph) {
  Rng rng(5);
  Discriminator d(small_disc(), rng);
  std::vector<RasterImage> ph, sk;
  for (int i = 0; i < 5; ++i) {
    ph.push_back(random_image(rng));
    sk.push_back(random_image(rng));
  }
  std::vector<PairRef> refs;
  for (int i = 0; i < 5; ++i) refs.push_back({&ph[i], &sk[i]});
  refs.push_back(refs[0]);
  const auto w = d.certainty_weights(refs, 2);
  ASSERT_EQ(w.size(), 6u);
  EXPECT_EQ(w[0], w[5]);
  for (int i = 0; i < 5; ++i) {
    EXPECT_NEAR(w[i], d.score_pair(ph[i], sk[i]), 1e-15);
    EXPECT_GT(w[i], 0.0);
    EXPECT_LT(w[i], 1.0);
  }
  for (const auto& p : d.parameters()) EXPECT_TRUE(p.var.grad().empty());
}

TEST(CriticPath, NoGradientReachesTheGenerator) {
  // Reward inputs are rasters of sampled sketches: plain data with no graph.
  auto cfg = oracle::tiny_config();
  auto data = oracle::tiny_data(cfg, 4, 4);
  auto m = ModelSet::fresh(cfg);
  std::vector<const RasterImage*> photos{&data.unlabeled[0].photo, &data.unlabeled[1].photo};
  auto pseudo = make_pseudo_pairs(photos, *m.gen, PseudoMode::greedy, 1.0, nullptr, cfg.raster_pad);
  Var scores = m.disc->forward(pair_batch(photos, {&pseudo[0].raster, &pseudo[1].raster}));
  backward(ops::sum(scores));
  for (const auto& p : m.gen->parameters()) EXPECT_TRUE(p.var.grad().empty()) << p.name;
  bool any = false;
  for (const auto& p : m.disc->parameters()) any = any || !p.var.grad().empty();
  EXPECT_TRUE(any);
}

TEST(Checkpoint, DiscriminatorRoundTrip) {
  Rng rng(6);
  Discriminator d(small_disc(), rng);
  auto e = Discriminator::from_checkpoint(d.to_checkpoint());
  auto a = random_image(rng), b = random_image(rng);
  EXPECT_EQ(d.score_pair(a, b), e.score_pair(a, b));
}
