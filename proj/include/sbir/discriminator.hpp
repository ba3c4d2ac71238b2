#pragma once

// Pair critic: scores a (photo, rasterized sketch) pair as real or generated.
// The two images are stacked into six channels and passed through strided
// leaky-ReLU blocks; a 1x1 convolution produces patch logits whose spatial
// mean goes through a sigmoid.

#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sbir/autograd.hpp"
#include "sbir/batch.hpp"
#include "sbir/checkpoint.hpp"
#include "sbir/nn.hpp"
#include "sbir/ops.hpp"
#include "sbir/rng.hpp"

namespace sbir {

struct DiscriminatorConfig {
  int image_size = 64;
  std::vector<int> widths{32, 64, 128};
  double slope = 0.2;

  void validate() const {
    if (widths.empty()) throw std::invalid_argument("discriminator: no blocks");
    if ((image_size >> widths.size()) < 1) throw std::invalid_argument("discriminator: image too small");
  }
};

inline void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
  j = {{"image_size", c.image_size}, {"widths", c.widths}, {"slope", c.slope}};
}

inline void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
  j.at("image_size").get_to(c.image_size);
  j.at("widths").get_to(c.widths);
  j.at("slope").get_to(c.slope);
}

struct PairRef {
  const RasterImage* photo;
  const RasterImage* sketch;
};

class Discriminator {
 public:
  Discriminator(DiscriminatorConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    blocks_ = nn::ConvStack(6, cfg_.widths, rng, cfg_.slope);
    head_ = nn::Conv2d(cfg_.widths.back(), 1, 1, 1, 1, 0, 0, rng, 1.0);
  }

  const DiscriminatorConfig& config() const { return cfg_; }

  // pairs [N, 6, H, W] -> scores [N, 1] in (0, 1).
  Var forward(const Var& pairs) const {
    if (pairs.shape().size() != 4 || pairs.dim(1) != 6 || pairs.dim(2) != cfg_.image_size ||
        pairs.dim(3) != cfg_.image_size)
      throw std::invalid_argument("discriminator: expected pairs [N,6," + std::to_string(cfg_.image_size) + "," +
                                  std::to_string(cfg_.image_size) + "], got " + shape_str(pairs.shape()));
    return ops::sigmoid(ops::global_avg_pool(head_(blocks_(pairs))));
  }

  double score_pair(const RasterImage& photo, const RasterImage& sketch) const {
    if (photo.height != sketch.height || photo.width != sketch.width)
      throw std::invalid_argument("score_pair: photo is " + std::to_string(photo.height) + "x" +
                                  std::to_string(photo.width) + ", sketch is " + std::to_string(sketch.height) + "x" +
                                  std::to_string(sketch.width));
    NoGradGuard no_grad;
    return forward(pair_batch({&photo}, {&sketch})).item();
  }

  // Frozen scores; nothing here records a graph, so no gradient can reach
  // the critic or whatever produced the sketches.
  std::vector<double> certainty_weights(const std::vector<PairRef>& pairs, int chunk = 64) const {
    NoGradGuard no_grad;
    std::vector<double> out;
    out.reserve(pairs.size());
    for (std::size_t s = 0; s < pairs.size(); s += chunk) {
      std::vector<const RasterImage*> ph, sk;
      for (std::size_t i = s; i < std::min(pairs.size(), s + chunk); ++i) {
        ph.push_back(pairs[i].photo);
        sk.push_back(pairs[i].sketch);
      }
      Var v = forward(pair_batch(ph, sk));
      out.insert(out.end(), v.value().begin(), v.value().end());
    }
    return out;
  }

  nn::ParamList parameters() const {
    nn::ParamList out;
    blocks_.collect("blocks", out);
    head_.collect("head", out);
    return out;
  }

  // Final 1x1 layer, exposed for tests that pin its weights.
  const nn::Conv2d& head() const { return head_; }

  Checkpoint to_checkpoint() const {
    Checkpoint ck;
    ck.kind = "discriminator";
    ck.config = cfg_;
    append_params(ck, parameters());
    return ck;
  }

  static Discriminator from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "discriminator") throw CheckpointError("expected a discriminator checkpoint, got '" + ck.kind + "'");
    Rng rng(0);
    Discriminator d(ck.config.get<DiscriminatorConfig>(), rng);
    restore_params(ck, d.parameters());
    return d;
  }

 private:
  DiscriminatorConfig cfg_;
  nn::ConvStack blocks_;
  nn::Conv2d head_;
};

}  // namespace sbir
