#pragma once

// Siamese embedding network with residual soft spatial attention, a frozen
// teacher copy for distillation, and nearest-neighbour gallery ranking.

#include <algorithm>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sbir/autograd.hpp"
#include "sbir/batch.hpp"
#include "sbir/checkpoint.hpp"
#include "sbir/losses.hpp"
#include "sbir/nn.hpp"
#include "sbir/ops.hpp"
#include "sbir/rng.hpp"

namespace sbir {

struct RetrievalConfig {
  int image_size = 64;
  std::vector<int> widths{32, 64, 96, 128};
  int embed_dim = 64;

  void validate() const {
    if (widths.empty()) throw std::invalid_argument("retrieval: no backbone blocks");
    if ((image_size % (1 << widths.size())) != 0 || (image_size >> widths.size()) < 1)
      throw std::invalid_argument("retrieval: image_size incompatible with backbone depth");
    if (embed_dim < 1) throw std::invalid_argument("retrieval: embed_dim must be positive");
  }
};

inline void to_json(nlohmann::json& j, const RetrievalConfig& c) {
  j = {{"image_size", c.image_size}, {"widths", c.widths}, {"embed_dim", c.embed_dim}};
}

inline void from_json(const nlohmann::json& j, RetrievalConfig& c) {
  j.at("image_size").get_to(c.image_size);
  j.at("widths").get_to(c.widths);
  j.at("embed_dim").get_to(c.embed_dim);
}

struct RetrievalOutput {
  Var embedding;  // [N, d]
  Var pooled;     // [N, C] penultimate features
  Var attention;  // [N, 1, h', w']
};

class RetrievalModel {
 public:
  RetrievalModel(RetrievalConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    backbone_ = nn::ConvStack(3, cfg_.widths, rng);
    const int c = cfg_.widths.back();
    attention_ = nn::Conv2d(c, 1, 1, 1, 1, 0, 0, rng, 1.0);
    head_ = nn::Linear(c, cfg_.embed_dim, rng, 1.0);
  }

  const RetrievalConfig& config() const { return cfg_; }

  // F' -> a = softmax(conv1x1(F')) -> F = F' + F' * a -> GAP -> linear.
  RetrievalOutput forward(const Var& images) const {
    if (images.shape().size() != 4 || images.dim(1) != 3 || images.dim(2) != cfg_.image_size ||
        images.dim(3) != cfg_.image_size)
      throw std::invalid_argument("retrieval: expected images [N,3," + std::to_string(cfg_.image_size) + "," +
                                  std::to_string(cfg_.image_size) + "], got " + shape_str(images.shape()));
    Var f = features(images);
    Var a = ops::spatial_softmax(attention_(f));
    Var pooled = ops::global_avg_pool(ops::add(f, ops::mul_spatial(f, a)));
    return {head_(pooled), pooled, a};
  }

  // Backbone map F' before attention.
  Var features(const Var& images) const { return backbone_(images); }

  std::vector<double> embed(const RasterImage& image) const {
    NoGradGuard no_grad;
    Var e = forward(image_batch(image)).embedding;
    return {e.value().begin(), e.value().end()};
  }

  // Embeddings of many images as rows, computed in chunks without a graph.
  std::vector<std::vector<double>> embed_all(const std::vector<const RasterImage*>& images, int chunk = 64) const {
    NoGradGuard no_grad;
    std::vector<std::vector<double>> out;
    out.reserve(images.size());
    for (std::size_t s = 0; s < images.size(); s += chunk) {
      std::vector<const RasterImage*> part(images.begin() + s, images.begin() + std::min(images.size(), s + chunk));
      Var e = forward(image_batch(part)).embedding;
      for (std::size_t i = 0; i < part.size(); ++i) out.push_back(row(e, static_cast<int>(i)));
    }
    return out;
  }

  std::vector<std::vector<double>> pooled_all(const std::vector<const RasterImage*>& images, int chunk = 64) const {
    NoGradGuard no_grad;
    std::vector<std::vector<double>> out;
    for (std::size_t s = 0; s < images.size(); s += chunk) {
      std::vector<const RasterImage*> part(images.begin() + s, images.begin() + std::min(images.size(), s + chunk));
      Var p = forward(image_batch(part)).pooled;
      for (std::size_t i = 0; i < part.size(); ++i) out.push_back(row(p, static_cast<int>(i)));
    }
    return out;
  }

  nn::ParamList parameters() const {
    nn::ParamList out;
    backbone_.collect("backbone", out);
    attention_.collect("attention", out);
    head_.collect("head", out);
    return out;
  }

  Checkpoint to_checkpoint(bool read_only = false) const {
    Checkpoint ck;
    ck.kind = "retrieval";
    ck.config = cfg_;
    ck.read_only = read_only;
    append_params(ck, parameters());
    return ck;
  }

  static RetrievalModel from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "retrieval") throw CheckpointError("expected a retrieval checkpoint, got '" + ck.kind + "'");
    Rng rng(0);
    RetrievalModel m(ck.config.get<RetrievalConfig>(), rng);
    restore_params(ck, m.parameters());
    return m;
  }

 private:
  RetrievalConfig cfg_;
  nn::ConvStack backbone_;
  nn::Conv2d attention_;
  nn::Linear head_;
};

// Frozen deep copy of a retrieval model. Its parameters never require
// gradients and the copy shares no storage with the source.
class TeacherSnapshot {
 public:
  explicit TeacherSnapshot(const RetrievalModel& source)
      : model_(std::make_shared<RetrievalModel>(RetrievalModel::from_checkpoint(source.to_checkpoint()))) {
    freeze();
  }
  explicit TeacherSnapshot(const Checkpoint& ck)
      : model_(std::make_shared<RetrievalModel>(RetrievalModel::from_checkpoint(ck))) {
    freeze();
  }

  const RetrievalModel& model() const { return *model_; }
  std::vector<double> embed(const RasterImage& image) const { return model_->embed(image); }
  Checkpoint to_checkpoint() const { return model_->to_checkpoint(true); }

 private:
  void freeze() {
    for (const auto& p : model_->parameters()) p.var.node().requires_grad = false;
  }
  std::shared_ptr<const RetrievalModel> model_;
};

// Gallery indices sorted by ascending l2 distance to the query; equal
// distances keep ascending id order.
inline std::vector<std::size_t> rank_gallery(const std::vector<double>& query,
                                             const std::vector<std::vector<double>>& gallery,
                                             const std::vector<std::string>& ids) {
  if (gallery.empty()) throw std::invalid_argument("rank_gallery: empty gallery");
  if (ids.size() != gallery.size()) throw std::invalid_argument("rank_gallery: id count mismatch");
  std::vector<double> dist(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) dist[i] = l2_distance(query, gallery[i]);
  std::vector<std::size_t> order(gallery.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    return ids[a] < ids[b];
  });
  return order;
}

inline std::vector<std::string> rank_gallery(const RasterImage& query_sketch,
                                             const std::vector<const RasterImage*>& gallery_photos,
                                             const std::vector<std::string>& ids, const RetrievalModel& model) {
  const auto order = rank_gallery(model.embed(query_sketch), model.embed_all(gallery_photos), ids);
  std::vector<std::string> out;
  for (std::size_t k : order) out.push_back(ids[k]);
  return out;
}

// Scalar distillation forms evaluated through the models.
inline double kd_loss_relative(const TeacherSnapshot& teacher, const RetrievalModel& student, const RasterImage& photo,
                               const RasterImage& sketch) {
  return kd_relative(teacher.embed(photo), teacher.embed(sketch), student.embed(photo), student.embed(sketch));
}

inline double kd_loss_absolute(const TeacherSnapshot& teacher, const RetrievalModel& student, const RasterImage& image) {
  return l2_distance(teacher.embed(image), student.embed(image));
}

}  // namespace sbir
