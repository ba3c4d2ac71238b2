#pragma once

// Experiment harness: synthetic corpora, shared pre-training and ablation
// variants evaluated on a held-out gallery.

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "sbir/corpus.hpp"
#include "sbir/evaluation.hpp"
#include "sbir/synthetic.hpp"
#include "sbir/trainer.hpp"

namespace sbir {

// Item i is drawn from its own stream, so a corpus prefix does not depend on
// the total size.
inline Corpus make_synthetic_corpus(const ShapeSpec& spec, int n_labeled, int n_unlabeled, std::uint64_t seed) {
  Corpus c;
  char id[32];
  for (int i = 0; i < n_labeled; ++i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    auto p = generate_synthetic_pair(spec, rng);
    std::snprintf(id, sizeof id, "L%05d", i);
    c.labeled.push_back({id, std::move(p.photo), std::move(p.sketch)});
  }
  for (int i = 0; i < n_unlabeled; ++i) {
    Rng rng(mix_seed(seed, 1'000'000ull + static_cast<std::uint64_t>(i)));
    auto p = generate_synthetic_pair(spec, rng);
    std::snprintf(id, sizeof id, "U%05d", i);
    c.unlabeled.push_back({id, std::move(p.photo)});
  }
  return c;
}

struct Variant {
  std::string name;
  bool use_unlabeled = true;
  bool iw = true;
  bool tr = true;
  bool jt = true;
  bool attention_2d = true;

  TrainConfig apply(TrainConfig cfg) const {
    cfg.use_unlabeled = use_unlabeled;
    cfg.iw = iw;
    cfg.tr = tr;
    cfg.jt = jt;
    cfg.gen.attention_2d = attention_2d;
    return cfg;
  }
};

inline Variant variant_full() { return {"full", true, true, true, true, true}; }
inline Variant variant_supervised() { return {"supervised", false, false, false, false, true}; }
inline Variant variant_iw_off() { return {"iw_off", true, false, true, true, true}; }
inline Variant variant_tr_off() { return {"tr_off", true, true, false, true, true}; }
inline Variant variant_jt_off() { return {"jt_off", true, true, true, false, true}; }
inline Variant variant_at_off() { return {"at_off", true, true, true, true, false}; }
inline Variant variant_vanilla() { return {"vanilla", true, false, false, false, true}; }

struct VariantResult {
  std::string name;
  std::uint64_t seed = 0;
  RetrievalMetrics retrieval;
  RetrievalMetrics generation;  // generated sketches of gallery photos as queries
  double fid = 0.0;
  int retrieval_steps = 0, discriminator_steps = 0, generator_steps = 0;
};

// Greedy sketches for every gallery photo, rasterized.
inline std::vector<RasterImage> generated_rasters(const Generator& g, const EvalData& eval, int pad, int chunk = 64) {
  std::vector<RasterImage> out;
  const auto view = eval.view();
  for (std::size_t s = 0; s < view.photos.size(); s += chunk) {
    std::vector<const RasterImage*> part(view.photos.begin() + s,
                                         view.photos.begin() + std::min(view.photos.size(), s + chunk));
    for (auto& p : make_pseudo_pairs(part, g, PseudoMode::greedy, 1.0, nullptr, pad)) out.push_back(std::move(p.raster));
  }
  return out;
}

inline VariantResult evaluate_models(const ModelSet& m, const EvalData& eval, int pad, bool with_generation,
                                     int gallery_size = 0) {
  VariantResult r;
  const auto view = eval.view();
  r.retrieval = retrieval_metrics(rank_table(*m.ret, view, gallery_size));
  if (with_generation) {
    const auto gen = generated_rasters(*m.gen, eval, pad);
    EvalSet gview = view;
    for (std::size_t i = 0; i < gen.size(); ++i) gview.sketches[i] = &gen[i];
    r.generation = retrieval_metrics(rank_table(*m.ret, gview, gallery_size));
    std::vector<const RasterImage*> gp;
    for (const auto& g : gen) gp.push_back(&g);
    const auto fa = m.ret->pooled_all(gp);
    const auto fb = m.ret->pooled_all(view.sketches);
    if (fa.size() > fa.front().size()) r.fid = std::max(0.0, fid(fa, fb));
  }
  return r;
}

// Pre-trains generator and retrieval model (and snapshots the teacher) for
// one seed; the critic stays at its initialization.
inline ModelSet pretrain_models(const TrainConfig& cfg, const TrainData& data, MetricLog& log) {
  ModelSet m = ModelSet::fresh(cfg);
  Rng rg(mix_seed(cfg.seed, 301)), rr(mix_seed(cfg.seed, 302));
  pretrain_generator(*m.gen, data, cfg, log, rg);
  m.teacher.emplace(pretrain_retrieval(*m.ret, data, cfg, log, rr));
  return m;
}

// Joint training of one variant from a copy of the pre-trained models.
inline VariantResult run_variant(const TrainConfig& base, const ModelSet& pretrained, const TrainData& data,
                                 const EvalData& eval, const Variant& v, bool with_generation = false,
                                 MetricLog* log_out = nullptr, ModelSet* trained = nullptr) {
  const TrainConfig cfg = v.apply(base);
  JointState st(pretrained.clone(), cfg);
  MetricLog local;
  MetricLog& log = log_out ? *log_out : local;
  const std::size_t before = log.records().size();
  joint_train(st, data, cfg, cfg.cycles, log);
  VariantResult r = evaluate_models(st.models, eval, cfg.raster_pad, with_generation, cfg.eval_gallery);
  r.name = v.name;
  r.seed = cfg.seed;
  for (std::size_t i = before; i < log.records().size(); ++i) {
    const auto& ph = log.records()[i].at("phase");
    if (ph == "retrieval") ++r.retrieval_steps;
    if (ph == "discriminator") ++r.discriminator_steps;
    if (ph == "generator") ++r.generator_steps;
  }
  if (trained) *trained = std::move(st.models);
  return r;
}

// Runs every requested variant per seed. Variants that change the generator
// architecture get their own pre-training; the rest share one.
inline std::vector<VariantResult> ablation_grid(const TrainConfig& base, const TrainData& data, const EvalData& eval,
                                                const std::vector<Variant>& variants,
                                                bool with_generation = true,
                                                const std::function<void(const VariantResult&)>& on_result = {}) {
  std::vector<VariantResult> out;
  MetricLog pre_log;
  std::optional<ModelSet> pre_2d, pre_1d;
  for (const auto& v : variants) {
    auto& slot = v.attention_2d ? pre_2d : pre_1d;
    if (!slot) slot.emplace(pretrain_models(v.apply(base), data, pre_log));
    out.push_back(run_variant(base, *slot, data, eval, v, with_generation));
    if (on_result) on_result(out.back());
  }
  return out;
}

inline Table results_table(const std::vector<VariantResult>& rows) {
  Table t;
  t.columns = {"variant", "seed", "acc1", "acc10", "arp", "gen_acc1", "gen_acc10", "fid"};
  for (const auto& r : rows)
    t.rows.push_back({r.name, std::to_string(r.seed), fmt(r.retrieval.acc1), fmt(r.retrieval.acc10),
                      fmt(r.retrieval.arp), fmt(r.generation.acc1), fmt(r.generation.acc10), fmt(r.fid)});
  return t;
}

}  // namespace sbir
