#pragma once

// Photo-conditioned sequential sketch generator: convolutional encoder,
// variational latent, 2-D attention glimpse over the encoder feature map,
// LSTM decoder and a mixture-density output head.

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sbir/autograd.hpp"
#include "sbir/batch.hpp"
#include "sbir/checkpoint.hpp"
#include "sbir/gmm.hpp"
#include "sbir/nn.hpp"
#include "sbir/ops.hpp"
#include "sbir/rng.hpp"
#include "sbir/sketch.hpp"

namespace sbir {

struct GeneratorConfig {
  int image_size = 64;
  std::vector<int> encoder_widths{32, 64, 96, 128};
  int latent_dim = 128;
  int hidden_size = 512;
  int attention_dim = 256;
  int mixtures = 20;
  int max_length = kDefaultMaxLength;
  // false: attention keys come from a 1x3 convolution over the feature map
  // flattened into a 1-D sequence.
  bool attention_2d = true;

  int feature_size() const { return image_size >> encoder_widths.size(); }
  int feature_channels() const { return encoder_widths.back(); }
  int output_size() const { return gmm_output_size(mixtures); }

  void validate() const {
    if (encoder_widths.empty()) throw std::invalid_argument("generator: no encoder blocks");
    if ((image_size % (1 << encoder_widths.size())) != 0 || feature_size() < 2)
      throw std::invalid_argument("generator: image_size " + std::to_string(image_size) +
                                  " leaves a feature map smaller than 2x2");
    if (latent_dim < 1 || hidden_size < 1 || attention_dim < 1 || mixtures < 1 || max_length < 1)
      throw std::invalid_argument("generator: sizes must be positive");
  }
};

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"image_size", c.image_size},   {"encoder_widths", c.encoder_widths}, {"latent_dim", c.latent_dim},
       {"hidden_size", c.hidden_size}, {"attention_dim", c.attention_dim},   {"mixtures", c.mixtures},
       {"max_length", c.max_length},   {"attention_2d", c.attention_2d}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  j.at("image_size").get_to(c.image_size);
  j.at("encoder_widths").get_to(c.encoder_widths);
  j.at("latent_dim").get_to(c.latent_dim);
  j.at("hidden_size").get_to(c.hidden_size);
  j.at("attention_dim").get_to(c.attention_dim);
  j.at("mixtures").get_to(c.mixtures);
  j.at("max_length").get_to(c.max_length);
  j.at("attention_2d").get_to(c.attention_2d);
}

// Start token (0, 0, down) as a stroke-5 row.
inline constexpr std::array<double, 5> kStartToken{0.0, 0.0, 1.0, 0.0, 0.0};
// Padding row fed after a sequence has ended.
inline constexpr std::array<double, 5> kPadToken{0.0, 0.0, 0.0, 0.0, 1.0};

struct DecoderState {
  Var h;  // [N, hidden]
  Var c;  // [N, hidden]
};

struct Glimpse {
  Var g;      // [N, C]
  Var alpha;  // [N, 1, h', w']
};

struct Encoding {
  Var features;  // B: [N, C, h', w']
  Var mu;        // [N, Nz]
  Var log_var;   // [N, Nz]
};

struct DecodeTrace {
  Var raw;                  // [T, N, 6M+3]
  Var mu, log_var, z;       // [N, Nz]
  std::vector<Var> alphas;  // per step [N, 1, h', w']
};

struct SampleOptions {
  double temperature = 1.0;
  int max_length = kDefaultMaxLength;
  bool greedy = false;
  bool keep_hidden = false;
};

struct SampledSketch {
  StrokeSequence sketch;
  std::vector<double> log_prob;             // per step log p(dz) + log p(pen)
  std::vector<double> z;                    // latent used
  std::vector<std::vector<double>> hidden;  // per step decoder h_t (keep_hidden)
};

struct VaeLoss {
  Var total;
  double reconstruction = 0.0;
  double kl = 0.0;
};

class Generator {
 public:
  explicit Generator(GeneratorConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int c = cfg_.feature_channels(), a = cfg_.attention_dim, h = cfg_.hidden_size;
    encoder_ = nn::ConvStack(3, cfg_.encoder_widths, rng);
    mu_head_ = nn::Linear(c, cfg_.latent_dim, rng, 1.0);
    log_var_head_ = nn::Linear(c, cfg_.latent_dim, rng, 0.1);
    init_state_ = nn::Linear(cfg_.latent_dim, 2 * h, rng, 1.0);
    if (cfg_.attention_2d)
      attn_keys_ = nn::Conv2d(c, a, 3, 3, 1, 1, 1, rng, 1.0);
    else
      attn_keys_ = nn::Conv2d(c, a, 1, 3, 1, 0, 1, rng, 1.0);
    attn_query_ = nn::Linear(h, a, rng, 1.0, false);
    attn_score_ = nn::Conv2d(a, 1, 1, 1, 1, 0, 0, rng, 1.0, false);
    lstm_ = nn::Linear(c + 5 + h, 4 * h, rng, 1.0);
    for (int j = 0; j < h; ++j) lstm_.bias.mutable_value()[h + j] = 1.0;  // forget gate bias
    output_ = nn::Linear(h, cfg_.output_size(), rng, 0.5);
  }

  const GeneratorConfig& config() const { return cfg_; }

  Encoding encode(const Var& photos) const {
    if (photos.shape().size() != 4 || photos.dim(1) != 3 || photos.dim(2) != cfg_.image_size ||
        photos.dim(3) != cfg_.image_size)
      throw std::invalid_argument("generator: expected photos [N,3," + std::to_string(cfg_.image_size) + "," +
                                  std::to_string(cfg_.image_size) + "], got " + shape_str(photos.shape()));
    Var b = encoder_(photos);
    Var pooled = ops::global_avg_pool(b);
    return {b, mu_head_(pooled), log_var_head_(pooled)};
  }

  // [h0; c0] = tanh(W_z z + b_z).
  DecoderState initial_state(const Var& z) const {
    Var hc = ops::tanh(init_state_(z));
    return {ops::slice_cols(hc, 0, cfg_.hidden_size), ops::slice_cols(hc, cfg_.hidden_size, cfg_.hidden_size)};
  }

  // W_B (*) B, computed once per sequence.
  Var attention_keys(const Var& features) const {
    if (cfg_.attention_2d) return attn_keys_(features);
    const int n = features.dim(0), c = features.dim(1), hh = features.dim(2), ww = features.dim(3);
    Var flat = ops::reshape(features, {n, c, 1, hh * ww});
    return ops::reshape(attn_keys_(flat), {n, cfg_.attention_dim, hh, ww});
  }

  // J = tanh(keys + W_S h), alpha = softmax(W_a^T J), g = sum alpha * B.
  Glimpse attend(const Var& features, const Var& keys, const Var& h_prev) const {
    Var j = ops::tanh(ops::add_spatial(keys, attn_query_(h_prev)));
    Var alpha = ops::spatial_softmax(attn_score_(j));
    return {ops::weighted_spatial_sum(alpha, features), alpha};
  }

  // One LSTM step on [g, prev_point]; returns the new state and raw y_t.
  std::pair<DecoderState, Var> decode_step(const DecoderState& s, const Var& g, const Var& prev_points) const {
    Var x = ops::concat_cols(ops::concat_cols(g, prev_points), s.h);
    Var hc = ops::lstm_cell(lstm_(x), s.c);
    DecoderState next{ops::slice_cols(hc, 0, cfg_.hidden_size), ops::slice_cols(hc, cfg_.hidden_size, cfg_.hidden_size)};
    Var y = output_(next.h);
    return {next, y};
  }

  // y = W_y h + b_y for a stack of hidden states [..., hidden].
  Var output_layer(const Var& hidden) const { return output_(hidden); }

  // Teacher-forced decoding of `steps` outputs given a latent code.
  DecodeTrace decode(const Encoding& enc, const Var& z, const std::vector<const StrokeSequence*>& seqs, int steps) const {
    const int n = enc.features.dim(0);
    if (static_cast<int>(seqs.size()) != n) throw std::invalid_argument("generator: sequence/photo count mismatch");
    DecodeTrace trace{Var(), enc.mu, enc.log_var, z, {}};
    DecoderState state = initial_state(z);
    Var keys = attention_keys(enc.features);
    std::vector<Var> outputs;
    for (int t = 0; t < steps; ++t) {
      std::vector<double> prev(static_cast<std::size_t>(n) * 5);
      for (int b = 0; b < n; ++b) {
        std::array<double, 5> row = kStartToken;
        if (t > 0) row = (t - 1 < static_cast<int>(seqs[b]->size())) ? (*seqs[b])[t - 1].stroke5() : kPadToken;
        std::copy(row.begin(), row.end(), prev.begin() + b * 5);
      }
      Glimpse gl = attend(enc.features, keys, state.h);
      auto [next, y] = decode_step(state, gl.g, Var::constant({n, 5}, std::move(prev)));
      state = next;
      trace.alphas.push_back(gl.alpha);
      outputs.push_back(y);
    }
    trace.raw = ops::stack(outputs);
    return trace;
  }

  // Encodes, draws z = mu + sigma * eps (eps empty: z = mu) and decodes.
  DecodeTrace teacher_force(const Var& photos, const std::vector<const StrokeSequence*>& seqs, int steps,
                            const std::vector<double>& eps = {}) const {
    Encoding enc = encode(photos);
    Var z = eps.empty() ? enc.mu : reparameterize(enc.mu, enc.log_var, eps);
    return decode(enc, z, seqs, steps);
  }

  // Autoregressive sampling from the start token until `end` or max_length.
  std::vector<SampledSketch> sample(const Var& photos, const SampleOptions& opt, Rng* rng) const {
    if (!opt.greedy && rng == nullptr) throw std::invalid_argument("generator: stochastic sampling needs an rng");
    if (!(opt.temperature > 0.0)) throw std::invalid_argument("generator: temperature must be positive");
    if (opt.max_length < 1 || opt.max_length > cfg_.max_length)
      throw std::invalid_argument("generator: max_length must be in [1, " + std::to_string(cfg_.max_length) + "]");
    NoGradGuard no_grad;
    Encoding enc = encode(photos);
    const int n = photos.dim(0), nz = cfg_.latent_dim;
    std::vector<double> zv(enc.mu.value().begin(), enc.mu.value().end());
    if (!opt.greedy) {
      std::vector<double> eps(zv.size());
      for (double& e : eps) e = normal(*rng);
      zv = reparameterize(enc.mu.value(), enc.log_var.value(), eps);
    }
    Var z = Var::constant({n, nz}, zv);
    DecoderState state = initial_state(z);
    Var keys = attention_keys(enc.features);

    std::vector<std::vector<StrokePoint>> points(n);
    std::vector<SampledSketch> out(n);
    for (int b = 0; b < n; ++b) out[b].z.assign(zv.begin() + b * nz, zv.begin() + (b + 1) * nz);
    std::vector<bool> done(n, false);
    std::vector<double> prev(static_cast<std::size_t>(n) * 5);
    for (int b = 0; b < n; ++b) std::copy(kStartToken.begin(), kStartToken.end(), prev.begin() + b * 5);

    const int k = cfg_.output_size();
    for (int t = 0; t < opt.max_length; ++t) {
      Glimpse gl = attend(enc.features, keys, state.h);
      auto [next, y] = decode_step(state, gl.g, Var::constant({n, 5}, prev));
      state = next;
      bool all_done = true;
      for (int b = 0; b < n; ++b) {
        if (done[b]) continue;
        const auto params = split_gmm_params(y.value().subspan(static_cast<std::size_t>(b) * k, k), cfg_.mixtures,
                                             opt.temperature);
        StrokePoint p = sample_point(params, opt.greedy ? nullptr : rng, opt.greedy);
        out[b].log_prob.push_back(-gmm_nll(params, p.dx, p.dy) + pen_log_prob(params, p.pen));
        if (opt.keep_hidden)
          out[b].hidden.emplace_back(state.h.value().begin() + b * cfg_.hidden_size,
                                     state.h.value().begin() + (b + 1) * cfg_.hidden_size);
        points[b].push_back(p);
        const auto row = p.stroke5();
        std::copy(row.begin(), row.end(), prev.begin() + b * 5);
        if (p.pen == Pen::end) done[b] = true;
        all_done = all_done && done[b];
      }
      if (all_done) break;
    }
    for (int b = 0; b < n; ++b) out[b].sketch = StrokeSequence(std::move(points[b]), cfg_.max_length);
    return out;
  }

  // Teacher-forced log-likelihood of a sequence under latent z.
  double sequence_log_prob(const RasterImage& photo, const StrokeSequence& seq, const std::vector<double>& z,
                           double temperature = 1.0) const {
    NoGradGuard no_grad;
    Encoding enc = encode(image_batch(photo));
    const int steps = static_cast<int>(seq.size());
    DecodeTrace tr = decode(enc, Var::constant({1, cfg_.latent_dim}, z), {&seq}, steps);
    std::vector<StepTarget> targets;
    for (const auto& p : seq.points()) targets.push_back({p.dx, p.dy, p.pen});
    std::vector<double> ones(steps, 1.0);
    return -mixture_sequence_loss(tr.raw, targets, ones, ones, cfg_.mixtures, temperature).item();
  }

  nn::ParamList parameters() const {
    nn::ParamList out;
    encoder_.collect("encoder", out);
    mu_head_.collect("mu_head", out);
    log_var_head_.collect("log_var_head", out);
    init_state_.collect("init_state", out);
    attn_keys_.collect("attention.keys", out);
    attn_query_.collect("attention.query", out);
    attn_score_.collect("attention.score", out);
    lstm_.collect("decoder.lstm", out);
    output_.collect("decoder.output", out);
    return out;
  }

  // W_y and b_y.
  nn::ParamList output_parameters() const {
    nn::ParamList out;
    output_.collect("decoder.output", out);
    return out;
  }

  Checkpoint to_checkpoint() const {
    Checkpoint ck;
    ck.kind = "generator";
    ck.config = cfg_;
    append_params(ck, parameters());
    return ck;
  }

  static Generator from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "generator") throw CheckpointError("expected a generator checkpoint, got '" + ck.kind + "'");
    Rng rng(0);
    Generator g(ck.config.get<GeneratorConfig>(), rng);
    restore_params(ck, g.parameters());
    return g;
  }

 private:
  GeneratorConfig cfg_;
  nn::ConvStack encoder_;
  nn::Linear mu_head_, log_var_head_, init_state_;
  nn::Conv2d attn_keys_;
  nn::Linear attn_query_;
  nn::Conv2d attn_score_;
  nn::Linear lstm_, output_;
};

// Teacher-forcing targets and weights for a padded batch of sequences.
// Offsets count for steps before each sequence's end; pen targets cover all
// `steps` positions with `end` as the padding class.
struct SequenceTargets {
  std::vector<StepTarget> targets;
  std::vector<double> offset_weight;
  std::vector<double> pen_weight;
};

inline SequenceTargets reconstruction_targets(const std::vector<const StrokeSequence*>& seqs, int steps) {
  const int n = static_cast<int>(seqs.size());
  SequenceTargets st;
  const double w = 1.0 / (static_cast<double>(steps) * n);
  for (int t = 0; t < steps; ++t)
    for (int b = 0; b < n; ++b) {
      const bool live = t < static_cast<int>(seqs[b]->size());
      if (static_cast<int>(seqs[b]->size()) > steps)
        throw std::invalid_argument("reconstruction_targets: sequence longer than padded length");
      st.targets.push_back(live ? StepTarget{(*seqs[b])[t].dx, (*seqs[b])[t].dy, (*seqs[b])[t].pen} : StepTarget{});
      st.offset_weight.push_back(live ? w : 0.0);
      st.pen_weight.push_back(w);
    }
  return st;
}

// Reference form: loss of one sequence against a per-step parameter trace
// whose length is the padded length.
inline double reconstruction_loss(const StrokeSequence& seq, const std::vector<GmmStepParams>& trace) {
  if (trace.size() < seq.size()) throw std::invalid_argument("reconstruction_loss: trace shorter than sequence");
  double total = 0.0;
  for (std::size_t t = 0; t < trace.size(); ++t) {
    if (t < seq.size()) {
      total += gmm_nll(trace[t], seq[t].dx, seq[t].dy);
      total -= pen_log_prob(trace[t], seq[t].pen);
    } else {
      total -= pen_log_prob(trace[t], Pen::end);
    }
  }
  return total / static_cast<double>(trace.size());
}

inline double vae_loss(double reconstruction, double kl, double kl_weight) { return reconstruction + kl_weight * kl; }

// Batched VAE objective on a teacher-forced trace.
inline VaeLoss vae_loss(const DecodeTrace& trace, const std::vector<const StrokeSequence*>& seqs, int mixtures,
                        double kl_weight) {
  const int steps = trace.raw.dim(0);
  auto st = reconstruction_targets(seqs, steps);
  Var rec = mixture_sequence_loss(trace.raw, std::move(st.targets), std::move(st.offset_weight),
                                  std::move(st.pen_weight), mixtures);
  Var kl = kl_loss(trace.mu, trace.log_var);
  VaeLoss out;
  out.reconstruction = rec.item();
  out.kl = kl.item();
  out.total = kl_weight == 0.0 ? rec : ops::add(rec, ops::scale(kl, kl_weight));
  return out;
}

}  // namespace sbir
