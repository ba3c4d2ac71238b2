#pragma once

// Mixture-density output head of the sketch decoder.
//
// A raw decoder output of length 6M + 3 is laid out as
//   [ pi logits (M) | mu_x (M) | mu_y (M) | log sigma_x (M) | log sigma_y (M) |
//     atanh rho (M) | pen logits (3) ]
// and mapped to valid mixture parameters by softmax / identity / exp / tanh.
// A sampling temperature tau divides the mixture and pen logits and multiplies
// the component variances.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "sbir/autograd.hpp"
#include "sbir/rng.hpp"
#include "sbir/sketch.hpp"

namespace sbir {

inline constexpr int gmm_output_size(int mixtures) { return 6 * mixtures + 3; }

struct GmmStepParams {
  std::vector<double> pi, mu_x, mu_y, sigma_x, sigma_y, rho;
  std::array<double, 3> pen_logits{};

  int mixtures() const { return static_cast<int>(pi.size()); }
};

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// tanh saturates to exactly +-1 in double precision for |x| > 19; the clamp
// keeps every component a proper density.
inline constexpr double kMaxRho = 1.0 - 1e-9;

inline double rho_from_raw(double x) { return std::clamp(std::tanh(x), -kMaxRho, kMaxRho); }

}  // namespace detail

inline GmmStepParams split_gmm_params(std::span<const double> raw, int mixtures, double temperature = 1.0) {
  if (static_cast<int>(raw.size()) != gmm_output_size(mixtures))
    throw std::invalid_argument("split_gmm_params: expected " + std::to_string(gmm_output_size(mixtures)) +
                                " values, got " + std::to_string(raw.size()));
  if (!(temperature > 0.0)) throw std::invalid_argument("split_gmm_params: temperature must be positive");
  const int m = mixtures;
  GmmStepParams p;
  std::vector<double> logits(raw.begin(), raw.begin() + m);
  for (double& l : logits) l /= temperature;
  const double lse = detail::log_sum_exp(logits);
  const double sq = std::sqrt(temperature);
  for (int j = 0; j < m; ++j) {
    p.pi.push_back(std::exp(logits[j] - lse));
    p.mu_x.push_back(raw[m + j]);
    p.mu_y.push_back(raw[2 * m + j]);
    p.sigma_x.push_back(std::exp(raw[3 * m + j]) * sq);
    p.sigma_y.push_back(std::exp(raw[4 * m + j]) * sq);
    p.rho.push_back(detail::rho_from_raw(raw[5 * m + j]));
  }
  for (int k = 0; k < 3; ++k) p.pen_logits[k] = raw[6 * m + k] / temperature;
  return p;
}

// log N(dx, dy | mu, sigma, rho) for one bivariate normal component.
inline double log_bivariate_normal(double dx, double dy, double mx, double my, double sx, double sy, double rho) {
  const double zx = (dx - mx) / sx, zy = (dy - my) / sy;
  const double q = 1.0 - rho * rho;
  const double z = zx * zx + zy * zy - 2.0 * rho * zx * zy;
  return -std::log(2.0 * std::numbers::pi) - std::log(sx) - std::log(sy) - 0.5 * std::log(q) - z / (2.0 * q);
}

// -log sum_j pi_j N(dx, dy | lambda_j), evaluated with log-sum-exp.
inline double gmm_nll(const GmmStepParams& p, double dx, double dy) {
  std::vector<double> terms(p.pi.size());
  for (std::size_t j = 0; j < terms.size(); ++j)
    terms[j] = std::log(p.pi[j]) + log_bivariate_normal(dx, dy, p.mu_x[j], p.mu_y[j], p.sigma_x[j], p.sigma_y[j], p.rho[j]);
  return -detail::log_sum_exp(terms);
}

inline std::array<double, 3> pen_probabilities(const GmmStepParams& p) {
  const double lse = detail::log_sum_exp(p.pen_logits);
  return {std::exp(p.pen_logits[0] - lse), std::exp(p.pen_logits[1] - lse), std::exp(p.pen_logits[2] - lse)};
}

inline double pen_log_prob(const GmmStepParams& p, Pen pen) {
  return p.pen_logits[static_cast<int>(pen)] - detail::log_sum_exp(p.pen_logits);
}

// Draws one stroke point. Greedy mode takes the most probable component's
// mean and the most probable pen state.
inline StrokePoint sample_point(const GmmStepParams& p, Rng* rng, bool greedy) {
  const int m = p.mixtures();
  int j = 0;
  StrokePoint out;
  const auto pen_p = pen_probabilities(p);
  if (greedy || rng == nullptr) {
    j = static_cast<int>(std::max_element(p.pi.begin(), p.pi.end()) - p.pi.begin());
    out.dx = p.mu_x[j];
    out.dy = p.mu_y[j];
    out.pen = static_cast<Pen>(std::max_element(pen_p.begin(), pen_p.end()) - pen_p.begin());
    return out;
  }
  double u = uniform(*rng), acc = 0.0;
  j = m - 1;
  for (int k = 0; k < m; ++k) {
    acc += p.pi[k];
    if (u < acc) {
      j = k;
      break;
    }
  }
  const double n1 = normal(*rng), n2 = normal(*rng);
  out.dx = p.mu_x[j] + p.sigma_x[j] * n1;
  out.dy = p.mu_y[j] + p.sigma_y[j] * (p.rho[j] * n1 + std::sqrt(1.0 - p.rho[j] * p.rho[j]) * n2);
  u = uniform(*rng);
  out.pen = u < pen_p[0] ? Pen::down : (u < pen_p[0] + pen_p[1] ? Pen::lift : Pen::end);
  return out;
}

// ---------------------------------------------------------------------------
// Raw-space loss with analytic gradient

namespace detail {

// Returns w_off * offset NLL + w_pen * pen cross-entropy for one step, and
// adds `upstream` times its gradient w.r.t. the raw outputs into grad (when
// non-null).
inline double step_loss(const double* raw, int m, double tau, double dx, double dy, int pen, double w_off, double w_pen,
                        double upstream, double* grad) {
  double loss = 0.0;
  if (w_off != 0.0) {
    std::vector<double> logit(m), logn(m), terms(m), zx(m), zy(m), sx(m), sy(m), rho(m);
    for (int j = 0; j < m; ++j) logit[j] = raw[j] / tau;
    const double lse_pi = log_sum_exp(logit);
    const double sq = std::sqrt(tau);
    for (int j = 0; j < m; ++j) {
      sx[j] = std::exp(raw[3 * m + j]) * sq;
      sy[j] = std::exp(raw[4 * m + j]) * sq;
      rho[j] = rho_from_raw(raw[5 * m + j]);
      zx[j] = (dx - raw[m + j]) / sx[j];
      zy[j] = (dy - raw[2 * m + j]) / sy[j];
      logn[j] = log_bivariate_normal(dx, dy, raw[m + j], raw[2 * m + j], sx[j], sy[j], rho[j]);
      terms[j] = logit[j] - lse_pi + logn[j];
    }
    const double lse = log_sum_exp(terms);
    loss += w_off * -lse;
    if (grad) {
      const double g = upstream * w_off;
      for (int j = 0; j < m; ++j) {
        const double pi = std::exp(logit[j] - lse_pi);
        const double gamma = std::exp(terms[j] - lse);
        const double q = 1.0 - rho[j] * rho[j];
        const double z = zx[j] * zx[j] + zy[j] * zy[j] - 2.0 * rho[j] * zx[j] * zy[j];
        grad[j] += g * (pi - gamma) / tau;
        grad[m + j] += g * -gamma * (zx[j] - rho[j] * zy[j]) / (q * sx[j]);
        grad[2 * m + j] += g * -gamma * (zy[j] - rho[j] * zx[j]) / (q * sy[j]);
        grad[3 * m + j] += g * -gamma * (-1.0 + zx[j] * (zx[j] - rho[j] * zy[j]) / q);
        grad[4 * m + j] += g * -gamma * (-1.0 + zy[j] * (zy[j] - rho[j] * zx[j]) / q);
        if (std::abs(rho[j]) < kMaxRho) grad[5 * m + j] += g * -gamma * (rho[j] + zx[j] * zy[j] - rho[j] * z / q);
      }
    }
  }
  if (w_pen != 0.0) {
    const std::array<double, 3> l{raw[6 * m] / tau, raw[6 * m + 1] / tau, raw[6 * m + 2] / tau};
    const double lse = log_sum_exp(l);
    loss += w_pen * (lse - l[pen]);
    if (grad) {
      const double g = upstream * w_pen;
      for (int k = 0; k < 3; ++k) grad[6 * m + k] += g * (std::exp(l[k] - lse) - (k == pen ? 1.0 : 0.0)) / tau;
    }
  }
  return loss;
}

}  // namespace detail

// Target of one decoding step: offsets and pen class.
struct StepTarget {
  double dx = 0.0;
  double dy = 0.0;
  Pen pen = Pen::end;
};

// Weighted sum over steps of offset NLL and pen cross-entropy.
// raw is [T, N, 6M+3]; targets, offset_weight and pen_weight are indexed
// t * N + n.
inline Var mixture_sequence_loss(const Var& raw, std::vector<StepTarget> targets, std::vector<double> offset_weight,
                                 std::vector<double> pen_weight, int mixtures, double temperature = 1.0) {
  if (raw.shape().size() != 3 || raw.dim(2) != gmm_output_size(mixtures))
    throw std::invalid_argument("mixture_sequence_loss: raw shape " + shape_str(raw.shape()));
  const std::size_t steps = static_cast<std::size_t>(raw.dim(0)) * raw.dim(1);
  if (targets.size() != steps || offset_weight.size() != steps || pen_weight.size() != steps)
    throw std::invalid_argument("mixture_sequence_loss: target/weight count mismatch");
  const int k = gmm_output_size(mixtures);
  double total = 0.0;
  for (std::size_t s = 0; s < steps; ++s)
    total += detail::step_loss(raw.value().data() + s * k, mixtures, temperature, targets[s].dx, targets[s].dy,
                               static_cast<int>(targets[s].pen), offset_weight[s], pen_weight[s], 0.0, nullptr);
  return make_op({1}, {total}, {raw},
                 [targets = std::move(targets), ow = std::move(offset_weight), pw = std::move(pen_weight), mixtures,
                  temperature, k, steps](Node& self) {
                   double* g = parent_grad(self, 0);
                   if (!g) return;
                   const auto& rv = parent_value(self, 0);
                   for (std::size_t s = 0; s < steps; ++s)
                     detail::step_loss(rv.data() + s * k, mixtures, temperature, targets[s].dx, targets[s].dy,
                                       static_cast<int>(targets[s].pen), ow[s], pw[s], self.grad[0], g + s * k);
                 });
}

// ---------------------------------------------------------------------------
// Latent code

// z = mu + exp(log_var / 2) * eps.
inline std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> log_var,
                                          std::span<const double> eps) {
  if (mu.size() != log_var.size() || mu.size() != eps.size())
    throw std::invalid_argument("reparameterize: length mismatch");
  std::vector<double> z(mu.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = mu[i] + std::exp(0.5 * log_var[i]) * eps[i];
  return z;
}

inline Var reparameterize(const Var& mu, const Var& log_var, std::vector<double> eps) {
  if (mu.shape() != log_var.shape() || eps.size() != mu.size())
    throw std::invalid_argument("reparameterize: shape mismatch");
  auto z = reparameterize(mu.value(), log_var.value(), eps);
  return make_op(mu.shape(), std::move(z), {mu, log_var}, [eps = std::move(eps)](Node& self) {
    const auto& lv = parent_value(self, 1);
    if (double* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * 0.5 * std::exp(0.5 * lv[i]) * eps[i];
  });
}

// KL(N(mu, exp(log_var)) || N(0, I)), averaged over latent dimensions.
inline double kl_loss(std::span<const double> mu, std::span<const double> log_var) {
  if (mu.size() != log_var.size() || mu.empty()) throw std::invalid_argument("kl_loss: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) s += 1.0 + log_var[i] - mu[i] * mu[i] - std::exp(log_var[i]);
  return -s / (2.0 * static_cast<double>(mu.size()));
}

// Batch mean of kl_loss over rows of [N, Nz].
inline Var kl_loss(const Var& mu, const Var& log_var) {
  if (mu.shape() != log_var.shape() || mu.shape().size() != 2) throw std::invalid_argument("kl_loss: shape mismatch");
  const int n = mu.dim(0), nz = mu.dim(1);
  double total = 0.0;
  for (int b = 0; b < n; ++b)
    total += kl_loss(mu.value().subspan(static_cast<std::size_t>(b) * nz, nz),
                     log_var.value().subspan(static_cast<std::size_t>(b) * nz, nz));
  return make_op({1}, {total / n}, {mu, log_var}, [n, nz](Node& self) {
    const double c = self.grad[0] / (static_cast<double>(n) * nz);
    const auto& mv = parent_value(self, 0);
    const auto& lv = parent_value(self, 1);
    if (double* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < mv.size(); ++i) g[i] += c * mv[i];
    if (double* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < lv.size(); ++i) g[i] += c * 0.5 * (std::exp(lv[i]) - 1.0);
  });
}

}  // namespace sbir
