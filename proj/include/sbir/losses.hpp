#pragma once

// Embedding-space objectives: triplet hinge, teacher distillation (relative
// and absolute) and the pair-critic binary cross-entropy. Each comes as a
// scalar reference form and a batched differentiable op.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "sbir/autograd.hpp"

namespace sbir {

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("l2_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// max(0, m + |a - p| - |a - n|).
inline double triplet_loss(std::span<const double> anchor, std::span<const double> pos, std::span<const double> neg,
                           double margin) {
  if (!(margin > 0.0)) throw std::invalid_argument("triplet_loss: margin must be positive");
  return std::max(0.0, margin + l2_distance(anchor, pos) - l2_distance(anchor, neg));
}

// |d_teacher - d_student|, both distances between paired photo/sketch
// embeddings.
inline double kd_relative(std::span<const double> teacher_photo, std::span<const double> teacher_sketch,
                          std::span<const double> student_photo, std::span<const double> student_sketch) {
  return std::abs(l2_distance(teacher_photo, teacher_sketch) - l2_distance(student_photo, student_sketch));
}

// Mean over the photo and the sketch of |F_T(x) - F(x)|.
inline double kd_absolute(std::span<const double> teacher_photo, std::span<const double> teacher_sketch,
                          std::span<const double> student_photo, std::span<const double> student_sketch) {
  return 0.5 * (l2_distance(teacher_photo, student_photo) + l2_distance(teacher_sketch, student_sketch));
}

inline constexpr double kScoreClamp = 1e-6;

// -mean(log real) - mean(log(1 - fake)), scores clamped to [1e-6, 1 - 1e-6].
inline double d_loss(std::span<const double> real_scores, std::span<const double> fake_scores) {
  if (real_scores.empty() || fake_scores.empty()) throw std::invalid_argument("d_loss: empty score list");
  auto c = [](double s) { return std::clamp(s, kScoreClamp, 1.0 - kScoreClamp); };
  double r = 0.0, f = 0.0;
  for (double s : real_scores) r += std::log(c(s));
  for (double s : fake_scores) f += std::log(1.0 - c(s));
  return -r / static_cast<double>(real_scores.size()) - f / static_cast<double>(fake_scores.size());
}

namespace detail {

inline void check_rows(const Var& a, const Var& b, const char* op) {
  if (a.shape().size() != 2 || a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

// Adds scale * d|a_i - b_i| / d a_i into ga and the negation into gb.
inline void add_distance_grad(const double* a, const double* b, int d, double dist, double scale, double* ga,
                              double* gb) {
  if (dist <= 0.0) return;
  for (int k = 0; k < d; ++k) {
    const double g = scale * (a[k] - b[k]) / dist;
    if (ga) ga[k] += g;
    if (gb) gb[k] -= g;
  }
}

}  // namespace detail

// sum_i w_i * triplet(anchor_i, pos_i, neg_i) over rows of [N, d]. At the
// hinge kink the subgradient 0 is used.
inline Var triplet_loss(const Var& anchor, const Var& pos, const Var& neg, double margin, std::vector<double> weights) {
  detail::check_rows(anchor, pos, "triplet_loss");
  detail::check_rows(anchor, neg, "triplet_loss");
  if (!(margin > 0.0)) throw std::invalid_argument("triplet_loss: margin must be positive");
  const int n = anchor.dim(0), d = anchor.dim(1);
  if (weights.size() != static_cast<std::size_t>(n)) throw std::invalid_argument("triplet_loss: weight count");
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    total += weights[i] * triplet_loss(anchor.value().subspan(i * d, d), pos.value().subspan(i * d, d),
                                       neg.value().subspan(i * d, d), margin);
  return make_op({1}, {total}, {anchor, pos, neg}, [n, d, margin, w = std::move(weights)](Node& self) {
    const auto& av = parent_value(self, 0);
    const auto& pv = parent_value(self, 1);
    const auto& nv = parent_value(self, 2);
    double* ga = parent_grad(self, 0);
    double* gp = parent_grad(self, 1);
    double* gn = parent_grad(self, 2);
    for (int i = 0; i < n; ++i) {
      const double* a = av.data() + i * d;
      const double* p = pv.data() + i * d;
      const double* q = nv.data() + i * d;
      const double dp = l2_distance({a, static_cast<std::size_t>(d)}, {p, static_cast<std::size_t>(d)});
      const double dn = l2_distance({a, static_cast<std::size_t>(d)}, {q, static_cast<std::size_t>(d)});
      if (margin + dp - dn <= 0.0) continue;
      const double s = self.grad[0] * w[i];
      detail::add_distance_grad(a, p, d, dp, s, ga ? ga + i * d : nullptr, gp ? gp + i * d : nullptr);
      detail::add_distance_grad(a, q, d, dn, -s, ga ? ga + i * d : nullptr, gn ? gn + i * d : nullptr);
    }
  });
}

// sum_i w_i * |teacher_dist_i - |photo_i - sketch_i||; the teacher distances
// are constants.
inline Var kd_relative_loss(const Var& photo, const Var& sketch, std::vector<double> teacher_dist,
                            std::vector<double> weights) {
  detail::check_rows(photo, sketch, "kd_relative_loss");
  const int n = photo.dim(0), d = photo.dim(1);
  if (teacher_dist.size() != static_cast<std::size_t>(n) || weights.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("kd_relative_loss: count mismatch");
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    total += weights[i] *
             std::abs(teacher_dist[i] - l2_distance(photo.value().subspan(i * d, d), sketch.value().subspan(i * d, d)));
  return make_op({1}, {total}, {photo, sketch},
                 [n, d, td = std::move(teacher_dist), w = std::move(weights)](Node& self) {
                   const auto& pv = parent_value(self, 0);
                   const auto& sv = parent_value(self, 1);
                   double* gp = parent_grad(self, 0);
                   double* gs = parent_grad(self, 1);
                   for (int i = 0; i < n; ++i) {
                     const double* p = pv.data() + i * d;
                     const double* s = sv.data() + i * d;
                     const double ds = l2_distance({p, static_cast<std::size_t>(d)}, {s, static_cast<std::size_t>(d)});
                     const double diff = td[i] - ds;
                     if (diff == 0.0) continue;
                     // d|td - ds|/d ds = -sign(diff)
                     const double scale = self.grad[0] * w[i] * (diff > 0.0 ? -1.0 : 1.0);
                     detail::add_distance_grad(p, s, d, ds, scale, gp ? gp + i * d : nullptr, gs ? gs + i * d : nullptr);
                   }
                 });
}

// sum_i w_i * |student_i - teacher_i| with constant teacher rows.
inline Var kd_absolute_loss(const Var& student, std::vector<double> teacher, std::vector<double> weights) {
  if (student.shape().size() != 2 || teacher.size() != student.size())
    throw std::invalid_argument("kd_absolute_loss: shape mismatch");
  const int n = student.dim(0), d = student.dim(1);
  if (weights.size() != static_cast<std::size_t>(n)) throw std::invalid_argument("kd_absolute_loss: weight count");
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    total += weights[i] * l2_distance(student.value().subspan(i * d, d), {teacher.data() + i * d, static_cast<std::size_t>(d)});
  return make_op({1}, {total}, {student}, [n, d, t = std::move(teacher), w = std::move(weights)](Node& self) {
    double* g = parent_grad(self, 0);
    if (!g) return;
    const auto& sv = parent_value(self, 0);
    for (int i = 0; i < n; ++i) {
      const double* s = sv.data() + i * d;
      const double dist = l2_distance({s, static_cast<std::size_t>(d)}, {t.data() + i * d, static_cast<std::size_t>(d)});
      detail::add_distance_grad(s, t.data() + i * d, d, dist, self.grad[0] * w[i], g + i * d, nullptr);
    }
  });
}

// Differentiable d_loss over score tensors [Nr, 1] and [Nf, 1] (or flat).
inline Var d_loss(const Var& real, const Var& fake) {
  const double value = d_loss(real.value(), fake.value());
  return make_op({1}, {value}, {real, fake}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      double* g = parent_grad(self, k);
      if (!g) continue;
      const auto& s = parent_value(self, k);
      const double inv_n = 1.0 / static_cast<double>(s.size());
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] < kScoreClamp || s[i] > 1.0 - kScoreClamp) continue;
        g[i] += self.grad[0] * inv_n * (k == 0 ? -1.0 / s[i] : 1.0 / (1.0 - s[i]));
      }
    }
  });
}

}  // namespace sbir
