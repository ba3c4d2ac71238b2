#pragma once

// Retrieval metrics (Acc@q, ARP), Frechet distance between feature sets,
// rank correlation and the certainty/retrieval consistency table.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sbir/discriminator.hpp"
#include "sbir/retrieval.hpp"

namespace sbir {

struct RankEntry {
  std::string query_id;
  int rank = 1;  // 1-indexed position of the true match
  int gallery_size = 1;
};

using RankTable = std::vector<RankEntry>;

inline void check_table(const RankTable& t, const char* op) {
  if (t.empty()) throw std::invalid_argument(std::string(op) + ": empty rank table");
  for (const auto& e : t)
    if (e.rank < 1 || e.rank > e.gallery_size)
      throw std::invalid_argument(std::string(op) + ": rank " + std::to_string(e.rank) + " outside [1, " +
                                  std::to_string(e.gallery_size) + "]");
}

// Fraction of queries whose true match is within the top q.
inline double acc_at_q(const RankTable& t, int q) {
  check_table(t, "acc_at_q");
  int n_min = t.front().gallery_size;
  for (const auto& e : t) n_min = std::min(n_min, e.gallery_size);
  if (q < 1 || q > n_min)
    throw std::invalid_argument("acc_at_q: q=" + std::to_string(q) + " outside [1, " + std::to_string(n_min) + "]");
  const auto hits = std::count_if(t.begin(), t.end(), [q](const RankEntry& e) { return e.rank <= q; });
  return static_cast<double>(hits) / static_cast<double>(t.size());
}

inline double rank_percentile(int rank, int gallery_size) {
  if (gallery_size < 2) throw std::invalid_argument("arp: gallery size must be at least 2");
  return static_cast<double>(gallery_size - rank) / static_cast<double>(gallery_size - 1);
}

// Mean of (N - rank) / (N - 1), in [0, 1].
inline double arp(const RankTable& t) {
  check_table(t, "arp");
  double s = 0.0;
  for (const auto& e : t) s += rank_percentile(e.rank, e.gallery_size);
  return s / static_cast<double>(t.size());
}

// Query/gallery pairing: query i's true match is gallery item i.
struct EvalSet {
  std::vector<std::string> ids;
  std::vector<const RasterImage*> photos;
  std::vector<const RasterImage*> sketches;

  std::size_t size() const { return ids.size(); }
};

inline RankTable rank_table(const std::vector<std::vector<double>>& query_emb,
                            const std::vector<std::vector<double>>& gallery_emb, const std::vector<std::string>& ids) {
  if (query_emb.size() != ids.size() || gallery_emb.size() != ids.size())
    throw std::invalid_argument("rank_table: query/gallery/id counts differ");
  RankTable t;
  t.reserve(ids.size());
  for (std::size_t q = 0; q < query_emb.size(); ++q) {
    const auto order = rank_gallery(query_emb[q], gallery_emb, ids);
    const auto pos = std::find(order.begin(), order.end(), q) - order.begin();
    t.push_back({ids[q], static_cast<int>(pos) + 1, static_cast<int>(ids.size())});
  }
  return t;
}

// Splits the set into consecutive galleries of `gallery_size` items (0: one
// gallery); each query is ranked within its own gallery.
inline RankTable rank_table(const std::vector<std::vector<double>>& query_emb,
                            const std::vector<std::vector<double>>& gallery_emb, const std::vector<std::string>& ids,
                            int gallery_size) {
  const std::size_t n = ids.size();
  const std::size_t g = gallery_size <= 0 ? n : static_cast<std::size_t>(gallery_size);
  if (g < 2 || n % g != 0)
    throw std::invalid_argument("rank_table: " + std::to_string(n) + " items do not split into galleries of " +
                                std::to_string(g));
  RankTable t;
  for (std::size_t s = 0; s < n; s += g) {
    auto slice = [&](const auto& v) { return std::vector(v.begin() + s, v.begin() + s + g); };
    const auto part = rank_table(slice(query_emb), slice(gallery_emb), slice(ids));
    t.insert(t.end(), part.begin(), part.end());
  }
  return t;
}

inline RankTable rank_table(const RetrievalModel& model, const EvalSet& set, int gallery_size = 0) {
  return rank_table(model.embed_all(set.sketches), model.embed_all(set.photos), set.ids, gallery_size);
}

struct RetrievalMetrics {
  double acc1 = 0.0, acc5 = 0.0, acc10 = 0.0, arp = 0.0;
};

inline RetrievalMetrics retrieval_metrics(const RankTable& t) {
  const int n = t.front().gallery_size;
  return {acc_at_q(t, 1), acc_at_q(t, std::min(5, n)), acc_at_q(t, std::min(10, n)), arp(t)};
}

inline nlohmann::json to_json(const RetrievalMetrics& m) {
  return {{"acc1", m.acc1}, {"acc5", m.acc5}, {"acc10", m.acc10}, {"arp", m.arp}};
}

// ---------------------------------------------------------------------------
// Frechet distance

inline Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows) {
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size()), d = static_cast<Eigen::Index>(rows.front().size());
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != d) throw std::invalid_argument("fid: ragged feature rows");
    for (Eigen::Index j = 0; j < d; ++j) {
      if (!std::isfinite(rows[i][j])) throw std::invalid_argument("fid: non-finite feature");
      m(i, j) = rows[i][j];
    }
  }
  return m;
}

// Symmetric PSD square root; eigenvalues below zero are clamped to zero.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (s + s.transpose()));
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)). The trace of the
// product root is taken as Tr((S_a^(1/2) S_b S_a^(1/2))^(1/2)), which has the
// same eigenvalues but is symmetric.
inline double fid(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("fid: empty feature set");
  const std::size_t d = a.front().size();
  if (b.front().size() != d) throw std::invalid_argument("fid: feature dimensions differ");
  if (a.size() <= d || b.size() <= d)
    throw std::invalid_argument("fid: need more than " + std::to_string(d) + " samples per set, got " +
                                std::to_string(a.size()) + " and " + std::to_string(b.size()));
  auto stats = [](const Eigen::MatrixXd& m) {
    Eigen::VectorXd mu = m.colwise().mean();
    Eigen::MatrixXd c = m.rowwise() - mu.transpose();
    Eigen::MatrixXd cov = (c.transpose() * c) / static_cast<double>(m.rows() - 1);
    return std::pair{mu, cov};
  };
  const auto [mu_a, s_a] = stats(to_matrix(a));
  const auto [mu_b, s_b] = stats(to_matrix(b));
  const Eigen::MatrixXd root_a = psd_sqrt(s_a);
  const Eigen::MatrixXd inner = root_a * s_b * root_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return (mu_a - mu_b).squaredNorm() + s_a.trace() + s_b.trace() - 2.0 * tr_root;
}

// ---------------------------------------------------------------------------
// Rank correlation

// Average ranks (1-based), ties share the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("correlation: need two equal-length series");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(average_ranks(x), average_ranks(y));
}

// ---------------------------------------------------------------------------
// Certainty consistency

struct CertaintyBin {
  int index = 0;  // k covers [k/10, (k+1)/10), the last bin includes 1
  int count = 0;
  double mean_score = 0.0;
  double mean_arp = 0.0;
};

inline int certainty_bin(double score) {
  if (!(score >= 0.0 && score <= 1.0)) throw std::invalid_argument("certainty_bin: score outside [0, 1]");
  return std::min(9, static_cast<int>(std::floor(score * 10.0)));
}

// Populated bins only, ascending by index.
inline std::vector<CertaintyBin> bin_certainty(const std::vector<double>& scores, const std::vector<double>& arps) {
  if (scores.size() != arps.size()) throw std::invalid_argument("bin_certainty: count mismatch");
  std::map<int, CertaintyBin> bins;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto& b = bins[certainty_bin(scores[i])];
    b.index = certainty_bin(scores[i]);
    ++b.count;
    b.mean_score += scores[i];
    b.mean_arp += arps[i];
  }
  std::vector<CertaintyBin> out;
  for (auto& [k, b] : bins) {
    b.mean_score /= b.count;
    b.mean_arp /= b.count;
    out.push_back(b);
  }
  return out;
}

struct ScoredPseudoPair {
  std::size_t gallery_index;  // position of the source photo in the gallery
  const RasterImage* sketch;  // rasterized pseudo sketch
};

struct ConsistencyResult {
  std::vector<double> scores;
  std::vector<double> arps;
  std::vector<CertaintyBin> bins;
  double spearman = 0.0;  // bin index vs mean ARP over populated bins
};

inline double bin_spearman(const std::vector<CertaintyBin>& bins) {
  if (bins.size() < 2) return 0.0;
  std::vector<double> x, y;
  for (const auto& b : bins) {
    x.push_back(b.index);
    y.push_back(b.mean_arp);
  }
  return spearman(x, y);
}

// Scores each pseudo pair with the critic, ranks its sketch against the
// gallery with F and bins the per-pair rank percentiles by score.
inline ConsistencyResult certainty_consistency(const std::vector<ScoredPseudoPair>& pairs, const Discriminator& dc,
                                               const RetrievalModel& f, const EvalSet& gallery) {
  ConsistencyResult r;
  std::vector<PairRef> refs;
  std::vector<const RasterImage*> sketches;
  for (const auto& p : pairs) {
    if (p.gallery_index >= gallery.size()) throw std::invalid_argument("certainty_consistency: bad gallery index");
    refs.push_back({gallery.photos[p.gallery_index], p.sketch});
    sketches.push_back(p.sketch);
  }
  r.scores = dc.certainty_weights(refs);
  const auto gal = f.embed_all(gallery.photos);
  const auto q = f.embed_all(sketches);
  const int n = static_cast<int>(gallery.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto order = rank_gallery(q[i], gal, gallery.ids);
    const int rank = static_cast<int>(std::find(order.begin(), order.end(), pairs[i].gallery_index) - order.begin()) + 1;
    r.arps.push_back(rank_percentile(rank, n));
  }
  r.bins = bin_certainty(r.scores, r.arps);
  r.spearman = bin_spearman(r.bins);
  return r;
}

// ---------------------------------------------------------------------------
// Tabular output

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
    os << '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
      os << '\n';
    }
  }

  std::string format() const {
    std::vector<std::size_t> w(columns.size());
    for (std::size_t i = 0; i < columns.size(); ++i) w[i] = columns[i].size();
    for (const auto& r : rows)
      for (std::size_t i = 0; i < r.size() && i < w.size(); ++i) w[i] = std::max(w[i], r[i].size());
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        out += cells[i];
        if (i + 1 < cells.size()) out += std::string(w[i] - cells[i].size() + 2, ' ');
      }
      out += '\n';
    };
    line(columns);
    for (const auto& r : rows) line(r);
    return out;
  }
};

inline std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

}  // namespace sbir
