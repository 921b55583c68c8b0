#pragma once

// Plain-loop reference implementations, written without Eigen or any
// library code, for equivalence checks.

#include <cmath>
#include <cstddef>
#include <set>
#include <vector>

namespace oracle {

using Row = std::vector<double>;
using Table = std::vector<Row>;

inline double dot(const Row& a, const Row& b) {
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline Row softmax(const Row& z, double tau) {
  double top = z[0];
  for (double v : z) top = v > top ? v : top;
  Row e(z.size());
  double sum = 0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    e[k] = std::exp((z[k] - top) / tau);
    sum += e[k];
  }
  for (double& v : e) v /= sum;
  return e;
}

// S_i = Σ_j softmax_j(s_i·/tau) s_ij with s_ij = <L_i, T_j/‖T_j‖>.
inline Row local_similarity(const Table& tokens, const Table& bank, double tau) {
  Row out;
  for (const auto& l : bank) {
    Row s;
    for (const auto& t : tokens) s.push_back(dot(l, t) / std::sqrt(dot(t, t)));
    Row w = softmax(s, tau);
    double v = 0;
    for (std::size_t j = 0; j < s.size(); ++j) v += w[j] * s[j];
    out.push_back(v);
  }
  return out;
}

inline Table similarity_matrix(const Table& e) {
  Table d(e.size(), Row(e.size()));
  for (std::size_t i = 0; i < e.size(); ++i)
    for (std::size_t j = 0; j < e.size(); ++j) d[i][j] = dot(e[i], e[j]);
  return d;
}

// Mean over rows of KL(softmax(a_r/tau) ‖ softmax(b_r/tau)).
inline double order_loss(const Table& a, const Table& b, double tau) {
  double total = 0;
  for (std::size_t r = 0; r < a.size(); ++r) {
    Row p = softmax(a[r], tau), q = softmax(b[r], tau);
    for (std::size_t k = 0; k < p.size(); ++k) total += p[k] * std::log(p[k] / q[k]);
  }
  return total / static_cast<double>(a.size());
}

// Item x ranks ahead of y when it scores higher, or equal with a lower index.
inline bool ahead(const Row& s, std::size_t x, std::size_t y) { return s[x] > s[y] || (s[x] == s[y] && x < y); }

// O(n²) average precision; -1 when there is no positive.
inline double average_precision(const Row& s, const std::vector<bool>& y) {
  std::vector<std::pair<std::size_t, double>> by_rank;  // (rank, precision)
  for (std::size_t p = 0; p < s.size(); ++p) {
    if (!y[p]) continue;
    std::size_t rank = 1, hits = 1;
    for (std::size_t q = 0; q < s.size(); ++q) {
      if (q == p || !ahead(s, q, p)) continue;
      ++rank;
      if (y[q]) ++hits;
    }
    by_rank.emplace_back(rank, static_cast<double>(hits) / static_cast<double>(rank));
  }
  if (by_rank.empty()) return -1;
  // Summed in rank order.
  for (std::size_t a = 0; a < by_rank.size(); ++a)
    for (std::size_t b = a + 1; b < by_rank.size(); ++b)
      if (by_rank[b].first < by_rank[a].first) std::swap(by_rank[a], by_rank[b]);
  double sum = 0;
  for (const auto& [rank, prec] : by_rank) sum += prec;
  return sum / static_cast<double>(by_rank.size());
}

// Micro F1 from confusion counts, predicting the k top-ranked classes per item.
inline double f1_at_k(const Table& scores, const std::vector<std::set<int>>& labels, std::size_t k) {
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t n = 0; n < scores.size(); ++n) {
    const Row& s = scores[n];
    for (std::size_t c = 0; c < s.size(); ++c) {
      std::size_t beaten_by = 0;
      for (std::size_t o = 0; o < s.size(); ++o)
        if (o != c && ahead(s, o, c)) ++beaten_by;
      const bool predicted = beaten_by < k;
      const bool positive = labels[n].count(static_cast<int>(c)) > 0;
      if (predicted && positive) ++tp;
      if (predicted && !positive) ++fp;
      if (!predicted && positive) ++fn;
    }
  }
  if (tp == 0) return 0;
  return static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
}

}  // namespace oracle
