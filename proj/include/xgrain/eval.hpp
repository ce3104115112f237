#pragma once

// Retrieval metrics from a square score matrix with ground truth on the
// diagonal: R@{1,5,10}, median rank, mean rank, both directions.

#include <algorithm>
#include <map>
#include <vector>

#include "xgrain/core.hpp"
#include "xgrain/error.hpp"

namespace xgrain {

enum class Direction { T2V, V2T };

struct RetrievalMetrics {
  std::map<int, double> r_at;  // K -> percentage
  double mdr = 0.0;
  double mnr = 0.0;
  std::size_t n_queries = 0;
};

/// 1-based rank of the diagonal candidate for each query. For t2v, query i
/// ranks candidates down column i; for v2t, along row i. Ties break by
/// ascending candidate index.
inline std::vector<std::size_t> ranks(const Matrix& scores,
                                      Direction direction) {
  if (scores.rows != scores.cols)
    throw ShapeError("ranks: score matrix not square (" + shape_str(scores) +
                     ")");
  const std::size_t n = scores.rows;
  std::vector<std::size_t> out(n);
  for (std::size_t q = 0; q < n; ++q) {
    const double truth = scores.at(q, q);
    std::size_t rank = 1;
    for (std::size_t c = 0; c < n; ++c) {
      if (c == q) continue;
      const double s =
          direction == Direction::T2V ? scores.at(c, q) : scores.at(q, c);
      if (s > truth || (s == truth && c < q)) ++rank;
    }
    out[q] = rank;
  }
  return out;
}

inline RetrievalMetrics metrics_from_ranks(const std::vector<std::size_t>& r) {
  if (r.empty()) throw ShapeError("metrics_from_ranks: empty rank list");
  RetrievalMetrics m;
  m.n_queries = r.size();
  const double n = static_cast<double>(r.size());
  for (int k : {1, 5, 10}) {
    std::size_t hits = 0;
    for (auto rank : r)
      if (rank <= static_cast<std::size_t>(k)) ++hits;
    m.r_at[k] = 100.0 * static_cast<double>(hits) / n;
  }
  std::vector<std::size_t> sorted = r;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  m.mdr = sorted.size() % 2 == 1
              ? static_cast<double>(sorted[mid])
              : 0.5 * static_cast<double>(sorted[mid - 1] + sorted[mid]);
  double sum = 0.0;
  for (auto rank : r) sum += static_cast<double>(rank);
  m.mnr = sum / n;
  return m;
}

inline RetrievalMetrics evaluate(const Matrix& scores, Direction d) {
  return metrics_from_ranks(ranks(scores, d));
}

}  // namespace xgrain
