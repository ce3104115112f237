#pragma once

// Collapse similarity vectors and matrices to instance-level scalars.
// Attention: softmax(x/tau)-weighted sum, applied twice on the frame-word
// matrix (per column and per row, then over the resulting vectors) with
// the two results averaged. Baselines: the four mean/max stage combos.

#include <string>

#include "xgrain/contrast.hpp"
#include "xgrain/core.hpp"
#include "xgrain/error.hpp"

namespace xgrain {

enum class AggMethod { Attention, MeanMean, MeanMax, MaxMean, MaxMax };

struct AggregationConfig {
  AggMethod method = AggMethod::Attention;
  double tau = 0.01;
};

struct AggregatedScores {
  double s_vs = 0.0;
  double s_vw_agg = 0.0;
  double s_fs_agg = 0.0;
  double s_fw_agg = 0.0;
};

inline AggMethod parse_agg_method(const std::string& s) {
  if (s == "attention") return AggMethod::Attention;
  if (s == "mean_mean") return AggMethod::MeanMean;
  if (s == "mean_max") return AggMethod::MeanMax;
  if (s == "max_mean") return AggMethod::MaxMean;
  if (s == "max_max") return AggMethod::MaxMax;
  throw ParamError("unknown aggregation method '" + s + "'");
}

inline std::string agg_method_name(AggMethod m) {
  switch (m) {
    case AggMethod::Attention: return "attention";
    case AggMethod::MeanMean: return "mean_mean";
    case AggMethod::MeanMax: return "mean_max";
    case AggMethod::MaxMean: return "max_mean";
    case AggMethod::MaxMax: return "max_max";
  }
  return "?";
}

inline double attn_agg_vector(const Vector& x, double tau) {
  const Vector w = softmax_stable(x, tau);
  double y = 0.0;
  for (std::size_t i = 0; i < x.len(); ++i) y += w[i] * x[i];
  return y;
}

/// grad_x += g * d attn_agg_vector / dx.
inline void attn_agg_vector_backward(const Vector& x, double tau, double g,
                                     Vector& grad_x) {
  const Vector w = softmax_stable(x, tau);
  double y = 0.0;
  for (std::size_t i = 0; i < x.len(); ++i) y += w[i] * x[i];
  for (std::size_t i = 0; i < x.len(); ++i)
    grad_x[i] += g * w[i] * (1.0 + (x[i] - y) / tau);
}

namespace detail {

inline Vector col(const Matrix& m, std::size_t j) {
  Vector v(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) v[i] = m.at(i, j);
  return v;
}

inline Vector row_vec(const Matrix& m, std::size_t i) {
  Vector v(m.cols);
  for (std::size_t j = 0; j < m.cols; ++j) v[j] = m.row(i)[j];
  return v;
}

}  // namespace detail

inline double attn_agg_matrix(const Matrix& s_fw, double tau) {
  if (s_fw.rows == 0 || s_fw.cols == 0)
    throw ShapeError("attn_agg_matrix: empty matrix");
  Vector s_vid(s_fw.cols), s_sen(s_fw.rows);
  for (std::size_t j = 0; j < s_fw.cols; ++j)
    s_vid[j] = attn_agg_vector(detail::col(s_fw, j), tau);
  for (std::size_t i = 0; i < s_fw.rows; ++i)
    s_sen[i] = attn_agg_vector(detail::row_vec(s_fw, i), tau);
  return 0.5 * (attn_agg_vector(s_vid, tau) + attn_agg_vector(s_sen, tau));
}

inline void attn_agg_matrix_backward(const Matrix& s_fw, double tau, double g,
                                     Matrix& grad) {
  Vector s_vid(s_fw.cols), s_sen(s_fw.rows);
  for (std::size_t j = 0; j < s_fw.cols; ++j)
    s_vid[j] = attn_agg_vector(detail::col(s_fw, j), tau);
  for (std::size_t i = 0; i < s_fw.rows; ++i)
    s_sen[i] = attn_agg_vector(detail::row_vec(s_fw, i), tau);
  Vector d_vid(s_fw.cols), d_sen(s_fw.rows);
  attn_agg_vector_backward(s_vid, tau, 0.5 * g, d_vid);
  attn_agg_vector_backward(s_sen, tau, 0.5 * g, d_sen);
  for (std::size_t j = 0; j < s_fw.cols; ++j) {
    Vector c = detail::col(s_fw, j), dc(s_fw.rows);
    attn_agg_vector_backward(c, tau, d_vid[j], dc);
    for (std::size_t i = 0; i < s_fw.rows; ++i) grad.at(i, j) += dc[i];
  }
  for (std::size_t i = 0; i < s_fw.rows; ++i) {
    Vector r = detail::row_vec(s_fw, i), dr(s_fw.cols);
    attn_agg_vector_backward(r, tau, d_sen[i], dr);
    for (std::size_t j = 0; j < s_fw.cols; ++j) grad.at(i, j) += dr[j];
  }
}

inline double baseline_agg_matrix(const Matrix& s_fw, Reduce first,
                                  Reduce second) {
  if (s_fw.rows == 0 || s_fw.cols == 0)
    throw ShapeError("baseline_agg_matrix: empty matrix");
  Vector per_col(s_fw.cols), per_row(s_fw.rows);
  for (std::size_t j = 0; j < s_fw.cols; ++j)
    per_col[j] = reduce(detail::col(s_fw, j), first);
  for (std::size_t i = 0; i < s_fw.rows; ++i)
    per_row[i] = reduce(detail::row_vec(s_fw, i), first);
  return 0.5 * (reduce(per_col, second) + reduce(per_row, second));
}

namespace detail {

// Subgradient for max: all mass on the first maximal entry, matching
// std::max_element order so forward and backward agree at ties.
inline void reduce_backward(const Vector& x, Reduce kind, double g,
                            Vector& grad) {
  if (kind == Reduce::Mean) {
    const double gi = g / static_cast<double>(x.len());
    for (std::size_t i = 0; i < x.len(); ++i) grad[i] += gi;
  } else {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < x.len(); ++i)
      if (x[i] > x[arg]) arg = i;
    grad[arg] += g;
  }
}

}  // namespace detail

inline void baseline_agg_matrix_backward(const Matrix& s_fw, Reduce first,
                                         Reduce second, double g,
                                         Matrix& grad) {
  Vector per_col(s_fw.cols), per_row(s_fw.rows);
  for (std::size_t j = 0; j < s_fw.cols; ++j)
    per_col[j] = reduce(detail::col(s_fw, j), first);
  for (std::size_t i = 0; i < s_fw.rows; ++i)
    per_row[i] = reduce(detail::row_vec(s_fw, i), first);
  Vector d_col(s_fw.cols), d_row(s_fw.rows);
  detail::reduce_backward(per_col, second, 0.5 * g, d_col);
  detail::reduce_backward(per_row, second, 0.5 * g, d_row);
  for (std::size_t j = 0; j < s_fw.cols; ++j) {
    Vector c = detail::col(s_fw, j), dc(s_fw.rows);
    detail::reduce_backward(c, first, d_col[j], dc);
    for (std::size_t i = 0; i < s_fw.rows; ++i) grad.at(i, j) += dc[i];
  }
  for (std::size_t i = 0; i < s_fw.rows; ++i) {
    Vector r = detail::row_vec(s_fw, i), dr(s_fw.cols);
    detail::reduce_backward(r, first, d_row[i], dr);
    for (std::size_t j = 0; j < s_fw.cols; ++j) grad.at(i, j) += dr[j];
  }
}

namespace detail {

inline Reduce stage1_of(AggMethod m) {
  return (m == AggMethod::MeanMean || m == AggMethod::MeanMax) ? Reduce::Mean
                                                               : Reduce::Max;
}

inline Reduce stage2_of(AggMethod m) {
  return (m == AggMethod::MeanMean || m == AggMethod::MaxMean) ? Reduce::Mean
                                                               : Reduce::Max;
}

}  // namespace detail

/// Vector paths (s_vw, s_fs) have one axis, so baselines apply only the
/// stage-1 reducer there.
inline AggregatedScores aggregate_bundle(const SimilarityBundle& b,
                                         const AggregationConfig& cfg) {
  AggregatedScores out;
  out.s_vs = b.s_vs;
  if (cfg.method == AggMethod::Attention) {
    if (!(cfg.tau > 0.0)) throw ParamError("aggregate_bundle: tau must be > 0");
    out.s_vw_agg = attn_agg_vector(b.s_vw, cfg.tau);
    out.s_fs_agg = attn_agg_vector(b.s_fs, cfg.tau);
    out.s_fw_agg = attn_agg_matrix(b.s_fw, cfg.tau);
  } else {
    const Reduce r1 = detail::stage1_of(cfg.method);
    const Reduce r2 = detail::stage2_of(cfg.method);
    out.s_vw_agg = reduce(b.s_vw, r1);
    out.s_fs_agg = reduce(b.s_fs, r1);
    out.s_fw_agg = baseline_agg_matrix(b.s_fw, r1, r2);
  }
  return out;
}

/// Upstream gradients on the four aggregated scalars, pushed back to the
/// raw bundle entries.
inline BundleGrad aggregate_bundle_backward(const SimilarityBundle& b,
                                            const AggregationConfig& cfg,
                                            double g_vs, double g_vw,
                                            double g_fs, double g_fw) {
  BundleGrad grad;
  grad.d_vs = g_vs;
  grad.d_vw = Vector(b.s_vw.len());
  grad.d_fs = Vector(b.s_fs.len());
  grad.d_fw = Matrix(b.s_fw.rows, b.s_fw.cols);
  if (cfg.method == AggMethod::Attention) {
    attn_agg_vector_backward(b.s_vw, cfg.tau, g_vw, grad.d_vw);
    attn_agg_vector_backward(b.s_fs, cfg.tau, g_fs, grad.d_fs);
    attn_agg_matrix_backward(b.s_fw, cfg.tau, g_fw, grad.d_fw);
  } else {
    const Reduce r1 = detail::stage1_of(cfg.method);
    const Reduce r2 = detail::stage2_of(cfg.method);
    detail::reduce_backward(b.s_vw, r1, g_vw, grad.d_vw);
    detail::reduce_backward(b.s_fs, r1, g_fs, grad.d_fs);
    baseline_agg_matrix_backward(b.s_fw, r1, r2, g_fw, grad.d_fw);
  }
  return grad;
}

}  // namespace xgrain
