#pragma once

// Fused pair similarity (mean of the enabled contrast scores), the B x B
// batch score matrix, the symmetric InfoNCE loss, and the end-to-end
// analytic backward pass for training.

#include <cmath>
#include <thread>
#include <vector>

#include "xgrain/aggregate.hpp"
#include "xgrain/contrast.hpp"
#include "xgrain/core.hpp"
#include "xgrain/error.hpp"
#include "xgrain/model.hpp"

namespace xgrain {

struct ContrastToggles {
  bool use_vs = true;
  bool use_vw = true;
  bool use_fs = true;
  bool use_fw = true;

  int enabled_count() const {
    return int(use_vs) + int(use_vw) + int(use_fs) + int(use_fw);
  }
};

/// Mean of the enabled aggregated scores.
inline double pair_similarity(const AggregatedScores& a,
                              const ContrastToggles& t) {
  const int n = t.enabled_count();
  if (n == 0) throw ParamError("pair_similarity: all contrast toggles off");
  double sum = 0.0;
  if (t.use_vs) sum += a.s_vs;
  if (t.use_vw) sum += a.s_vw_agg;
  if (t.use_fs) sum += a.s_fs_agg;
  if (t.use_fw) sum += a.s_fw_agg;
  return sum / n;
}

/// Score grid over precomputed features; cell (i,j) is
/// scale * pair_similarity(aggregate(contrast(videos[i], texts[j]))).
inline Matrix score_matrix(const std::vector<VideoFeatures>& videos,
                           const std::vector<TextFeatures>& texts,
                           const AggregationConfig& cfg,
                           const ContrastToggles& toggles, double scale,
                           unsigned threads = 1) {
  if (videos.empty() || texts.empty())
    throw ShapeError("score_matrix: empty feature list");
  if (toggles.enabled_count() == 0)
    throw ParamError("score_matrix: all contrast toggles off");
  Matrix scores(videos.size(), texts.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t j = 0; j < texts.size(); ++j) {
        const SimilarityBundle b = contrast_pair(videos[i], texts[j]);
        scores.at(i, j) =
            scale * pair_similarity(aggregate_bundle(b, cfg), toggles);
      }
  };
  if (threads <= 1 || videos.size() < 2) {
    work(0, videos.size());
  } else {
    const std::size_t nt = std::min<std::size_t>(threads, videos.size());
    std::vector<std::thread> pool;
    const std::size_t chunk = (videos.size() + nt - 1) / nt;
    for (std::size_t t = 0; t < nt; ++t)
      pool.emplace_back(work, t * chunk,
                        std::min(videos.size(), (t + 1) * chunk));
    for (auto& th : pool) th.join();
  }
  check_finite(scores, "score matrix");
  return scores;
}

struct LossReport {
  double l_v2t = 0.0;
  double l_t2v = 0.0;
  double l_total = 0.0;
  Matrix score_matrix;
};

namespace detail {

/// log(sum_j exp(x_j)), max-subtracted.
inline double log_sum_exp(const double* x, std::size_t n, std::size_t stride) {
  double mx = x[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j * stride]);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += std::exp(x[j * stride] - mx);
  return mx + std::log(s);
}

}  // namespace detail

/// Symmetric InfoNCE over a square score matrix; positives on the diagonal.
inline LossReport info_nce(const Matrix& scores) {
  if (scores.rows != scores.cols)
    throw ShapeError("info_nce: score matrix not square (" +
                     shape_str(scores) + ")");
  if (scores.rows == 0) throw ShapeError("info_nce: empty score matrix");
  check_finite(scores, "info_nce scores");
  const std::size_t B = scores.rows;
  LossReport rep;
  rep.score_matrix = scores;
  for (std::size_t i = 0; i < B; ++i) {
    rep.l_v2t += detail::log_sum_exp(scores.row(i), B, 1) - scores.at(i, i);
    rep.l_t2v +=
        detail::log_sum_exp(scores.data.data() + i, B, B) - scores.at(i, i);
  }
  rep.l_v2t /= static_cast<double>(B);
  rep.l_t2v /= static_cast<double>(B);
  rep.l_total = rep.l_v2t + rep.l_t2v;
  return rep;
}

/// dL/dS for the symmetric loss: (row softmax - I)/B + (col softmax - I)/B.
inline Matrix info_nce_backward(const Matrix& scores) {
  const std::size_t B = scores.rows;
  Matrix grad(B, B);
  const double invB = 1.0 / static_cast<double>(B);
  for (std::size_t i = 0; i < B; ++i) {
    const double lse_row = detail::log_sum_exp(scores.row(i), B, 1);
    const double lse_col = detail::log_sum_exp(scores.data.data() + i, B, B);
    for (std::size_t j = 0; j < B; ++j) {
      grad.at(i, j) += invB * std::exp(scores.at(i, j) - lse_row);
      grad.at(j, i) += invB * std::exp(scores.at(j, i) - lse_col);
    }
    grad.at(i, i) -= 2.0 * invB;
  }
  return grad;
}

struct TrainingBatch {
  std::vector<TokenSequence> videos;  // raw frame embeddings
  std::vector<TokenSequence> texts;   // raw word embeddings
  std::size_t size() const { return videos.size(); }
};

struct PipelineCache {
  std::vector<VideoCache> vids;
  std::vector<TextCache> txts;
  std::vector<VideoFeatures> vfeats;
  std::vector<TextFeatures> tfeats;
  Matrix scores;
};

inline Matrix model_score_matrix(const RetrievalModel& m,
                                 const TrainingBatch& batch,
                                 const AggregationConfig& cfg,
                                 const ContrastToggles& toggles,
                                 PipelineCache* cache = nullptr) {
  if (batch.videos.empty() || batch.videos.size() != batch.texts.size())
    throw ShapeError("model_score_matrix: batch needs equal nonzero counts");
  PipelineCache local;
  PipelineCache& c = cache ? *cache : local;
  const std::size_t B = batch.size();
  c.vids.assign(B, {});
  c.txts.assign(B, {});
  c.vfeats.clear();
  c.tfeats.clear();
  for (std::size_t i = 0; i < B; ++i) {
    c.vfeats.push_back(model_video_features(m, batch.videos[i], c.vids[i]));
    c.tfeats.push_back(model_text_features(m, batch.texts[i], c.txts[i]));
  }
  c.scores =
      score_matrix(c.vfeats, c.tfeats, cfg, toggles, m.logit_scale, 1);
  return c.scores;
}

/// Full forward + analytic backward: InfoNCE -> fused score -> aggregation
/// -> contrast -> normalization/pooling -> projections -> temporal encoder.
/// Gradients accumulate into `grads` (zero_grads shape).
inline LossReport loss_backward(const RetrievalModel& m,
                                const TrainingBatch& batch,
                                const AggregationConfig& cfg,
                                const ContrastToggles& toggles,
                                RetrievalModel& grads) {
  PipelineCache c;
  model_score_matrix(m, batch, cfg, toggles, &c);
  LossReport rep = info_nce(c.scores);
  const Matrix dS = info_nce_backward(c.scores);
  const std::size_t B = batch.size();
  const std::size_t dim = m.dim();
  const int n_enabled = toggles.enabled_count();

  std::vector<Matrix> d_vfine(B), d_tfine(B);
  std::vector<Vector> d_vcoarse(B, Vector(dim)), d_tcoarse(B, Vector(dim));
  for (std::size_t i = 0; i < B; ++i) {
    d_vfine[i] = Matrix(c.vfeats[i].fine.rows, dim);
    d_tfine[i] = Matrix(c.tfeats[i].fine.rows, dim);
  }

  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < B; ++j) {
      const double g = dS.at(i, j);
      const SimilarityBundle b = contrast_pair(c.vfeats[i], c.tfeats[j]);
      const AggregatedScores a = aggregate_bundle(b, cfg);
      grads.logit_scale += g * pair_similarity(a, toggles);
      const double gk = g * m.logit_scale / n_enabled;
      const BundleGrad bg = aggregate_bundle_backward(
          b, cfg, toggles.use_vs ? gk : 0.0, toggles.use_vw ? gk : 0.0,
          toggles.use_fs ? gk : 0.0, toggles.use_fw ? gk : 0.0);
      contrast_pair_backward(c.vfeats[i], c.tfeats[j], bg, d_vfine[i],
                             d_vcoarse[i], d_tfine[j], d_tcoarse[j]);
    }

  for (std::size_t i = 0; i < B; ++i) {
    model_video_backward(m, c.vids[i], d_vfine[i], d_vcoarse[i], grads);
    model_text_backward(m, c.txts[i], d_tfine[i], d_tcoarse[i], grads);
  }
  auto check = [&](const Matrix& mat, const char* name) {
    for (double v : mat.data)
      if (!std::isfinite(v))
        throw NumericError(std::string("loss_backward: NaN gradient in ") +
                           name);
  };
  check(grads.proj_v_w, "proj_v.w");
  check(grads.proj_t_w, "proj_t.w");
  check(grads.encoder.pos, "pos_embed");
  return rep;
}

}  // namespace xgrain
