#pragma once

// Trainable retrieval model at toy scale: temporal encoder over frame
// features plus one linear projection head per modality. Fine features are
// row L2-normalized after projection; coarse features are the normalized
// mean of the fine rows. Frozen input embeddings stand in for the CLIP
// towers.

#include <vector>

#include "xgrain/core.hpp"
#include "xgrain/encoder.hpp"
#include "xgrain/error.hpp"
#include "xgrain/store.hpp"

namespace xgrain {

struct RetrievalModel {
  TemporalEncoderParams encoder;
  bool encoder_enabled = true;
  Matrix proj_v_w, proj_t_w;  // dim x dim
  Vector proj_v_b, proj_t_b;  // dim
  double logit_scale = 100.0;
  bool train_scale = false;

  std::size_t dim() const { return encoder.dim; }

  /// Encoder tensors first, then head tensors; order is the flat
  /// parameter layout used by the optimizer and gradient checks.
  std::vector<TensorRef> encoder_tensors() { return encoder.tensors(); }

  std::vector<TensorRef> head_tensors() {
    std::vector<TensorRef> out;
    out.push_back({"proj_v.w", {proj_v_w.rows, proj_v_w.cols},
                   proj_v_w.data.data(), proj_v_w.size()});
    out.push_back({"proj_v.b", {proj_v_b.len()}, proj_v_b.data.data(),
                   proj_v_b.len()});
    out.push_back({"proj_t.w", {proj_t_w.rows, proj_t_w.cols},
                   proj_t_w.data.data(), proj_t_w.size()});
    out.push_back({"proj_t.b", {proj_t_b.len()}, proj_t_b.data.data(),
                   proj_t_b.len()});
    if (train_scale) out.push_back({"logit_scale", {1}, &logit_scale, 1});
    return out;
  }

  std::vector<TensorRef> tensors() {
    auto out = encoder_tensors();
    auto heads = head_tensors();
    out.insert(out.end(), heads.begin(), heads.end());
    return out;
  }
};

/// Projection heads start near identity so a planted alignment survives
/// initialization.
inline RetrievalModel init_model(std::size_t dim, std::size_t layers,
                                 std::size_t heads, std::size_t max_frames,
                                 Rng& rng) {
  RetrievalModel m;
  m.encoder = init_params(dim, layers, heads, max_frames, rng);
  const double bound = 0.1 / std::sqrt(static_cast<double>(dim));
  auto near_identity = [&](Matrix& w) {
    w = Matrix(dim, dim);
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j)
        w.at(i, j) = (i == j ? 1.0 : 0.0) + rng.uniform(-bound, bound);
  };
  near_identity(m.proj_v_w);
  near_identity(m.proj_t_w);
  m.proj_v_b = Vector(dim);
  m.proj_t_b = Vector(dim);
  return m;
}

inline RetrievalModel zero_grads(const RetrievalModel& m) {
  RetrievalModel z = m;
  z.encoder = zeros_like(m.encoder);
  z.proj_v_w.data.assign(z.proj_v_w.data.size(), 0.0);
  z.proj_t_w.data.assign(z.proj_t_w.data.size(), 0.0);
  z.proj_v_b.data.assign(z.proj_v_b.data.size(), 0.0);
  z.proj_t_b.data.assign(z.proj_t_b.data.size(), 0.0);
  z.logit_scale = 0.0;
  return z;
}

namespace detail {

struct NormCache {
  Matrix pre;                    // rows before normalization
  std::vector<double> row_norm;  // Euclidean norms
  Matrix fine;                   // normalized rows
  Vector mean_raw;
  double mean_norm = 0.0;
  Vector coarse;
};

inline void normalize_and_pool(const Matrix& pre, NormCache& c) {
  c.pre = pre;
  c.row_norm.assign(pre.rows, 0.0);
  c.fine = pre;
  for (std::size_t i = 0; i < pre.rows; ++i) {
    double* r = c.fine.row(i);
    const double norm = std::sqrt(dot(r, r, pre.cols));
    c.row_norm[i] = norm;
    if (norm > 0.0)
      for (std::size_t j = 0; j < pre.cols; ++j) r[j] /= norm;
  }
  c.mean_raw = Vector(pre.cols);
  for (std::size_t i = 0; i < pre.rows; ++i)
    for (std::size_t j = 0; j < pre.cols; ++j)
      c.mean_raw[j] += c.fine.at(i, j) / static_cast<double>(pre.rows);
  c.mean_norm =
      std::sqrt(dot(c.mean_raw.data.data(), c.mean_raw.data.data(), pre.cols));
  c.coarse = l2_normalize(c.mean_raw);
}

/// Push d_fine/d_coarse back through pooling and row normalization;
/// returns the gradient on the pre-normalization rows.
inline Matrix normalize_and_pool_backward(const NormCache& c,
                                          const Matrix& d_fine_in,
                                          const Vector& d_coarse) {
  const std::size_t n = c.pre.rows, dim = c.pre.cols;
  Matrix d_fine = d_fine_in;
  if (c.mean_norm > 0.0) {
    double gy = 0.0;
    for (std::size_t j = 0; j < dim; ++j) gy += d_coarse[j] * c.coarse[j];
    for (std::size_t j = 0; j < dim; ++j) {
      const double dm = (d_coarse[j] - gy * c.coarse[j]) / c.mean_norm;
      for (std::size_t i = 0; i < n; ++i)
        d_fine.at(i, j) += dm / static_cast<double>(n);
    }
  }
  Matrix d_pre(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    const double norm = c.row_norm[i];
    if (norm == 0.0) continue;
    double gy = 0.0;
    for (std::size_t j = 0; j < dim; ++j)
      gy += d_fine.at(i, j) * c.fine.at(i, j);
    for (std::size_t j = 0; j < dim; ++j)
      d_pre.at(i, j) = (d_fine.at(i, j) - gy * c.fine.at(i, j)) / norm;
  }
  return d_pre;
}

}  // namespace detail

struct VideoCache {
  EncoderCache enc;
  Matrix proj_in;  // encoder output
  detail::NormCache norm;
};

struct TextCache {
  Matrix proj_in;  // raw word embeddings
  detail::NormCache norm;
};

inline VideoFeatures model_video_features(const RetrievalModel& m,
                                          const TokenSequence& frames,
                                          VideoCache& cache) {
  VideoFeatures enc =
      encode_video(frames, m.encoder, m.encoder_enabled, &cache.enc);
  cache.proj_in = enc.fine;
  Matrix pre = detail::linear(enc.fine, m.proj_v_w, m.proj_v_b);
  detail::normalize_and_pool(pre, cache.norm);
  return {cache.norm.fine, cache.norm.coarse};
}

inline TextFeatures model_text_features(const RetrievalModel& m,
                                        const TokenSequence& words,
                                        TextCache& cache) {
  if (words.tokens.cols != m.dim())
    throw ShapeError("model_text_features: dim mismatch");
  cache.proj_in = words.tokens;
  Matrix pre = detail::linear(words.tokens, m.proj_t_w, m.proj_t_b);
  detail::normalize_and_pool(pre, cache.norm);
  return {cache.norm.fine, cache.norm.coarse};
}

inline void model_video_backward(const RetrievalModel& m,
                                 const VideoCache& cache, const Matrix& d_fine,
                                 const Vector& d_coarse,
                                 RetrievalModel& grads) {
  Matrix d_pre =
      detail::normalize_and_pool_backward(cache.norm, d_fine, d_coarse);
  Matrix d_enc = detail::linear_backward(d_pre, cache.proj_in, m.proj_v_w,
                                         grads.proj_v_w, grads.proj_v_b);
  Vector zero_coarse(m.dim());
  encode_video_backward(d_enc, zero_coarse, cache.enc, m.encoder,
                        grads.encoder, nullptr);
}

inline void model_text_backward(const RetrievalModel& m, const TextCache& cache,
                                const Matrix& d_fine, const Vector& d_coarse,
                                RetrievalModel& grads) {
  Matrix d_pre =
      detail::normalize_and_pool_backward(cache.norm, d_fine, d_coarse);
  detail::linear_backward(d_pre, cache.proj_in, m.proj_t_w, grads.proj_t_w,
                          grads.proj_t_b);
}

/// Frozen-feature path used by pure scoring (no model): fine rows are the
/// load-normalized embeddings, coarse is the normalized mean.
inline VideoFeatures video_features_from_tokens(const TokenSequence& seq) {
  VideoFeatures f;
  f.fine = l2_normalize_rows(seq.tokens);
  f.coarse = coarse_from_fine(f.fine);
  return f;
}

inline TextFeatures text_features_from_tokens(const TokenSequence& seq) {
  TextFeatures f;
  f.fine = l2_normalize_rows(seq.tokens);
  f.coarse = coarse_from_fine(f.fine);
  return f;
}

}  // namespace xgrain
