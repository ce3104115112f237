#pragma once

// The four similarity structures computed from one video-text pair:
// coarse-coarse scalar, the two cross-grained vectors, and the
// frame-word matrix.

#include <vector>

#include "xgrain/core.hpp"
#include "xgrain/encoder.hpp"
#include "xgrain/error.hpp"

namespace xgrain {

struct SimilarityBundle {
  double s_vs = 0.0;  // video . sentence
  Vector s_vw;        // len m, video . each word
  Vector s_fs;        // len n, each frame . sentence
  Matrix s_fw;        // n x m, frame . word
};

inline SimilarityBundle contrast_pair(const VideoFeatures& v,
                                      const TextFeatures& t) {
  const std::size_t dim = v.fine.cols;
  if (dim != t.fine.cols)
    throw ShapeError("contrast_pair: video dim " + std::to_string(dim) +
                     " != text dim " + std::to_string(t.fine.cols));
  const std::size_t n = v.n(), m = t.m();
  SimilarityBundle b;
  b.s_vs = dot(v.coarse.data.data(), t.coarse.data.data(), dim);
  b.s_vw = Vector(m);
  for (std::size_t j = 0; j < m; ++j)
    b.s_vw[j] = dot(v.coarse.data.data(), t.fine.row(j), dim);
  b.s_fs = Vector(n);
  for (std::size_t i = 0; i < n; ++i)
    b.s_fs[i] = dot(v.fine.row(i), t.coarse.data.data(), dim);
  b.s_fw = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      b.s_fw.at(i, j) = dot(v.fine.row(i), t.fine.row(j), dim);
  return b;
}

/// Grid cell (i,j) = contrast_pair(videos[i], texts[j]).
inline std::vector<std::vector<SimilarityBundle>> contrast_batch(
    const std::vector<VideoFeatures>& videos,
    const std::vector<TextFeatures>& texts) {
  if (videos.empty() || texts.empty())
    throw ShapeError("contrast_batch: empty input list");
  std::vector<std::vector<SimilarityBundle>> grid(videos.size());
  for (std::size_t i = 0; i < videos.size(); ++i) {
    grid[i].reserve(texts.size());
    for (std::size_t j = 0; j < texts.size(); ++j)
      grid[i].push_back(contrast_pair(videos[i], texts[j]));
  }
  return grid;
}

/// Gradients of the bundle entries pushed back onto the pair's features.
/// Upstream gradients mirror the bundle layout.
struct BundleGrad {
  double d_vs = 0.0;
  Vector d_vw;
  Vector d_fs;
  Matrix d_fw;
};

inline void contrast_pair_backward(const VideoFeatures& v,
                                   const TextFeatures& t, const BundleGrad& g,
                                   Matrix& d_vfine, Vector& d_vcoarse,
                                   Matrix& d_tfine, Vector& d_tcoarse) {
  const std::size_t dim = v.fine.cols, n = v.n(), m = t.m();
  for (std::size_t c = 0; c < dim; ++c) {
    d_vcoarse[c] += g.d_vs * t.coarse[c];
    d_tcoarse[c] += g.d_vs * v.coarse[c];
  }
  for (std::size_t j = 0; j < m; ++j) {
    const double gj = g.d_vw[j];
    if (gj == 0.0) continue;
    for (std::size_t c = 0; c < dim; ++c) {
      d_vcoarse[c] += gj * t.fine.at(j, c);
      d_tfine.at(j, c) += gj * v.coarse[c];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double gi = g.d_fs[i];
    if (gi == 0.0) continue;
    for (std::size_t c = 0; c < dim; ++c) {
      d_vfine.at(i, c) += gi * t.coarse[c];
      d_tcoarse[c] += gi * v.fine.at(i, c);
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double gij = g.d_fw.at(i, j);
      if (gij == 0.0) continue;
      for (std::size_t c = 0; c < dim; ++c) {
        d_vfine.at(i, c) += gij * t.fine.at(j, c);
        d_tfine.at(j, c) += gij * v.fine.at(i, c);
      }
    }
}

}  // namespace xgrain
