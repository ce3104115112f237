#pragma once

// Temporal encoder over frame features: learned position embeddings plus a
// stack of pre-norm transformer blocks (multi-head self-attention, GELU
// feed-forward with 4x expansion), then mean pooling to the coarse video
// vector. Pre-norm keeps a zero-weight stack an exact identity through the
// residual connections. Includes the full analytic backward pass and a
// named-tensor checkpoint format ("XGEP").

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "xgrain/core.hpp"
#include "xgrain/error.hpp"
#include "xgrain/store.hpp"

namespace xgrain {

struct VideoFeatures {
  Matrix fine;    // n x dim
  Vector coarse;  // dim
  std::size_t n() const { return fine.rows; }
};

struct TextFeatures {
  Matrix fine;    // m x dim
  Vector coarse;  // dim
  std::size_t m() const { return fine.rows; }
};

struct EncoderLayerParams {
  Matrix wq, wk, wv, wo;  // dim x dim
  Vector bq, bk, bv, bo;  // dim
  Vector ln1_g, ln1_b, ln2_g, ln2_b;
  Matrix w1;  // dim x 4*dim
  Vector b1;  // 4*dim
  Matrix w2;  // 4*dim x dim
  Vector b2;  // dim
};

struct TensorRef {
  std::string name;
  std::vector<std::size_t> dims;
  double* data;
  std::size_t size;
};

struct TemporalEncoderParams {
  std::size_t dim = 0;
  std::size_t heads = 0;
  std::size_t max_frames = 0;
  Matrix pos;  // max_frames x dim
  std::vector<EncoderLayerParams> layers;

  std::vector<TensorRef> tensors() {
    std::vector<TensorRef> out;
    auto add_m = [&](const std::string& n, Matrix& m) {
      out.push_back({n, {m.rows, m.cols}, m.data.data(), m.size()});
    };
    auto add_v = [&](const std::string& n, Vector& v) {
      out.push_back({n, {v.len()}, v.data.data(), v.len()});
    };
    add_m("pos_embed", pos);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& L = layers[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      add_m(p + "wq", L.wq); add_v(p + "bq", L.bq);
      add_m(p + "wk", L.wk); add_v(p + "bk", L.bk);
      add_m(p + "wv", L.wv); add_v(p + "bv", L.bv);
      add_m(p + "wo", L.wo); add_v(p + "bo", L.bo);
      add_v(p + "ln1_g", L.ln1_g); add_v(p + "ln1_b", L.ln1_b);
      add_m(p + "w1", L.w1); add_v(p + "b1", L.b1);
      add_m(p + "w2", L.w2); add_v(p + "b2", L.b2);
      add_v(p + "ln2_g", L.ln2_g); add_v(p + "ln2_b", L.ln2_b);
    }
    return out;
  }
};

inline TemporalEncoderParams zeros_like(const TemporalEncoderParams& p) {
  TemporalEncoderParams z = p;
  z.pos.data.assign(z.pos.data.size(), 0.0);
  for (auto& L : z.layers) {
    for (Matrix* m : {&L.wq, &L.wk, &L.wv, &L.wo, &L.w1, &L.w2})
      m->data.assign(m->data.size(), 0.0);
    for (Vector* v : {&L.bq, &L.bk, &L.bv, &L.bo, &L.ln1_g, &L.ln1_b,
                      &L.ln2_g, &L.ln2_b, &L.b1, &L.b2})
      v->data.assign(v->data.size(), 0.0);
  }
  return z;
}

inline TemporalEncoderParams init_params(std::size_t dim, std::size_t layers,
                                         std::size_t heads,
                                         std::size_t max_frames, Rng& rng) {
  if (heads == 0 || dim % heads != 0)
    throw ParamError("init_params: dim " + std::to_string(dim) +
                     " not divisible by heads " + std::to_string(heads));
  if (max_frames == 0) throw ParamError("init_params: max_frames must be >= 1");
  TemporalEncoderParams p;
  p.dim = dim;
  p.heads = heads;
  p.max_frames = max_frames;
  // Scaled-down uniform(-1/sqrt(dim), 1/sqrt(dim)): the residual branches
  // start small so a fresh encoder stays close to identity-plus-positions
  // instead of scrambling whatever structure the input features carry.
  const double bound = 0.3 / std::sqrt(static_cast<double>(dim));
  auto fill_m = [&](Matrix& m, std::size_t r, std::size_t c) {
    m = Matrix(r, c);
    for (double& v : m.data) v = rng.uniform(-bound, bound);
  };
  p.pos = Matrix(max_frames, dim);
  for (double& v : p.pos.data) v = rng.normal(0.0, 0.01);
  p.layers.resize(layers);
  for (auto& L : p.layers) {
    fill_m(L.wq, dim, dim); fill_m(L.wk, dim, dim);
    fill_m(L.wv, dim, dim); fill_m(L.wo, dim, dim);
    L.bq = Vector(dim); L.bk = Vector(dim); L.bv = Vector(dim);
    L.bo = Vector(dim);
    L.ln1_g = Vector(dim, 1.0); L.ln1_b = Vector(dim);
    L.ln2_g = Vector(dim, 1.0); L.ln2_b = Vector(dim);
    fill_m(L.w1, dim, 4 * dim);
    L.b1 = Vector(4 * dim);
    fill_m(L.w2, 4 * dim, dim);
    L.b2 = Vector(dim);
  }
  return p;
}

namespace detail {

constexpr double kLnEps = 1e-5;

// Smooth activation keeps finite-difference gradient checks well posed.
inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

inline double gelu_grad(double x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
         x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

struct LayerNormCache {
  Matrix xhat;         // n x dim
  std::vector<double> inv_std;  // per row
};

inline Matrix layer_norm(const Matrix& x, const Vector& g, const Vector& b,
                         LayerNormCache& cache) {
  Matrix y(x.rows, x.cols);
  cache.xhat = Matrix(x.rows, x.cols);
  cache.inv_std.assign(x.rows, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* xr = x.row(i);
    double mu = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) mu += xr[j];
    mu /= static_cast<double>(x.cols);
    double var = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      const double d = xr[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(x.cols);
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    cache.inv_std[i] = inv;
    for (std::size_t j = 0; j < x.cols; ++j) {
      const double xh = (xr[j] - mu) * inv;
      cache.xhat.at(i, j) = xh;
      y.at(i, j) = g[j] * xh + b[j];
    }
  }
  return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const Vector& g,
                                  const LayerNormCache& cache, Vector& dg,
                                  Vector& db) {
  const std::size_t n = dy.rows, d = dy.cols;
  Matrix dx(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = cache.xhat.at(i, j);
      dg[j] += dy.at(i, j) * xh;
      db[j] += dy.at(i, j);
      const double dxh = dy.at(i, j) * g[j];
      sum_dxhat += dxh;
      sum_dxhat_xhat += dxh * xh;
    }
    const double inv = cache.inv_std[i];
    const double nd = static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = cache.xhat.at(i, j);
      const double dxh = dy.at(i, j) * g[j];
      dx.at(i, j) = inv * (dxh - sum_dxhat / nd - xh * sum_dxhat_xhat / nd);
    }
  }
  return dx;
}

struct LayerCache {
  Matrix x;           // block input
  LayerNormCache ln1;
  Matrix h1;          // ln1(x), attention input
  Matrix q, k, v;     // n x dim
  std::vector<Matrix> attn;  // per head, n x n row-softmax weights
  Matrix concat;      // n x dim, heads concatenated
  Matrix a;           // x + mha(ln1(x))
  LayerNormCache ln2;
  Matrix h2;          // ln2(a), feed-forward input
  Matrix ffn_pre;     // n x 4dim, pre-ReLU
  Matrix ffn_h;       // n x 4dim, post-ReLU
};

inline Matrix linear(const Matrix& x, const Matrix& w, const Vector& b) {
  Matrix y = matmul(x, w);
  for (std::size_t i = 0; i < y.rows; ++i)
    for (std::size_t j = 0; j < y.cols; ++j) y.at(i, j) += b[j];
  return y;
}

/// dX for y = xW + b; accumulates dW, db.
inline Matrix linear_backward(const Matrix& dy, const Matrix& x,
                              const Matrix& w, Matrix& dw, Vector& db) {
  Matrix xt = transpose(x);
  Matrix dwi = matmul(xt, dy);
  for (std::size_t i = 0; i < dw.size(); ++i) dw.data[i] += dwi.data[i];
  for (std::size_t i = 0; i < dy.rows; ++i)
    for (std::size_t j = 0; j < dy.cols; ++j) db[j] += dy.at(i, j);
  return matmul(dy, transpose(w));
}

inline Matrix encoder_block(const Matrix& x, const EncoderLayerParams& L,
                            std::size_t heads, LayerCache& cache) {
  const std::size_t n = x.rows, d = x.cols, dk = d / heads;
  cache.x = x;
  cache.h1 = layer_norm(x, L.ln1_g, L.ln1_b, cache.ln1);
  cache.q = linear(cache.h1, L.wq, L.bq);
  cache.k = linear(cache.h1, L.wk, L.bk);
  cache.v = linear(cache.h1, L.wv, L.bv);
  cache.attn.assign(heads, Matrix());
  cache.concat = Matrix(n, d);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dk;
    Matrix& A = cache.attn[h];
    A = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      Vector logits(n);
      for (std::size_t j = 0; j < n; ++j)
        logits[j] =
            scale * dot(cache.q.row(i) + off, cache.k.row(j) + off, dk);
      Vector w = softmax_stable(logits, 1.0);
      for (std::size_t j = 0; j < n; ++j) A.at(i, j) = w[j];
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double aij = A.at(i, j);
        for (std::size_t c = 0; c < dk; ++c)
          cache.concat.at(i, off + c) += aij * cache.v.at(j, off + c);
      }
  }
  Matrix mha = linear(cache.concat, L.wo, L.bo);
  cache.a = x;
  for (std::size_t i = 0; i < cache.a.size(); ++i)
    cache.a.data[i] += mha.data[i];
  cache.h2 = layer_norm(cache.a, L.ln2_g, L.ln2_b, cache.ln2);
  cache.ffn_pre = linear(cache.h2, L.w1, L.b1);
  cache.ffn_h = cache.ffn_pre;
  for (double& v : cache.ffn_h.data) v = gelu(v);
  Matrix ffn_out = linear(cache.ffn_h, L.w2, L.b2);
  Matrix out = cache.a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += ffn_out.data[i];
  return out;
}

inline Matrix encoder_block_backward(const Matrix& dout,
                                     const EncoderLayerParams& L,
                                     std::size_t heads, const LayerCache& cache,
                                     EncoderLayerParams& g) {
  const std::size_t n = cache.x.rows, d = cache.x.cols, dk = d / heads;
  // out = a + ffn(ln2(a))
  Matrix dffn_h = linear_backward(dout, cache.ffn_h, L.w2, g.w2, g.b2);
  for (std::size_t i = 0; i < dffn_h.size(); ++i)
    dffn_h.data[i] *= gelu_grad(cache.ffn_pre.data[i]);
  Matrix dh2 = linear_backward(dffn_h, cache.h2, L.w1, g.w1, g.b1);
  Matrix da = layer_norm_backward(dh2, L.ln2_g, cache.ln2, g.ln2_g, g.ln2_b);
  for (std::size_t i = 0; i < da.size(); ++i) da.data[i] += dout.data[i];
  // a = x + mha(ln1(x))
  Matrix dconcat = linear_backward(da, cache.concat, L.wo, g.wo, g.bo);
  Matrix dq(n, d), dkm(n, d), dv(n, d);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dk;
    const Matrix& A = cache.attn[h];
    // dA and dV for this head
    Matrix dA(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dk; ++c)
          s += dconcat.at(i, off + c) * cache.v.at(j, off + c);
        dA.at(i, j) = s;
        const double aij = A.at(i, j);
        for (std::size_t c = 0; c < dk; ++c)
          dv.at(j, off + c) += aij * dconcat.at(i, off + c);
      }
    // row softmax backward
    for (std::size_t i = 0; i < n; ++i) {
      double rowdot = 0.0;
      for (std::size_t j = 0; j < n; ++j) rowdot += dA.at(i, j) * A.at(i, j);
      for (std::size_t j = 0; j < n; ++j) {
        const double dz = A.at(i, j) * (dA.at(i, j) - rowdot) * scale;
        for (std::size_t c = 0; c < dk; ++c) {
          dq.at(i, off + c) += dz * cache.k.at(j, off + c);
          dkm.at(j, off + c) += dz * cache.q.at(i, off + c);
        }
      }
    }
  }
  Matrix dh1 = linear_backward(dq, cache.h1, L.wq, g.wq, g.bq);
  Matrix t = linear_backward(dkm, cache.h1, L.wk, g.wk, g.bk);
  for (std::size_t i = 0; i < dh1.size(); ++i) dh1.data[i] += t.data[i];
  t = linear_backward(dv, cache.h1, L.wv, g.wv, g.bv);
  for (std::size_t i = 0; i < dh1.size(); ++i) dh1.data[i] += t.data[i];
  Matrix dx = layer_norm_backward(dh1, L.ln1_g, cache.ln1, g.ln1_g, g.ln1_b);
  for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += da.data[i];
  return dx;
}

}  // namespace detail

struct EncoderCache {
  bool enabled = false;
  std::size_t n = 0;
  Matrix input;  // raw frames
  std::vector<detail::LayerCache> layers;
  Matrix fine;
  Vector mean_raw;       // mean of fine rows, pre-normalization
  double mean_norm = 0;  // its Euclidean norm
  Vector coarse;
};

/// Mean-pool rows then L2-normalize the mean.
inline Vector coarse_from_fine(const Matrix& fine) {
  Vector mean(fine.cols);
  for (std::size_t i = 0; i < fine.rows; ++i)
    for (std::size_t j = 0; j < fine.cols; ++j)
      mean[j] += fine.at(i, j) / static_cast<double>(fine.rows);
  return l2_normalize(mean);
}

inline VideoFeatures encode_video(const TokenSequence& frames,
                                  const TemporalEncoderParams& p, bool enabled,
                                  EncoderCache* cache = nullptr) {
  if (frames.tokens.cols != p.dim)
    throw ShapeError("encode_video: frame dim " +
                     std::to_string(frames.tokens.cols) + " != encoder dim " +
                     std::to_string(p.dim));
  if (frames.tokens.rows > p.max_frames)
    throw ShapeError("encode_video: " + std::to_string(frames.tokens.rows) +
                     " frames exceed max_frames " +
                     std::to_string(p.max_frames));
  const std::size_t n = frames.tokens.rows;
  Matrix x = frames.tokens;
  EncoderCache local;
  EncoderCache& c = cache ? *cache : local;
  c.enabled = enabled;
  c.n = n;
  c.input = frames.tokens;
  c.layers.clear();
  if (enabled) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < p.dim; ++j) x.at(i, j) += p.pos.at(i, j);
    c.layers.resize(p.layers.size());
    for (std::size_t l = 0; l < p.layers.size(); ++l)
      x = detail::encoder_block(x, p.layers[l], p.heads, c.layers[l]);
  }
  VideoFeatures out;
  out.fine = x;
  c.fine = x;
  c.mean_raw = Vector(p.dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p.dim; ++j)
      c.mean_raw[j] += x.at(i, j) / static_cast<double>(n);
  c.mean_norm =
      std::sqrt(dot(c.mean_raw.data.data(), c.mean_raw.data.data(), p.dim));
  out.coarse = l2_normalize(c.mean_raw);
  c.coarse = out.coarse;
  check_finite(out.fine, "encode_video fine output");
  return out;
}

/// Backward of encode_video. Accumulates parameter gradients into `grads`
/// (same shapes as `p`) and writes the gradient w.r.t. the raw frame input.
inline void encode_video_backward(const Matrix& grad_fine,
                                  const Vector& grad_coarse,
                                  const EncoderCache& cache,
                                  const TemporalEncoderParams& p,
                                  TemporalEncoderParams& grads,
                                  Matrix* grad_input) {
  if (!grad_fine.same_shape(cache.fine) || grad_coarse.len() != p.dim)
    throw ShapeError("encode_video_backward: gradient shape mismatch");
  const std::size_t n = cache.n, d = p.dim;
  // coarse = mean_raw / ||mean_raw||
  Vector dmean(d);
  if (cache.mean_norm > 0.0) {
    double gy = 0.0;
    for (std::size_t j = 0; j < d; ++j) gy += grad_coarse[j] * cache.coarse[j];
    for (std::size_t j = 0; j < d; ++j)
      dmean[j] = (grad_coarse[j] - gy * cache.coarse[j]) / cache.mean_norm;
  }
  Matrix dfine = grad_fine;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      dfine.at(i, j) += dmean[j] / static_cast<double>(n);
  if (cache.enabled) {
    for (std::size_t l = p.layers.size(); l-- > 0;)
      dfine = detail::encoder_block_backward(dfine, p.layers[l], p.heads,
                                             cache.layers[l], grads.layers[l]);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j)
        grads.pos.at(i, j) += dfine.at(i, j);
  }
  if (grad_input) *grad_input = dfine;
  for (double v : dfine.data)
    if (!std::isfinite(v))
      throw NumericError("encode_video_backward: non-finite input gradient");
}

// ---- checkpoint ("XGEP") ----

namespace detail {
constexpr char kParamMagic[4] = {'X', 'G', 'E', 'P'};
constexpr std::uint32_t kParamVersion = 1;
}  // namespace detail

inline void write_checkpoint(TemporalEncoderParams& p,
                             std::vector<TensorRef> extra,
                             const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("write_checkpoint: cannot open '" + path + "'");
  os.write(detail::kParamMagic, 4);
  detail::put<std::uint32_t>(os, detail::kParamVersion);
  std::vector<double> meta = {static_cast<double>(p.dim),
                              static_cast<double>(p.heads),
                              static_cast<double>(p.layers.size()),
                              static_cast<double>(p.max_frames)};
  std::vector<TensorRef> all = {{"meta", {4}, meta.data(), 4}};
  auto own = p.tensors();
  all.insert(all.end(), own.begin(), own.end());
  all.insert(all.end(), extra.begin(), extra.end());
  for (const auto& t : all) {
    detail::put<std::uint16_t>(os, static_cast<std::uint16_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.dims.size()));
    for (auto dsz : t.dims)
      detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(dsz));
    for (std::size_t i = 0; i < t.size; ++i)
      detail::put<float>(os, static_cast<float>(t.data[i]));
  }
  if (!os) throw IoError("write_checkpoint: write failed on '" + path + "'");
}

/// Loads encoder params; any extra tensors (projection heads, logit scale)
/// are returned by name in `extra_out`.
inline TemporalEncoderParams read_checkpoint(
    const std::string& path,
    std::vector<std::pair<std::string, Matrix>>* extra_out = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("read_checkpoint: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, detail::kParamMagic, 4) != 0)
    throw FormatError("read_checkpoint: bad magic in '" + path + "'");
  const auto version = detail::get<std::uint32_t>(is, "version");
  if (version != detail::kParamVersion)
    throw FormatError("read_checkpoint: unsupported version " +
                      std::to_string(version));
  std::vector<std::pair<std::string, Matrix>> records;
  while (is.peek() != std::ifstream::traits_type::eof()) {
    const auto name_len = detail::get<std::uint16_t>(is, "name_len");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw FormatError("read_checkpoint: truncated tensor name");
    const auto rank = detail::get<std::uint32_t>(is, "rank");
    std::vector<std::size_t> dims;
    std::size_t total = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      dims.push_back(detail::get<std::uint32_t>(is, "dims"));
      total *= dims.back();
    }
    Matrix m(rank == 2 ? dims[0] : 1, rank == 2 ? dims[1] : total);
    for (double& v : m.data) v = detail::get<float>(is, "tensor data");
    records.emplace_back(std::move(name), std::move(m));
  }
  const Matrix* meta = nullptr;
  for (const auto& [n, m] : records)
    if (n == "meta") meta = &m;
  if (!meta || meta->size() != 4)
    throw FormatError("read_checkpoint: missing meta tensor");
  const auto dim = static_cast<std::size_t>(meta->data[0]);
  const auto heads = static_cast<std::size_t>(meta->data[1]);
  const auto layers = static_cast<std::size_t>(meta->data[2]);
  const auto max_frames = static_cast<std::size_t>(meta->data[3]);
  Rng rng(0);
  TemporalEncoderParams p = init_params(dim, layers, heads, max_frames, rng);
  auto refs = p.tensors();
  for (auto& ref : refs) {
    bool found = false;
    for (auto& [n, m] : records)
      if (n == ref.name) {
        if (m.size() != ref.size)
          throw FormatError("read_checkpoint: tensor '" + n + "' size mismatch");
        std::copy(m.data.begin(), m.data.end(), ref.data);
        found = true;
      }
    if (!found)
      throw FormatError("read_checkpoint: missing tensor '" + ref.name + "'");
  }
  if (extra_out) {
    for (auto& [n, m] : records) {
      bool known = n == "meta";
      for (auto& ref : refs) known = known || ref.name == n;
      if (!known) extra_out->emplace_back(n, std::move(m));
    }
  }
  return p;
}

}  // namespace xgrain
