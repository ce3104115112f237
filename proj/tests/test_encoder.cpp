#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "xgrain/encoder.hpp"

using namespace xgrain;

namespace {

TokenSequence random_frames(std::size_t n, std::size_t dim, Rng& rng) {
  TokenSequence f{"f", Matrix(n, dim)};
  for (double& v : f.tokens.data) v = rng.normal();
  return f;
}

double encoder_scalar_loss(const VideoFeatures& out) {
  // simple weighted sum so the backward check has a dense upstream signal
  double s = 0.0;
  for (std::size_t i = 0; i < out.fine.size(); ++i)
    s += std::sin(0.3 * static_cast<double>(i + 1)) * out.fine.data[i];
  for (std::size_t j = 0; j < out.coarse.len(); ++j)
    s += std::cos(0.2 * static_cast<double>(j + 1)) * out.coarse[j];
  return s;
}

}  // namespace

TEST_CASE("disabled encoder is identity on fine features") {
  Rng rng(1);
  auto p = init_params(8, 3, 2, 12, rng);
  auto frames = random_frames(4, 8, rng);
  auto out = encode_video(frames, p, false);
  CHECK(out.fine.data == frames.tokens.data);
}

TEST_CASE("single frame coarse is the normalized frame") {
  Rng rng(2);
  auto p = init_params(2, 0, 1, 4, rng);
  TokenSequence f{"f", Matrix(1, 2)};
  f.tokens.data = {3, 4};
  auto out = encode_video(f, p, false);
  CHECK(out.coarse[0] == doctest::Approx(0.6));
  CHECK(out.coarse[1] == doctest::Approx(0.8));
}

TEST_CASE("zero-weight blocks reduce to frames plus positions") {
  Rng rng(3);
  auto p = init_params(8, 2, 2, 12, rng);
  for (auto& L : p.layers) {
    for (Matrix* m : {&L.wq, &L.wk, &L.wv, &L.wo, &L.w1, &L.w2})
      m->data.assign(m->data.size(), 0.0);
    for (Vector* v : {&L.bq, &L.bk, &L.bv, &L.bo, &L.b1, &L.b2})
      v->data.assign(v->data.size(), 0.0);
  }
  auto frames = random_frames(3, 8, rng);
  auto out = encode_video(frames, p, true);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      CHECK(out.fine.at(i, j) ==
            doctest::Approx(frames.tokens.at(i, j) + p.pos.at(i, j))
                .epsilon(1e-12));
}

TEST_CASE("zero layers act as identity plus positions") {
  Rng rng(4);
  auto p = init_params(8, 0, 2, 12, rng);
  auto frames = random_frames(3, 8, rng);
  auto out = encode_video(frames, p, true);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      CHECK(out.fine.at(i, j) == frames.tokens.at(i, j) + p.pos.at(i, j));
}

TEST_CASE("init_params determinism and validation") {
  Rng a(7), b(7);
  auto pa = init_params(8, 3, 2, 12, a);
  auto pb = init_params(8, 3, 2, 12, b);
  CHECK(pa.pos.data == pb.pos.data);
  CHECK(pa.layers[2].w1.data == pb.layers[2].w1.data);
  Rng c(7);
  CHECK_THROWS_AS(init_params(8, 3, 3, 12, c), ParamError);
}

TEST_CASE("shape errors: too many frames, dim mismatch") {
  Rng rng(8);
  auto p = init_params(8, 1, 2, 4, rng);
  CHECK_THROWS_AS(encode_video(random_frames(5, 8, rng), p, true), ShapeError);
  CHECK_THROWS_AS(encode_video(random_frames(2, 6, rng), p, true), ShapeError);
}

TEST_CASE("permuting frames changes fine outputs") {
  Rng rng(9);
  auto p = init_params(8, 2, 2, 12, rng);
  auto frames = random_frames(4, 8, rng);
  auto out = encode_video(frames, p, true);
  TokenSequence swapped = frames;
  for (std::size_t j = 0; j < 8; ++j)
    std::swap(swapped.tokens.at(0, j), swapped.tokens.at(1, j));
  auto out2 = encode_video(swapped, p, true);
  bool differs = false;
  for (std::size_t j = 0; j < 8; ++j)
    differs = differs ||
              std::abs(out.fine.at(0, j) - out2.fine.at(1, j)) > 1e-9;
  CHECK(differs);
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  Rng rng(10);
  auto p = init_params(8, 2, 2, 12, rng);
  auto frames = random_frames(3, 8, rng);
  EncoderCache cache;
  encode_video(frames, p, true, &cache);
  auto grads = zeros_like(p);
  Matrix gfine(3, 8);
  Vector gcoarse(8);
  encode_video_backward(gfine, gcoarse, cache, p, grads, nullptr);
  for (auto& t : grads.tensors())
    for (std::size_t i = 0; i < t.size; ++i) CHECK(t.data[i] == 0.0);
}

TEST_CASE("disabled encoder backward leaves parameters untouched") {
  Rng rng(11);
  auto p = init_params(8, 2, 2, 12, rng);
  auto frames = random_frames(3, 8, rng);
  EncoderCache cache;
  encode_video(frames, p, false, &cache);
  auto grads = zeros_like(p);
  Matrix gfine(3, 8, 1.0);
  Vector gcoarse(8, 0.5);
  Matrix ginput;
  encode_video_backward(gfine, gcoarse, cache, p, grads, &ginput);
  for (auto& t : grads.tensors())
    for (std::size_t i = 0; i < t.size; ++i) CHECK(t.data[i] == 0.0);
  // input gradient = upstream fine + chain through mean+normalize
  bool nonzero = false;
  for (double v : ginput.data) nonzero = nonzero || v != 0.0;
  CHECK(nonzero);
}

TEST_CASE("encoder gradients match central finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed * 31 + 1);
    auto p = init_params(8, 2, 2, 12, rng);
    auto frames = random_frames(3, 8, rng);
    EncoderCache cache;
    auto out = encode_video(frames, p, true, &cache);

    Matrix gfine(3, 8);
    Vector gcoarse(8);
    for (std::size_t i = 0; i < gfine.size(); ++i)
      gfine.data[i] = std::sin(0.3 * static_cast<double>(i + 1));
    for (std::size_t j = 0; j < 8; ++j)
      gcoarse[j] = std::cos(0.2 * static_cast<double>(j + 1));
    auto grads = zeros_like(p);
    Matrix ginput;
    encode_video_backward(gfine, gcoarse, cache, p, grads, &ginput);

    const double h = 1e-3;
    double max_rel = 0.0;
    auto refs = p.tensors();
    auto grefs = grads.tensors();
    for (std::size_t g = 0; g < refs.size(); ++g) {
      // spot check a handful of entries per tensor to keep runtime down
      for (std::size_t i = 0; i < refs[g].size;
           i += std::max<std::size_t>(1, refs[g].size / 7)) {
        double* ptr = refs[g].data + i;
        const double saved = *ptr;
        auto eval = [&](double v) {
          *ptr = v;
          return encoder_scalar_loss(encode_video(frames, p, true));
        };
        const double numeric = (8.0 * (eval(saved + h) - eval(saved - h)) -
                                (eval(saved + 2 * h) - eval(saved - 2 * h))) /
                               (12.0 * h);
        *ptr = saved;
        const double a = grefs[g].data[i];
        max_rel = std::max(max_rel,
                           std::abs(a - numeric) /
                               std::max({std::abs(a), std::abs(numeric), 1e-3}));
      }
    }
    // input gradient too
    for (std::size_t i = 0; i < frames.tokens.size(); i += 5) {
      const double saved = frames.tokens.data[i];
      auto eval = [&](double v) {
        frames.tokens.data[i] = v;
        return encoder_scalar_loss(encode_video(frames, p, true));
      };
      const double numeric = (8.0 * (eval(saved + h) - eval(saved - h)) -
                              (eval(saved + 2 * h) - eval(saved - 2 * h))) /
                             (12.0 * h);
      frames.tokens.data[i] = saved;
      const double a = ginput.data[i];
      max_rel = std::max(max_rel,
                         std::abs(a - numeric) /
                             std::max({std::abs(a), std::abs(numeric), 1e-3}));
    }
    CHECK(max_rel <= 1e-4);
  }
}

TEST_CASE("checkpoint round trip") {
  Rng rng(21);
  auto p = init_params(8, 2, 2, 6, rng);
  // snap to f32 so the round trip is exact
  for (auto& t : p.tensors())
    for (std::size_t i = 0; i < t.size; ++i)
      t.data[i] = static_cast<float>(t.data[i]);
  const auto path =
      (std::filesystem::temp_directory_path() / "xg_ckpt.bin").string();
  write_checkpoint(p, {}, path);
  auto back = read_checkpoint(path);
  CHECK(back.dim == 8);
  CHECK(back.heads == 2);
  CHECK(back.layers.size() == 2);
  CHECK(back.max_frames == 6);
  CHECK(back.pos.data == p.pos.data);
  CHECK(back.layers[1].w2.data == p.layers[1].w2.data);
}
