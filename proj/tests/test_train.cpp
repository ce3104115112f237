#include <doctest.h>

#include <cmath>

#include "xgrain/synth.hpp"
#include "xgrain/train.hpp"

using namespace xgrain;

namespace {

SynthDataset small_planted(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.num_pairs = 24;
  cfg.dim = 16;
  cfg.frames_per_video = 6;
  cfg.words_per_text = 4;
  cfg.relevant_frac = 0.5;
  cfg.noise_sigma = 0.1;
  cfg.seed = seed;
  return generate(cfg);
}

}  // namespace

TEST_CASE("cosine schedule endpoints") {
  CHECK(cosine_lr(1.0, 0, 100) == doctest::Approx(1.0));
  CHECK(cosine_lr(1.0, 50, 100) == doctest::Approx(0.5));
  CHECK(cosine_lr(1.0, 100, 100) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  auto ds = small_planted(3);
  Rng rng(3);
  auto model = init_model(16, 1, 2, 6, rng);
  model.logit_scale = 20.0;
  auto before = model;
  TrainOptions opt;
  opt.epochs = 3;
  opt.lr_encoder = 0.0;
  opt.lr_heads = 0.0;
  opt.batch_size = 32;  // one batch per epoch so the loss is comparable
  auto result = train_toy(model, ds.videos, ds.texts, ds.pairs, opt);
  CHECK(model.proj_v_w.data == before.proj_v_w.data);
  CHECK(model.encoder.pos.data == before.encoder.pos.data);
  for (std::size_t e = 1; e < result.logs.size(); ++e)
    CHECK(result.logs[e].loss == doctest::Approx(result.logs[0].loss));
}

TEST_CASE("same seed gives identical loss curves") {
  auto ds = small_planted(4);
  TrainOptions opt;
  opt.epochs = 4;
  opt.batch_size = 8;
  opt.seed = 11;
  Rng r1(7), r2(7);
  auto m1 = init_model(16, 1, 2, 6, r1);
  auto m2 = init_model(16, 1, 2, 6, r2);
  m1.logit_scale = m2.logit_scale = 20.0;
  auto a = train_toy(m1, ds.videos, ds.texts, ds.pairs, opt);
  auto b = train_toy(m2, ds.videos, ds.texts, ds.pairs, opt);
  REQUIRE(a.logs.size() == b.logs.size());
  for (std::size_t e = 0; e < a.logs.size(); ++e) {
    CHECK(a.logs[e].loss == b.logs[e].loss);
    CHECK(a.logs[e].val_r1 == b.logs[e].val_r1);
  }
}

TEST_CASE("training on planted data halves the loss") {
  SynthConfig cfg;
  cfg.num_pairs = 24;
  cfg.dim = 16;
  cfg.frames_per_video = 6;
  cfg.words_per_text = 4;
  cfg.relevant_frac = 0.5;
  cfg.noise_sigma = 0.4;  // noisy enough that the fresh model starts poorly
  cfg.seed = 5;
  auto ds = generate(cfg);
  Rng rng(5);
  auto model = init_model(16, 1, 2, 6, rng);
  model.logit_scale = 20.0;
  TrainOptions opt;
  opt.epochs = 30;
  opt.lr_encoder = 1e-4;
  opt.lr_heads = 1e-3;
  opt.batch_size = 9;
  opt.seed = 5;
  auto result = train_toy(model, ds.videos, ds.texts, ds.pairs, opt);
  CHECK(result.final_loss < 0.5 * result.initial_loss);
}
