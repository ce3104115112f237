#pragma once

// Planted-alignment corpora: each pair shares a latent unit topic vector;
// a chosen fraction of frames/words are noisy copies of the topic, the
// rest are independent random unit vectors. Relevance masks let tests
// compare aggregators against the ideal filtered score.

#include <cmath>
#include <string>
#include <vector>

#include "xgrain/core.hpp"
#include "xgrain/error.hpp"
#include "xgrain/store.hpp"

namespace xgrain {

struct SynthConfig {
  std::size_t num_pairs = 64;
  std::size_t dim = 32;
  std::size_t frames_per_video = 12;
  std::size_t words_per_text = 8;
  double relevant_frac = 0.25;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
};

struct RelevanceMask {
  std::string pair_id;
  std::vector<std::size_t> relevant_frames;
  std::vector<std::size_t> relevant_words;
};

struct SynthDataset {
  Corpus videos;
  Corpus texts;
  PairList pairs;
  std::vector<RelevanceMask> masks;
};

namespace detail {

inline Vector random_unit(std::size_t dim, Rng& rng) {
  Vector v(dim);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      v[i] = rng.normal();
      norm2 += v[i] * v[i];
    }
  } while (norm2 == 0.0);
  const double inv = 1.0 / std::sqrt(norm2);
  for (std::size_t i = 0; i < dim; ++i) v[i] *= inv;
  return v;
}

inline void fill_tokens(Matrix& tokens, const Vector& topic,
                        std::size_t n_relevant, double sigma, Rng& rng,
                        std::vector<std::size_t>& mask) {
  const std::size_t dim = tokens.cols;
  for (std::size_t i = 0; i < tokens.rows; ++i) {
    Vector tok(dim);
    if (i < n_relevant) {
      for (std::size_t c = 0; c < dim; ++c)
        tok[c] = topic[c] + sigma * rng.normal();
      tok = l2_normalize(tok);
      mask.push_back(i);
    } else {
      tok = random_unit(dim, rng);
    }
    for (std::size_t c = 0; c < dim; ++c) tokens.at(i, c) = tok[c];
  }
}

}  // namespace detail

inline void validate(const SynthConfig& cfg) {
  if (cfg.num_pairs == 0 || cfg.dim == 0 || cfg.frames_per_video == 0 ||
      cfg.words_per_text == 0)
    throw ParamError("synth: counts must be >= 1");
  if (!(cfg.relevant_frac > 0.0 && cfg.relevant_frac <= 1.0))
    throw ParamError("synth: relevant_frac must be in (0, 1]");
  if (cfg.noise_sigma < 0.0)
    throw ParamError("synth: noise_sigma must be >= 0");
}

inline SynthDataset generate(const SynthConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  SynthDataset ds;
  ds.videos.dim = cfg.dim;
  ds.texts.dim = cfg.dim;
  const auto rel_frames = static_cast<std::size_t>(
      std::ceil(cfg.relevant_frac * static_cast<double>(cfg.frames_per_video)));
  const auto rel_words = static_cast<std::size_t>(
      std::ceil(cfg.relevant_frac * static_cast<double>(cfg.words_per_text)));
  for (std::size_t k = 0; k < cfg.num_pairs; ++k) {
    const Vector topic = detail::random_unit(cfg.dim, rng);
    const std::string tag = std::to_string(k);
    TokenSequence video{"v" + tag, Matrix(cfg.frames_per_video, cfg.dim)};
    TokenSequence text{"t" + tag, Matrix(cfg.words_per_text, cfg.dim)};
    RelevanceMask mask;
    mask.pair_id = tag;
    detail::fill_tokens(video.tokens, topic, rel_frames, cfg.noise_sigma, rng,
                        mask.relevant_frames);
    detail::fill_tokens(text.tokens, topic, rel_words, cfg.noise_sigma, rng,
                        mask.relevant_words);
    ds.videos.items.push_back(std::move(video));
    ds.texts.items.push_back(std::move(text));
    ds.pairs.pairs.emplace_back("v" + tag, "t" + tag);
    ds.masks.push_back(std::move(mask));
  }
  return ds;
}

/// Ideal-filter score: mean frame.word dot product over relevant cells only.
inline double oracle_score(const TokenSequence& video, const TokenSequence& text,
                           const RelevanceMask& mask) {
  if (mask.relevant_frames.empty() || mask.relevant_words.empty())
    throw ShapeError("oracle_score: empty relevance mask");
  double sum = 0.0;
  for (auto i : mask.relevant_frames)
    for (auto j : mask.relevant_words)
      sum += dot(video.tokens.row(i), text.tokens.row(j), video.tokens.cols);
  return sum / static_cast<double>(mask.relevant_frames.size() *
                                   mask.relevant_words.size());
}

}  // namespace xgrain
