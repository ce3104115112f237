#pragma once

// Adam with cosine-decayed learning rates over the toy trainable set
// (temporal encoder + projection heads + optional logit scale), plus the
// finite-difference gradient checker.

#include <cmath>
#include <string>
#include <vector>

#include "xgrain/core.hpp"
#include "xgrain/error.hpp"
#include "xgrain/eval.hpp"
#include "xgrain/model.hpp"
#include "xgrain/objective.hpp"
#include "xgrain/store.hpp"

namespace xgrain {

/// Cosine decay to zero over `total` steps.
inline double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  const double t = std::min(1.0, static_cast<double>(step) /
                                     static_cast<double>(total));
  return base * 0.5 * (1.0 + std::cos(M_PI * t));
}

class AdamOptimizer {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit AdamOptimizer(std::size_t n_params) : m_(n_params), v_(n_params) {}

  /// One update over a flat parameter/gradient layout; `lr` per entry.
  void step(std::vector<double*>& params, const std::vector<double>& grads,
            const std::vector<double>& lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grads[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grads[i] * grads[i];
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      *params[i] -= lr[i] * mhat / (std::sqrt(vhat) + kEps);
    }
  }

 private:
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

// ---- gradient checking ----

struct GradCheckGroup {
  std::string name;
  double max_rel = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel = 0.0;
  bool pass(double tol = 1e-4) const { return max_rel <= tol; }
};

inline TrainingBatch random_toy_batch(std::size_t B, std::size_t n,
                                      std::size_t m, std::size_t dim,
                                      Rng& rng) {
  TrainingBatch batch;
  for (std::size_t k = 0; k < B; ++k) {
    TokenSequence v{"v" + std::to_string(k), Matrix(n, dim)};
    TokenSequence t{"t" + std::to_string(k), Matrix(m, dim)};
    for (double& x : v.tokens.data) x = rng.normal();
    for (double& x : t.tokens.data) x = rng.normal();
    batch.videos.push_back(std::move(v));
    batch.texts.push_back(std::move(t));
  }
  return batch;
}

/// Central finite differences (fourth-order stencil, step h) against the
/// analytic backward pass.
/// Relative error uses max(|analytic|, |numeric|, 1e-3) as denominator so
/// near-zero gradients are judged on an absolute scale. `corrupt_offset`
/// perturbs one analytic entry; it exists as a negative-control hook.
inline GradCheckReport grad_check(RetrievalModel& model,
                                  const TrainingBatch& batch,
                                  const AggregationConfig& cfg,
                                  const ContrastToggles& toggles,
                                  double h = 1e-3,
                                  double corrupt_offset = 0.0) {
  RetrievalModel analytic = zero_grads(model);
  loss_backward(model, batch, cfg, toggles, analytic);
  if (corrupt_offset != 0.0) analytic.encoder.pos.data[0] += corrupt_offset;

  auto param_refs = model.tensors();
  auto grad_refs = analytic.tensors();
  GradCheckReport rep;
  auto loss_at = [&]() {
    PipelineCache c;
    model_score_matrix(model, batch, cfg, toggles, &c);
    return info_nce(c.scores).l_total;
  };
  for (std::size_t g = 0; g < param_refs.size(); ++g) {
    GradCheckGroup group{param_refs[g].name, 0.0};
    for (std::size_t i = 0; i < param_refs[g].size; ++i) {
      double* p = param_refs[g].data + i;
      const double saved = *p;
      // fourth-order central stencil at step h
      *p = saved + h;
      const double lp1 = loss_at();
      *p = saved - h;
      const double lm1 = loss_at();
      *p = saved + 2.0 * h;
      const double lp2 = loss_at();
      *p = saved - 2.0 * h;
      const double lm2 = loss_at();
      *p = saved;
      const double numeric =
          (8.0 * (lp1 - lm1) - (lp2 - lm2)) / (12.0 * h);
      const double a = grad_refs[g].data[i];
      const double rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1e-3});
      group.max_rel = std::max(group.max_rel, rel);
    }
    rep.max_rel = std::max(rep.max_rel, group.max_rel);
    rep.groups.push_back(group);
  }
  return rep;
}

// ---- toy training ----

struct TrainOptions {
  std::size_t epochs = 30;
  double lr_encoder = 1e-4;
  double lr_heads = 1e-3;
  std::size_t batch_size = 16;
  double val_frac = 0.25;
  std::uint64_t seed = 0;
  AggregationConfig agg;
  ContrastToggles toggles;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double l_v2t = 0.0;
  double l_t2v = 0.0;
  double val_r1 = 0.0;
  double lr = 0.0;  // decayed head learning rate
};

struct TrainResult {
  std::vector<EpochLog> logs;
  double initial_loss = 0.0;  // first epoch mean loss
  double final_loss = 0.0;
};

inline TrainResult train_toy(RetrievalModel& model, const Corpus& videos,
                             const Corpus& texts, const PairList& pairs,
                             const TrainOptions& opt) {
  if (pairs.pairs.empty()) throw ShapeError("train_toy: no pairs");
  std::vector<std::pair<const TokenSequence*, const TokenSequence*>> items;
  for (const auto& [vid, tid] : pairs.pairs)
    items.emplace_back(&videos.by_id(vid), &texts.by_id(tid));

  const std::size_t n_val = std::min(
      items.size() - 1,
      static_cast<std::size_t>(
          std::ceil(opt.val_frac * static_cast<double>(items.size()))));
  const std::size_t n_train = items.size() - n_val;

  // Flat parameter layout: encoder group then heads group.
  auto enc_refs = model.encoder_tensors();
  auto head_refs = model.head_tensors();
  std::vector<double*> flat;
  std::vector<double> lr_base;
  for (auto& r : enc_refs)
    for (std::size_t i = 0; i < r.size; ++i) {
      flat.push_back(r.data + i);
      lr_base.push_back(opt.lr_encoder);
    }
  for (auto& r : head_refs)
    for (std::size_t i = 0; i < r.size; ++i) {
      flat.push_back(r.data + i);
      lr_base.push_back(opt.lr_heads);
    }
  AdamOptimizer adam(flat.size());

  Rng shuffle_rng(opt.seed);
  std::vector<std::size_t> order(n_train);
  for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
  const std::size_t batches_per_epoch =
      (n_train + opt.batch_size - 1) / opt.batch_size;
  const std::size_t total_steps = opt.epochs * batches_per_epoch;

  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t i = n_train; i-- > 1;) {
      const std::size_t j = shuffle_rng.below(i + 1);
      std::swap(order[i], order[j]);
    }
    double sum_loss = 0.0, sum_v2t = 0.0, sum_t2v = 0.0;
    double last_lr = 0.0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      TrainingBatch batch;
      for (std::size_t k = b * opt.batch_size;
           k < std::min(n_train, (b + 1) * opt.batch_size); ++k) {
        batch.videos.push_back(*items[order[k]].first);
        batch.texts.push_back(*items[order[k]].second);
      }
      RetrievalModel grads = zero_grads(model);
      LossReport rep = loss_backward(model, batch, opt.agg, opt.toggles, grads);
      if (!std::isfinite(rep.l_total))
        throw TrainError("train_toy: loss diverged at epoch " +
                         std::to_string(epoch));
      sum_loss += rep.l_total;
      sum_v2t += rep.l_v2t;
      sum_t2v += rep.l_t2v;

      auto genc = grads.encoder_tensors();
      auto ghead = grads.head_tensors();
      std::vector<double> gflat;
      gflat.reserve(flat.size());
      for (auto& r : genc)
        gflat.insert(gflat.end(), r.data, r.data + r.size);
      for (auto& r : ghead)
        gflat.insert(gflat.end(), r.data, r.data + r.size);

      const double factor = cosine_lr(1.0, step, total_steps);
      std::vector<double> lr(lr_base.size());
      for (std::size_t i = 0; i < lr.size(); ++i) lr[i] = lr_base[i] * factor;
      last_lr = opt.lr_heads * factor;
      adam.step(flat, gflat, lr);
      if (model.train_scale)
        model.logit_scale = std::clamp(model.logit_scale, 1.0, 200.0);
      ++step;
    }

    // held-out t2v R@1 (falls back to the train split when no holdout)
    TrainingBatch eval_batch;
    const std::size_t eval_begin = n_val > 0 ? n_train : 0;
    const std::size_t eval_end = n_val > 0 ? items.size() : n_train;
    for (std::size_t k = eval_begin; k < eval_end; ++k) {
      eval_batch.videos.push_back(*items[k].first);
      eval_batch.texts.push_back(*items[k].second);
    }
    const Matrix val_scores =
        model_score_matrix(model, eval_batch, opt.agg, opt.toggles);
    const double val_r1 = evaluate(val_scores, Direction::T2V).r_at.at(1);

    EpochLog log;
    log.epoch = epoch;
    log.loss = sum_loss / static_cast<double>(batches_per_epoch);
    log.l_v2t = sum_v2t / static_cast<double>(batches_per_epoch);
    log.l_t2v = sum_t2v / static_cast<double>(batches_per_epoch);
    log.val_r1 = val_r1;
    log.lr = last_lr;
    result.logs.push_back(log);
  }
  result.initial_loss = result.logs.front().loss;
  result.final_loss = result.logs.back().loss;
  return result;
}

}  // namespace xgrain
