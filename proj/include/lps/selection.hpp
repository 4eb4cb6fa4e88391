#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lps/common.hpp"
#include "lps/dataset.hpp"
#include "lps/model.hpp"
#include "lps/poisoning.hpp"
#include "lps/trigger.hpp"

namespace lps {

/// The FUS refill step ran out of fresh candidates in some class.
class RefillExhausted : public Error {
 public:
  using Error::Error;
};

/// Hidden widths of the default surrogate; the target model is wider.
inline const std::vector<std::size_t> kDefaultSurrogateHidden = {64, 32};
inline const std::vector<std::size_t> kDefaultTargetHidden = {128, 64};

inline std::vector<std::size_t> layer_dims(std::size_t input, const std::vector<std::size_t>& hidden,
                                           std::size_t classes) {
  std::vector<std::size_t> dims{input};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(classes);
  return dims;
}

/// Diagnostics of one selection iteration, written to the trace file.
struct IterationTrace {
  std::size_t iteration = 0;
  double objective = 0.0;       // sum_i m_i * score_i of the new mask (LPS)
  double surrogate_loss = 0.0;  // mean loss of the last surrogate epoch
  double overlap = 0.0;         // |m_new & m_old| / budget
  double mean_forgetting = 0.0; // FUS only
  std::size_t dropped = 0;      // FUS only
};

struct SelectionResult {
  Mask mask;
  std::size_t surrogate_epochs = 0;
  std::vector<IterationTrace> trace;
};

inline double mask_overlap(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, std::size_t budget) {
  std::size_t both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) both += a[i] && b[i];
  return budget ? static_cast<double>(both) / static_cast<double>(budget) : 0.0;
}

inline void require_feasible(const LabeledDataset& ds, const SelectionConstraint& con) {
  if (con.num_classes() != ds.num_classes())
    throw InfeasibleBudget("constraint has " + std::to_string(con.num_classes()) + " classes, dataset has " +
                           std::to_string(ds.num_classes()));
  for (std::size_t k = 0; k < ds.num_classes(); ++k) {
    if (con.quotas[k] > ds.class_count(k))
      throw InfeasibleBudget("class " + std::to_string(k) + " quota " + std::to_string(con.quotas[k]) +
                             " exceeds its " + std::to_string(ds.class_count(k)) + " samples");
    if (!con.eligible[k] && con.quotas[k] != 0)
      throw InfeasibleBudget("ineligible class " + std::to_string(k) + " has a nonzero quota");
  }
}

// ---------------------------------------------------------------------------
// Random

/// Uniform draw without replacement of q_k samples inside each class.
inline Mask random_select(const LabeledDataset& ds, const SelectionConstraint& con, std::uint64_t seed) {
  require_feasible(ds, con);
  Mask mask(ds.size(), 0);
  Rng rng(seed);
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < ds.num_classes(); ++k) {
    const std::size_t q = con.quotas[k];
    if (q == 0) continue;
    idx.resize(ds.class_count(k));
    std::iota(idx.begin(), idx.end(), ds.class_begin(k));
    // partial Fisher-Yates: the first q slots are a uniform q-subset
    for (std::size_t t = 0; t < q; ++t) {
      const std::size_t j = t + rng.below(idx.size() - t);
      std::swap(idx[t], idx[j]);
      mask[idx[t]] = 1;
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Inner maximisation

/// Poisoned-minus-clean loss of every sample under `model`:
/// l(f(g(x_i)), y~_i) - l(f(x_i), y_i).
inline std::vector<double> score_samples(const Classifier& model, const LabeledDataset& ds,
                                         const TriggerSpec& trigger, LabelMode mode) {
  if (model.input_dim() != ds.dim())
    throw DimensionMismatch("score_samples: model input " + std::to_string(model.input_dim()) +
                            " vs data dim " + std::to_string(ds.dim()));
  trigger.validate(ds.dim());
  std::vector<double> scores(ds.size());
  std::vector<double> fused(ds.dim());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto x = ds.features(i);
    fuse_into(x, trigger, fused);
    const int y = ds.label(i);
    scores[i] = model.loss(fused, map_label(y, ds.num_classes(), mode)) - model.loss(x, y);
    if (!std::isfinite(scores[i])) throw NumericError("score of sample " + std::to_string(i) + " is not finite");
  }
  return scores;
}

inline double inner_objective(std::span<const double> scores, std::span<const std::uint8_t> mask) {
  double s = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (mask[i]) s += scores[i];
  return s;
}

/// Exact maximiser of sum_i m_i * score_i under the per-class quotas: the
/// q_k highest scores of each class, ties to the lowest index.
inline Mask solve_inner(std::span<const double> scores, const LabeledDataset& ds, const SelectionConstraint& con) {
  require(scores.size() == ds.size(), "solve_inner: scores length " + std::to_string(scores.size()) +
                                          " != dataset size " + std::to_string(ds.size()));
  require_feasible(ds, con);
  for (double s : scores)
    if (std::isnan(s)) throw NumericError("solve_inner: NaN score");
  Mask mask(ds.size(), 0);
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < ds.num_classes(); ++k) {
    const std::size_t q = con.quotas[k];
    if (q == 0) continue;
    idx.resize(ds.class_count(k));
    std::iota(idx.begin(), idx.end(), ds.class_begin(k));
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(q), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
                      });
    for (std::size_t t = 0; t < q; ++t) mask[idx[t]] = 1;
  }
  return mask;
}

// ---------------------------------------------------------------------------
// LPS: alternate one surrogate epoch on the current mask (outer min) with
// an exact per-class top-k re-selection (inner max).

struct LpsConfig {
  std::size_t iterations = 15;
  std::size_t inner_epochs = 1;
  std::vector<std::size_t> surrogate_hidden = kDefaultSurrogateHidden;
  TrainConfig train;
  std::uint64_t seed = 0;

  void validate() const {
    require(iterations >= 1, "LpsConfig: iterations must be >= 1");
    require(inner_epochs >= 1, "LpsConfig: inner_epochs must be >= 1");
    train.validate();
  }
};

inline SelectionResult lps_select(const LabeledDataset& ds, const TriggerSpec& trigger, LabelMode mode,
                                  const SelectionConstraint& con, const LpsConfig& cfg) {
  cfg.validate();
  require_feasible(ds, con);
  trigger.validate(ds.dim());

  SelectionResult out;
  PoisonPlan plan{random_select(ds, con, cfg.seed), con.alpha, mode, trigger};
  Classifier surrogate =
      Classifier::init(layer_dims(ds.dim(), cfg.surrogate_hidden, ds.num_classes()), derive_seed(cfg.seed, 1));
  TrainConfig tcfg = cfg.train;
  tcfg.seed = derive_seed(cfg.seed, 2);

  std::size_t epoch = 0;
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    EpochReport rep;
    const Samples poisoned = apply_plan(ds, plan);
    for (std::size_t e = 0; e < cfg.inner_epochs; ++e) rep = train_epoch(surrogate, poisoned, tcfg, epoch++);

    const auto scores = score_samples(surrogate, ds, trigger, mode);
    Mask next = solve_inner(scores, ds, con);

    IterationTrace tr;
    tr.iteration = t;
    tr.objective = inner_objective(scores, next);
    tr.surrogate_loss = rep.mean_loss;
    tr.overlap = mask_overlap(plan.mask, next, con.budget);
    out.trace.push_back(tr);
    plan.mask = std::move(next);
  }
  out.surrogate_epochs = epoch;
  out.mask = std::move(plan.mask);
  return out;
}

// ---------------------------------------------------------------------------
// Forgetting events

/// Per-sample count of correct -> incorrect transitions between successive
/// checks.
class ForgettingCounter {
 public:
  ForgettingCounter() = default;
  explicit ForgettingCounter(std::size_t n) : prev_(n, 0), counts_(n, 0) {}

  std::size_t size() const noexcept { return counts_.size(); }
  const std::vector<std::size_t>& counts() const noexcept { return counts_; }
  std::size_t checks() const noexcept { return checks_; }

  /// Feeds one round of correctness observations.
  void record(std::span<const std::uint8_t> correct) {
    require(correct.size() == size(), "ForgettingCounter: observation length mismatch");
    for (std::size_t i = 0; i < size(); ++i) {
      if (checks_ > 0 && prev_[i] && !correct[i]) ++counts_[i];
      prev_[i] = correct[i] ? 1 : 0;
    }
    ++checks_;
  }

 private:
  std::vector<std::uint8_t> prev_;
  std::vector<std::size_t> counts_;
  std::size_t checks_ = 0;
};

inline void count_forgetting(const Classifier& model, const Samples& data, ForgettingCounter& counter) {
  if (counter.size() != data.size())
    throw DimensionMismatch("count_forgetting: counter holds " + std::to_string(counter.size()) +
                            " samples, data has " + std::to_string(data.size()));
  std::vector<std::uint8_t> correct(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) correct[i] = model.predict(data.row(i)) == data.labels[i];
  counter.record(correct);
}

// ---------------------------------------------------------------------------
// FUS: filter the most-forgotten samples out of a fixed-size pool and refill
// at random, with a freshly initialised surrogate every round.

struct FusConfig {
  std::size_t iterations = 10;
  std::size_t epochs_per_iteration = 60;
  double filter_ratio = 0.5;
  std::vector<std::size_t> surrogate_hidden = kDefaultSurrogateHidden;
  TrainConfig train;
  std::uint64_t seed = 0;

  void validate() const {
    require(iterations >= 1, "FusConfig: iterations must be >= 1");
    require(epochs_per_iteration >= 1, "FusConfig: epochs_per_iteration must be >= 1");
    require(filter_ratio >= 0.0 && filter_ratio < 1.0, "FusConfig: filter_ratio must be in [0,1)");
    train.validate();
  }
};

/// Pool members to drop: the floor(ratio * |pool|) largest forgetting
/// counts, ties to the lowest pool position. Returns pool positions.
inline std::vector<std::size_t> fus_drop_positions(std::span<const std::size_t> counts, double ratio) {
  const auto n_drop = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(counts.size())));
  std::vector<std::size_t> pos(counts.size());
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  std::stable_sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  pos.resize(n_drop);
  std::sort(pos.begin(), pos.end());
  return pos;
}

inline SelectionResult fus_select(const LabeledDataset& ds, const TriggerSpec& trigger, LabelMode mode,
                                  const SelectionConstraint& con, const FusConfig& cfg) {
  cfg.validate();
  require_feasible(ds, con);
  trigger.validate(ds.dim());

  SelectionResult out;
  PoisonPlan plan{random_select(ds, con, cfg.seed), con.alpha, mode, trigger};
  const auto dims = layer_dims(ds.dim(), cfg.surrogate_hidden, ds.num_classes());
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    Classifier surrogate = Classifier::init(dims, derive_seed(cfg.seed, 1000 + it));
    TrainConfig tcfg = cfg.train;
    tcfg.seed = derive_seed(cfg.seed, 2000 + it);

    const Samples poisoned = apply_plan(ds, plan);
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (plan.mask[i]) pool.push_back(i);
    Samples pooled;
    pooled.dim = poisoned.dim;
    pooled.num_classes = poisoned.num_classes;
    for (std::size_t i : pool) {
      pooled.labels.push_back(poisoned.labels[i]);
      pooled.features.insert(pooled.features.end(), poisoned.row(i).begin(), poisoned.row(i).end());
    }

    ForgettingCounter counter(pool.size());
    EpochReport rep;
    for (std::size_t e = 0; e < cfg.epochs_per_iteration; ++e) {
      rep = train_epoch(surrogate, poisoned, tcfg, e);
      count_forgetting(surrogate, pooled, counter);
    }
    out.surrogate_epochs += cfg.epochs_per_iteration;

    const auto drop = fus_drop_positions(counter.counts(), cfg.filter_ratio);
    Mask next = plan.mask;
    std::vector<std::uint8_t> just_dropped(ds.size(), 0);
    for (std::size_t p : drop) {
      next[pool[p]] = 0;
      just_dropped[pool[p]] = 1;
    }
    Rng rng(derive_seed(cfg.seed, 3000 + it));
    std::vector<std::size_t> candidates;
    for (std::size_t k = 0; k < ds.num_classes(); ++k) {
      const std::size_t have = block_sum(ds, next, k);
      if (have >= con.quotas[k]) continue;
      const std::size_t need = con.quotas[k] - have;
      candidates.clear();
      for (std::size_t i = ds.class_begin(k); i < ds.class_end(k); ++i)
        if (!next[i] && !just_dropped[i]) candidates.push_back(i);
      if (candidates.size() < need)
        throw RefillExhausted("FUS refill: class " + std::to_string(k) + " needs " + std::to_string(need) +
                              " fresh samples, only " + std::to_string(candidates.size()) + " available");
      for (std::size_t t = 0; t < need; ++t) {
        const std::size_t j = t + rng.below(candidates.size() - t);
        std::swap(candidates[t], candidates[j]);
        next[candidates[t]] = 1;
      }
    }

    IterationTrace tr;
    tr.iteration = it;
    tr.surrogate_loss = rep.mean_loss;
    tr.overlap = mask_overlap(plan.mask, next, con.budget);
    tr.dropped = drop.size();
    const auto& c = counter.counts();
    tr.mean_forgetting =
        c.empty() ? 0.0 : static_cast<double>(std::accumulate(c.begin(), c.end(), std::size_t{0})) / c.size();
    out.trace.push_back(tr);
    plan.mask = std::move(next);
  }
  out.mask = std::move(plan.mask);
  return out;
}

}  // namespace lps
