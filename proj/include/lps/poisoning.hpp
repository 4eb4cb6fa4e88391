#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lps/common.hpp"
#include "lps/dataset.hpp"
#include "lps/model.hpp"
#include "lps/trigger.hpp"

namespace lps {

class ConstraintError : public Error {
 public:
  using Error::Error;
};
/// round(alpha * |D|) exceeds the number of samples that may be poisoned.
class InfeasibleBudget : public ConstraintError {
 public:
  using ConstraintError::ConstraintError;
};
/// alpha * |D| rounds to zero samples.
class ZeroBudget : public ConstraintError {
 public:
  using ConstraintError::ConstraintError;
};
/// A mask does not satisfy the per-class quotas or eligibility rules.
class MaskViolation : public ConstraintError {
 public:
  using ConstraintError::ConstraintError;
};

using Mask = std::vector<std::uint8_t>;

/// Per-class selection quotas.
///
/// Row k of the constraint matrix sums the mask over class block k, so the
/// matrix itself is never stored: block sums are read off class_offsets.
struct SelectionConstraint {
  double alpha = 0.0;
  LabelMode mode;
  std::size_t budget = 0;          // round(alpha * |D|)
  double alpha_tilde = 0.0;        // budget / (eligible pool size)
  std::vector<bool> eligible;      // class may be poisoned
  std::vector<std::size_t> quotas; // q_k

  std::size_t num_classes() const noexcept { return quotas.size(); }
};

inline bool class_eligible(std::size_t k, LabelMode mode) {
  switch (mode.kind) {
    case LabelModeKind::all_to_one: return static_cast<int>(k) != mode.target;
    case LabelModeKind::clean_label: return static_cast<int>(k) == mode.target;
    case LabelModeKind::all_to_all: return true;
  }
  return false;
}

inline std::size_t poison_budget(double alpha, std::size_t n) {
  return static_cast<std::size_t>(std::llround(alpha * static_cast<double>(n)));
}

/// Quotas: floor(alpha_tilde * n_k) for each eligible class, then the
/// remaining budget handed out one sample at a time in ascending class order.
inline SelectionConstraint build_constraint(const LabeledDataset& ds, double alpha, LabelMode mode) {
  require(alpha > 0.0 && alpha <= 1.0 && std::isfinite(alpha), "build_constraint: alpha must be in (0,1]");
  mode.validate(ds.num_classes());
  SelectionConstraint con;
  con.alpha = alpha;
  con.mode = mode;
  con.budget = poison_budget(alpha, ds.size());
  if (con.budget == 0)
    throw ZeroBudget("alpha=" + std::to_string(alpha) + " selects no samples out of " +
                     std::to_string(ds.size()));
  const std::size_t K = ds.num_classes();
  con.eligible.resize(K);
  con.quotas.assign(K, 0);
  std::size_t pool = 0;
  for (std::size_t k = 0; k < K; ++k) {
    con.eligible[k] = class_eligible(k, mode);
    if (con.eligible[k]) pool += ds.class_count(k);
  }
  if (con.budget > pool)
    throw InfeasibleBudget("budget " + std::to_string(con.budget) + " exceeds the " +
                           std::to_string(pool) + " eligible samples");
  con.alpha_tilde = static_cast<double>(con.budget) / static_cast<double>(pool);

  std::size_t assigned = 0;
  for (std::size_t k = 0; k < K; ++k) {
    if (!con.eligible[k]) continue;
    con.quotas[k] = con.budget * ds.class_count(k) / pool;
    assigned += con.quotas[k];
  }
  for (std::size_t k = 0; k < K && assigned < con.budget; ++k) {
    if (con.eligible[k] && con.quotas[k] < ds.class_count(k)) {
      ++con.quotas[k];
      ++assigned;
    }
  }
  return con;
}

/// Sum of the mask over class block k.
inline std::size_t block_sum(const LabeledDataset& ds, std::span<const std::uint8_t> mask, std::size_t k) {
  std::size_t s = 0;
  for (std::size_t i = ds.class_begin(k); i < ds.class_end(k); ++i) s += mask[i];
  return s;
}

/// Empty string when `mask` meets the constraint, otherwise a description
/// of the first violation.
inline std::string constraint_violation(const LabeledDataset& ds, const SelectionConstraint& con,
                                        std::span<const std::uint8_t> mask) {
  if (mask.size() != ds.size())
    return "mask length " + std::to_string(mask.size()) + " != dataset size " + std::to_string(ds.size());
  if (con.num_classes() != ds.num_classes()) return "constraint class count does not match dataset";
  for (std::uint8_t v : mask)
    if (v > 1) return "mask is not binary";
  for (std::size_t k = 0; k < ds.num_classes(); ++k) {
    const std::size_t s = block_sum(ds, mask, k);
    if (s != con.quotas[k])
      return "class " + std::to_string(k) + " selects " + std::to_string(s) + " samples, quota is " +
             std::to_string(con.quotas[k]);
  }
  return {};
}

inline bool satisfies(const LabeledDataset& ds, const SelectionConstraint& con,
                      std::span<const std::uint8_t> mask) {
  return constraint_violation(ds, con, mask).empty();
}

inline void check_mask(const LabeledDataset& ds, const SelectionConstraint& con,
                       std::span<const std::uint8_t> mask) {
  if (auto why = constraint_violation(ds, con, mask); !why.empty()) throw MaskViolation(why);
}

/// Mask m together with what it means: ratio, label regime and trigger.
/// alpha == 0 denotes the empty plan (all-zero mask).
struct PoisonPlan {
  Mask mask;
  double alpha = 0.0;
  LabelMode mode;
  TriggerSpec trigger;
};

/// Validates a plan against the dataset it will be applied to.
inline void check_plan(const LabeledDataset& ds, const PoisonPlan& plan) {
  if (plan.mask.size() != ds.size())
    throw MaskViolation("mask length " + std::to_string(plan.mask.size()) + " != dataset size " +
                        std::to_string(ds.size()));
  if (plan.alpha == 0.0) {
    for (std::uint8_t v : plan.mask)
      if (v != 0) throw MaskViolation("plan with alpha=0 must have an all-zero mask");
    return;
  }
  check_mask(ds, build_constraint(ds, plan.alpha, plan.mode), plan.mask);
}

/// Materialises the poisoned dataset. Selected samples are replaced in
/// place by (fused input, mapped label); the result is index-aligned with
/// `ds` and therefore no longer class-sorted.
inline Samples apply_plan(const LabeledDataset& ds, const PoisonPlan& plan) {
  check_plan(ds, plan);
  Samples out = ds.samples();
  bool any = false;
  for (std::uint8_t v : plan.mask) any |= v != 0;
  if (!any) return out;
  plan.trigger.validate(ds.dim());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!plan.mask[i]) continue;
    fuse_into(ds.features(i), plan.trigger, out.row(i));
    out.labels[i] = map_label(ds.label(i), ds.num_classes(), plan.mode);
  }
  return out;
}

/// Mask-weighted loss evaluated directly on D without materialising D~:
/// (1/|D|) sum_i (1 - m_i) l(f(x_i), y_i) + m_i l(f(g(x_i)), y~_i).
inline double masked_loss(const Classifier& model, const LabeledDataset& ds, const PoisonPlan& plan) {
  if (model.input_dim() != ds.dim())
    throw DimensionMismatch("masked_loss: model input " + std::to_string(model.input_dim()) +
                            " vs data dim " + std::to_string(ds.dim()));
  require(!ds.empty(), "masked_loss: empty dataset");
  check_plan(ds, plan);
  std::vector<double> fused(ds.dim());
  double sum = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (plan.mask[i]) {
      fuse_into(ds.features(i), plan.trigger, fused);
      sum += model.loss(fused, map_label(ds.label(i), ds.num_classes(), plan.mode));
    } else {
      sum += model.loss(ds.features(i), ds.label(i));
    }
  }
  const double l = sum / static_cast<double>(ds.size());
  if (!std::isfinite(l)) throw NumericError("masked_loss is not finite");
  return l;
}

/// One SGD epoch on D (no plan) or on the plan's poisoned dataset.
inline EpochReport train_epoch(Classifier& model, const LabeledDataset& ds, const PoisonPlan* plan,
                               const TrainConfig& cfg, std::size_t epoch_index) {
  if (!plan) return train_epoch(model, ds.samples(), cfg, epoch_index);
  return train_epoch(model, apply_plan(ds, *plan), cfg, epoch_index);
}

// ---------------------------------------------------------------------------
// Mask file: header `alpha=<value> target=<y_t> mode=<mode>` followed by one
// selected class-sorted index per line, ascending.

struct MaskFile {
  double alpha = 0.0;
  LabelMode mode;
  std::vector<std::size_t> indices;

  Mask to_mask(std::size_t n) const {
    Mask m(n, 0);
    for (std::size_t i : indices) {
      if (i >= n) throw MaskViolation("mask index " + std::to_string(i) + " out of range");
      m[i] = 1;
    }
    return m;
  }

  bool operator==(const MaskFile&) const = default;
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_mask_file(const std::filesystem::path& path, double alpha, LabelMode mode,
                            std::span<const std::uint8_t> mask) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "alpha=" << format_double(alpha) << " target=" << mode.target << " mode=" << to_string(mode.kind)
      << '\n';
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out << i << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

inline MaskFile read_mask_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw Error(path.string() + ": missing header");
  MaskFile mf;
  std::istringstream hs(header);
  std::string tok;
  bool seen_alpha = false, seen_target = false, seen_mode = false;
  while (hs >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw Error(path.string() + ": malformed header token '" + tok + "'");
    const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "alpha") {
      mf.alpha = std::stod(val);
      seen_alpha = true;
    } else if (key == "target") {
      mf.mode.target = std::stoi(val);
      seen_target = true;
    } else if (key == "mode") {
      mf.mode.kind = parse_label_mode(val);
      seen_mode = true;
    } else {
      throw Error(path.string() + ": unknown header key '" + key + "'");
    }
  }
  if (!(seen_alpha && seen_target && seen_mode))
    throw Error(path.string() + ": header needs alpha, target and mode");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    mf.indices.push_back(static_cast<std::size_t>(std::stoull(line)));
  }
  return mf;
}

}  // namespace lps
