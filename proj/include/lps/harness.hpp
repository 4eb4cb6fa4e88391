#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "lps/config.hpp"
#include "lps/dataset.hpp"
#include "lps/model.hpp"
#include "lps/poisoning.hpp"
#include "lps/selection.hpp"
#include "lps/trigger.hpp"

namespace lps {

enum class Strategy { none, random, fus, lps };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::none: return "none";
    case Strategy::random: return "random";
    case Strategy::fus: return "fus";
    case Strategy::lps: return "lps";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view s) {
  if (s == "none" || s == "clean") return Strategy::none;
  if (s == "random") return Strategy::random;
  if (s == "fus") return Strategy::fus;
  if (s == "lps") return Strategy::lps;
  throw PreconditionError("unknown strategy '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Metrics

/// Fraction of triggered test inputs classified as their poisoned label.
/// all_to_one and clean_label skip samples whose true label is the target.
inline double evaluate_asr(const Classifier& model, const LabeledDataset& test, const TriggerSpec& trigger,
                           LabelMode mode) {
  trigger.validate(test.dim());
  std::size_t hits = 0, total = 0;
  std::vector<double> fused(test.dim());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const int y = test.label(i);
    if (mode.kind != LabelModeKind::all_to_all && y == mode.target) continue;
    fuse_into(test.features(i), trigger, fused);
    const int want = mode.kind == LabelModeKind::all_to_all ? map_label(y, test.num_classes(), mode) : mode.target;
    hits += model.predict(fused) == want;
    ++total;
  }
  if (total == 0) throw PreconditionError("evaluate_asr: no test samples outside the target class");
  return static_cast<double>(hits) / static_cast<double>(total);
}

inline double clean_accuracy(const Classifier& model, const LabeledDataset& test) {
  return accuracy(model, test.samples());
}

// ---------------------------------------------------------------------------
// One attack

struct AttackResult {
  std::string strategy;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  double clean_accuracy = 0.0;
  double attack_success_rate = 0.0;
  double select_seconds = 0.0;
  double train_seconds = 0.0;
  std::size_t surrogate_epochs = 0;
  std::string fingerprint;
  std::vector<IterationTrace> trace;
};

/// Everything that determines a run's outcome, in canonical form. Output
/// paths and the sweep grid are excluded.
inline json run_identity(const ExperimentConfig& cfg, Strategy strategy, double alpha, std::uint64_t seed) {
  json id = cfg;
  id.erase("sweep");
  id["strategy"] = std::string(to_string(strategy));
  id["alpha"] = alpha;
  id["seed"] = seed;
  return id;
}

inline std::string fingerprint(const ExperimentConfig& cfg, Strategy strategy, double alpha, std::uint64_t seed) {
  return hex64(fnv1a64(run_identity(cfg, strategy, alpha, seed).dump()));
}

/// Dispatches a selection strategy. `none` yields the empty mask.
inline SelectionResult run_selection(Strategy strategy, const LabeledDataset& train, const TriggerSpec& trigger,
                                     LabelMode mode, const SelectionConstraint& con, const ExperimentConfig& cfg,
                                     std::uint64_t seed) {
  switch (strategy) {
    case Strategy::none: return {Mask(train.size(), 0), 0, {}};
    case Strategy::random: return {random_select(train, con, seed), 0, {}};
    case Strategy::lps: {
      LpsConfig c = cfg.lps;
      c.seed = seed;
      return lps_select(train, trigger, mode, con, c);
    }
    case Strategy::fus: {
      FusConfig c = cfg.fus;
      c.seed = seed;
      return fus_select(train, trigger, mode, con, c);
    }
  }
  throw PreconditionError("unknown strategy");
}

/// Trains a fresh target model on `data`. Architecture from cfg.target_hidden.
inline Classifier train_target(const Samples& data, const ExperimentConfig& cfg, std::uint64_t seed) {
  Classifier model =
      Classifier::init(layer_dims(data.dim, cfg.target_hidden, data.num_classes), derive_seed(seed, 12));
  TrainConfig tc = cfg.target_train;
  tc.seed = derive_seed(seed, 13);
  tc.batch_size = std::min(tc.batch_size, data.size());
  train(model, data, tc);
  return model;
}

/// Select -> poison -> train target -> evaluate ACC and ASR.
inline AttackResult run_attack(const LabeledDataset& train, const LabeledDataset& test, Strategy strategy,
                               const ExperimentConfig& cfg, const TriggerSpec& trigger, double alpha,
                               std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  AttackResult r;
  r.strategy = std::string(to_string(strategy));
  r.alpha = alpha;
  r.seed = seed;
  r.fingerprint = fingerprint(cfg, strategy, alpha, seed);

  const auto t0 = clock::now();
  PoisonPlan plan;
  plan.mode = cfg.mode;
  plan.trigger = trigger;
  if (strategy == Strategy::none) {
    plan.mask.assign(train.size(), 0);
  } else {
    const auto con = build_constraint(train, alpha, cfg.mode);
    auto sel = run_selection(strategy, train, trigger, cfg.mode, con, cfg, derive_seed(seed, 11));
    plan.mask = std::move(sel.mask);
    plan.alpha = alpha;
    r.surrogate_epochs = sel.surrogate_epochs;
    r.trace = std::move(sel.trace);
  }
  const auto t1 = clock::now();
  const Samples poisoned = apply_plan(train, plan);
  const Classifier target = train_target(poisoned, cfg, seed);
  const auto t2 = clock::now();

  r.clean_accuracy = clean_accuracy(target, test);
  r.attack_success_rate = evaluate_asr(target, test, trigger, cfg.mode);
  r.select_seconds = std::chrono::duration<double>(t1 - t0).count();
  r.train_seconds = std::chrono::duration<double>(t2 - t1).count();
  return r;
}

// ---------------------------------------------------------------------------
// CSV / JSON reports

inline constexpr const char* kCsvHeader = "strategy,alpha,seed,acc,asr,select_s,train_s,fingerprint";

inline std::string csv_row(const AttackResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%.17g,%llu,%.10f,%.10f,%.6f,%.6f,%s", r.strategy.c_str(), r.alpha,
                static_cast<unsigned long long>(r.seed), r.clean_accuracy, r.attack_success_rate, r.select_seconds,
                r.train_seconds, r.fingerprint.c_str());
  return buf;
}

/// Parses rows written by csv_row (header skipped).
inline std::vector<AttackResult> read_results_csv(const std::filesystem::path& path) {
  std::vector<AttackResult> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == kCsvHeader) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw Error(path.string() + ": malformed results row '" + line + "'");
    AttackResult r;
    r.strategy = cells[0];
    r.alpha = std::stod(cells[1]);
    r.seed = std::stoull(cells[2]);
    r.clean_accuracy = std::stod(cells[3]);
    r.attack_success_rate = std::stod(cells[4]);
    r.select_seconds = std::stod(cells[5]);
    r.train_seconds = std::stod(cells[6]);
    r.fingerprint = cells[7];
    out.push_back(std::move(r));
  }
  return out;
}

inline json to_json_result(const AttackResult& r) {
  return json{{"strategy", r.strategy},
              {"alpha", r.alpha},
              {"seed", r.seed},
              {"acc", r.clean_accuracy},
              {"asr", r.attack_success_rate},
              {"select_s", r.select_seconds},
              {"train_s", r.train_seconds},
              {"surrogate_epochs", r.surrogate_epochs},
              {"fingerprint", r.fingerprint}};
}

inline void append_trace(std::ostream& out, const AttackResult& r) {
  for (const auto& t : r.trace) {
    out << json{{"fingerprint", r.fingerprint},
                {"strategy", r.strategy},
                {"alpha", r.alpha},
                {"seed", r.seed},
                {"iteration", t.iteration},
                {"objective", t.objective},
                {"surrogate_loss", t.surrogate_loss},
                {"overlap", t.overlap},
                {"mean_forgetting", t.mean_forgetting},
                {"dropped", t.dropped}}
               .dump()
        << '\n';
  }
}

/// Schedule and architecture facts recorded at the top of every report.
inline json report_header(const ExperimentConfig& cfg, std::size_t input_dim, std::size_t classes) {
  return json{
      {"target_epochs", cfg.target_train.epochs},
      {"target_lr_decay_epochs", cfg.target_train.lr_decay_epochs},
      {"schedule_note", "desk-scale schedule: target trained " + std::to_string(cfg.target_train.epochs) +
                            " epochs (reference setting: 100 epochs, decay at 35 and 55)"},
      {"surrogate_dims", layer_dims(input_dim, cfg.lps.surrogate_hidden, classes)},
      {"fus_surrogate_dims", layer_dims(input_dim, cfg.fus.surrogate_hidden, classes)},
      {"target_dims", layer_dims(input_dim, cfg.target_hidden, classes)},
      {"momentum", 0.0},
      {"init", "he-uniform weights, zero biases"},
      {"augmentation", "none"},
      {"normalization", "features scaled to [0,1]"},
      {"seed_count", cfg.sweep.seeds.size()}};
}

struct SweepCell {
  Strategy strategy;
  double alpha;
  std::uint64_t seed;
};

struct SweepOutcome {
  std::vector<AttackResult> results;  // grid order; includes resumed rows
  std::size_t computed = 0;
  std::size_t skipped = 0;
  std::vector<std::string> errors;
};

inline std::vector<SweepCell> sweep_grid(const SweepConfig& s) {
  require(!s.strategies.empty() && !s.alphas.empty() && !s.seeds.empty(), "sweep: empty grid");
  std::vector<SweepCell> cells;
  for (const auto& name : s.strategies)
    for (double a : s.alphas)
      for (std::uint64_t seed : s.seeds) cells.push_back({parse_strategy(name), a, seed});
  return cells;
}

/// Runs strategies x alphas x seeds. Cells whose fingerprint already appears
/// in the CSV are not recomputed. Each finished cell is appended to the CSV
/// and trace immediately, in grid order, and the JSON report is rewritten.
/// A failing cell is recorded in the report and the sweep carries on.
inline SweepOutcome sweep(const LabeledDataset& train, const LabeledDataset& test, const ExperimentConfig& cfg) {
  const auto cells = sweep_grid(cfg.sweep);
  const TriggerSpec trigger = build_trigger(cfg.trigger, train.dim());

  std::map<std::string, AttackResult> done;
  const bool csv_exists = std::filesystem::exists(cfg.sweep.csv);
  for (auto& r : read_results_csv(cfg.sweep.csv)) done.emplace(r.fingerprint, std::move(r));

  std::ofstream csv(cfg.sweep.csv, std::ios::app);
  if (!csv) throw Error("cannot write " + cfg.sweep.csv);
  if (!csv_exists || std::filesystem::file_size(cfg.sweep.csv) == 0) csv << kCsvHeader << '\n' << std::flush;
  std::ofstream trace;
  if (!cfg.sweep.trace.empty()) trace.open(cfg.sweep.trace, std::ios::app);

  SweepOutcome outcome;
  std::vector<std::optional<AttackResult>> slots(cells.size());
  std::vector<std::string> slot_errors(cells.size());
  std::vector<bool> finished(cells.size(), false);
  std::vector<std::string> prints(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) {
    prints[c] = fingerprint(cfg, cells[c].strategy, cells[c].alpha, cells[c].seed);
    if (auto it = done.find(prints[c]); it != done.end()) {
      slots[c] = it->second;
      finished[c] = true;
      ++outcome.skipped;
    }
  }

  std::mutex mu;
  std::size_t flushed = 0;
  json report_rows = json::array();
  json report_errors = json::array();
  const json header = report_header(cfg, train.dim(), train.num_classes());

  // Writes the finished prefix of the grid. Caller holds mu.
  auto flush = [&] {
    bool wrote = false;
    while (flushed < cells.size() && finished[flushed]) {
      const std::size_t c = flushed++;
      if (slots[c]) {
        report_rows.push_back(to_json_result(*slots[c]));
        if (!done.count(prints[c])) {
          csv << csv_row(*slots[c]) << '\n';
          if (trace.is_open()) append_trace(trace, *slots[c]);
        }
      } else {
        report_errors.push_back(json{{"strategy", std::string(to_string(cells[c].strategy))},
                                     {"alpha", cells[c].alpha},
                                     {"seed", cells[c].seed},
                                     {"error", slot_errors[c]}});
      }
      wrote = true;
    }
    if (!wrote) return;
    csv.flush();
    if (trace.is_open()) trace.flush();
    if (!cfg.sweep.report.empty()) {
      std::ofstream rep(cfg.sweep.report);
      rep << json{{"header", header}, {"config", json(cfg)}, {"results", report_rows}, {"errors", report_errors}}
                 .dump(2)
          << '\n';
    }
  };

  {
    std::lock_guard lock(mu);
    flush();
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= cells.size()) return;
      {
        std::lock_guard lock(mu);
        if (finished[c]) continue;
      }
      std::optional<AttackResult> r;
      std::string err;
      try {
        r = run_attack(train, test, cells[c].strategy, cfg, trigger, cells[c].alpha, cells[c].seed);
      } catch (const std::exception& e) {
        err = e.what();
      }
      std::lock_guard lock(mu);
      slots[c] = std::move(r);
      slot_errors[c] = std::move(err);
      finished[c] = true;
      if (slots[c]) ++outcome.computed;
      flush();
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, cfg.sweep.workers);
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (slots[c]) outcome.results.push_back(std::move(*slots[c]));
    else outcome.errors.push_back(slot_errors[c]);
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Selection cost

struct StrategyCost {
  std::size_t runs = 0;
  double mean_select_seconds = 0.0;
  double mean_surrogate_epochs = 0.0;
};

struct CostSummary {
  std::map<std::string, StrategyCost> per_strategy;
  bool has_lps_and_fus = false;
  double lps_over_fus_seconds = 0.0;
  double lps_over_fus_epochs = 0.0;
  bool lps_cheaper = false;  // meaningful only when has_lps_and_fus
};

/// Aggregates selection-phase wall clock and surrogate epochs per strategy.
inline CostSummary phase_timer_report(const std::vector<AttackResult>& results) {
  require(!results.empty(), "phase_timer_report: no results");
  CostSummary s;
  for (const auto& r : results) {
    auto& c = s.per_strategy[r.strategy];
    ++c.runs;
    c.mean_select_seconds += r.select_seconds;
    c.mean_surrogate_epochs += static_cast<double>(r.surrogate_epochs);
  }
  for (auto& [_, c] : s.per_strategy) {
    c.mean_select_seconds /= static_cast<double>(c.runs);
    c.mean_surrogate_epochs /= static_cast<double>(c.runs);
  }
  const auto lps = s.per_strategy.find("lps");
  const auto fus = s.per_strategy.find("fus");
  if (lps != s.per_strategy.end() && fus != s.per_strategy.end()) {
    s.has_lps_and_fus = true;
    s.lps_over_fus_seconds = lps->second.mean_select_seconds / fus->second.mean_select_seconds;
    s.lps_over_fus_epochs = lps->second.mean_surrogate_epochs / fus->second.mean_surrogate_epochs;
    s.lps_cheaper = lps->second.mean_select_seconds < fus->second.mean_select_seconds;
  }
  return s;
}

}  // namespace lps
