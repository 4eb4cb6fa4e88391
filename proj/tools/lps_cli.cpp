// Command-line front end: select, poison, train, evaluate, sweep, verify.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lps/lps.hpp"
#include "lps/oracle.hpp"

namespace {

using lps::json;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<double> alpha;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::optional<std::string> mode;
  std::optional<int> target;
  std::optional<std::string> trigger;
  std::optional<double> blend_alpha;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "experiment config (JSON)");
  app->add_option("--set", c.sets, "override a config key, e.g. --set lps.iterations=5");
  app->add_option("--mode", c.mode, "label mode: all_to_one | all_to_all | clean_label (mode.kind)");
  app->add_option("--target", c.target, "target class y_t (mode.target)");
  app->add_option("--trigger", c.trigger, "trigger kind: blend | patch | signal (trigger.kind)");
  app->add_option("--blend-alpha", c.blend_alpha, "blend weight (trigger.blend_alpha)");
}

lps::ExperimentConfig resolve(const Common& c) {
  json j = c.config.empty() ? json(lps::ExperimentConfig{}) : json(lps::load_config(c.config));
  for (const auto& s : c.sets) lps::apply_override(j, s);
  if (c.mode) j["mode"]["kind"] = *c.mode;
  if (c.target) j["mode"]["target"] = *c.target;
  if (c.trigger) j["trigger"]["kind"] = *c.trigger;
  if (c.blend_alpha) j["trigger"]["blend_alpha"] = *c.blend_alpha;
  try {
    return j.get<lps::ExperimentConfig>();
  } catch (const json::exception& e) {
    throw lps::ConfigError(e.what());
  }
}

void write_trace(const std::string& path, const lps::AttackResult& r) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::app);
  lps::append_trace(out, r);
}

int cmd_select(const Common& c, double alpha, std::uint64_t seed, const std::string& strategy,
               const std::string& out, const std::string& trace) {
  const auto cfg = resolve(c);
  const auto [train, test] = lps::load_dataset(cfg.dataset);
  const auto trig = lps::build_trigger(cfg.trigger, train.dim());
  const auto con = lps::build_constraint(train, alpha, cfg.mode);
  const auto strat = lps::parse_strategy(strategy);
  auto sel = lps::run_selection(strat, train, trig, cfg.mode, con, cfg, lps::derive_seed(seed, 11));
  lps::write_mask_file(out, alpha, cfg.mode, sel.mask);
  lps::AttackResult r;
  r.strategy = std::string(lps::to_string(strat));
  r.alpha = alpha;
  r.seed = seed;
  r.fingerprint = lps::fingerprint(cfg, strat, alpha, seed);
  r.trace = sel.trace;
  write_trace(trace, r);
  std::cout << json{{"mask", out}, {"budget", con.budget}, {"quotas", con.quotas},
                    {"alpha_tilde", con.alpha_tilde}, {"surrogate_epochs", sel.surrogate_epochs}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_poison(const Common& c, const std::string& mask_path, const std::string& out, const std::string& test_out) {
  const auto cfg = resolve(c);
  const auto [train, test] = lps::load_dataset(cfg.dataset);
  const auto mf = lps::read_mask_file(mask_path);
  lps::PoisonPlan plan{mf.to_mask(train.size()), mf.alpha, mf.mode, lps::build_trigger(cfg.trigger, train.dim())};
  lps::write_csv(lps::apply_plan(train, plan), out);
  if (!test_out.empty()) lps::write_csv(test.samples(), test_out);
  std::cout << json{{"poisoned", out}, {"selected", mf.indices.size()}, {"size", train.size()}}.dump() << '\n';
  return 0;
}

int cmd_train(const Common& c, const std::string& data, const std::string& out, std::uint64_t seed) {
  const auto cfg = resolve(c);
  lps::Samples samples;
  if (data.empty()) {
    samples = lps::load_dataset(cfg.dataset).first.samples();
  } else {
    samples = lps::read_csv(data);
  }
  const auto model = lps::train_target(samples, cfg, seed);
  lps::save_checkpoint(model, out);
  std::cout << json{{"checkpoint", out}, {"dims", model.dims()}, {"train_acc", lps::accuracy(model, samples)}}.dump()
            << '\n';
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& model_path, const std::string& test_csv) {
  const auto cfg = resolve(c);
  const auto model = lps::load_checkpoint(model_path);
  const lps::LabeledDataset test = test_csv.empty()
                                       ? lps::load_dataset(cfg.dataset).second
                                       : lps::LabeledDataset::from_samples(lps::read_csv(test_csv, model.num_classes()));
  const auto trig = lps::build_trigger(cfg.trigger, test.dim());
  std::cout << json{{"acc", lps::clean_accuracy(model, test)},
                    {"asr", lps::evaluate_asr(model, test, trig, cfg.mode)},
                    {"mode", cfg.mode}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_sweep(const Common& c) {
  const auto cfg = resolve(c);
  const auto [train, test] = lps::load_dataset(cfg.dataset);
  const auto outcome = lps::sweep(train, test, cfg);
  json summary{{"computed", outcome.computed}, {"skipped", outcome.skipped}, {"errors", outcome.errors}};
  if (!outcome.results.empty()) {
    const auto cost = lps::phase_timer_report(outcome.results);
    json per = json::object();
    for (const auto& [name, sc] : cost.per_strategy)
      per[name] = {{"runs", sc.runs}, {"mean_select_s", sc.mean_select_seconds},
                   {"mean_surrogate_epochs", sc.mean_surrogate_epochs}};
    summary["cost"] = per;
    if (cost.has_lps_and_fus) {
      summary["lps_over_fus_seconds"] = cost.lps_over_fus_seconds;
      summary["lps_over_fus_epochs"] = cost.lps_over_fus_epochs;
      summary["lps_cheaper"] = cost.lps_cheaper;
    }
  }
  std::cout << summary.dump(2) << '\n';
  return outcome.errors.empty() ? 0 : 3;
}

// Brute-force and finite-difference cross-checks on random small instances.
int cmd_verify(std::size_t instances, std::uint64_t seed) {
  lps::Rng rng(seed);
  std::size_t inner_fail = 0, grad_fail = 0;
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t K = 2 + rng.below(3);
    const std::size_t n = K + rng.below(13 - K);
    lps::Samples raw;
    raw.dim = 1;
    raw.num_classes = K;
    for (std::size_t i = 0; i < n; ++i) {
      raw.labels.push_back(static_cast<int>(i < K ? i : rng.below(K)));
      raw.features.push_back(0.5);
    }
    const auto ds = lps::LabeledDataset::from_samples(raw);
    lps::SelectionConstraint con;
    con.eligible.assign(K, true);
    for (std::size_t k = 0; k < K; ++k) con.quotas.push_back(rng.below(ds.class_count(k) + 1));
    std::vector<double> scores(n);
    for (double& s : scores) s = rng.uniform(-3.0, 3.0);
    const auto mask = lps::solve_inner(scores, ds, con);
    if (lps::inner_objective(scores, mask) != lps::oracle::brute_force_inner(scores, ds, con)) ++inner_fail;
  }
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t d = 2 + rng.below(4), h = 2 + rng.below(5), K = 2 + rng.below(3);
    const auto model = lps::Classifier::init({d, h, K}, rng.next());
    lps::Samples batch;
    batch.dim = d;
    batch.num_classes = K;
    do {
      batch.features.clear();
      batch.labels.clear();
      for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < d; ++j) batch.features.push_back(rng.uniform());
        batch.labels.push_back(static_cast<int>(rng.below(K)));
      }
    } while (lps::oracle::min_hidden_margin(model, batch) < 1e-3);
    std::vector<double> grad(model.num_params());
    lps::batch_gradient(model, batch, {}, grad);
    const auto fd = lps::oracle::numerical_gradient(model, batch);
    for (std::size_t k = 0; k < grad.size(); ++k)
      if (lps::oracle::relative_error(grad[k], fd[k]) > 1e-4) {
        ++grad_fail;
        break;
      }
  }
  std::printf("%s inner-solver optimality: %zu/%zu instances match brute force\n", inner_fail ? "FAIL" : "PASS",
              instances - inner_fail, instances);
  std::printf("%s gradient check: %zu/%zu models within 1e-4 of finite differences\n", grad_fail ? "FAIL" : "PASS",
              instances - grad_fail, instances);
  return inner_fail || grad_fail ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor poisoning-sample selection toolkit"};
  app.require_subcommand(1);

  Common common;
  double alpha = 0.0;
  std::uint64_t seed = 1;
  std::string strategy = "lps", out, trace, mask, test_out, data, model, test_csv;
  std::size_t instances = 200;

  auto* select = app.add_subcommand("select", "run a selection strategy and write a mask file");
  add_common(select, common);
  select->add_option("--alpha", alpha, "poisoning ratio")->required();
  select->add_option("--seed", seed, "run seed");
  select->add_option("--strategy", strategy, "random | fus | lps");
  select->add_option("-o,--out", out, "mask file")->required();
  select->add_option("--trace", trace, "append per-iteration diagnostics (JSON lines)");

  auto* poison = app.add_subcommand("poison", "apply a mask file and write the poisoned training set as CSV");
  add_common(poison, common);
  poison->add_option("--mask", mask, "mask file from `select`")->required();
  poison->add_option("-o,--out", out, "poisoned training CSV")->required();
  poison->add_option("--test-out", test_out, "also write the clean test split as CSV");

  auto* train = app.add_subcommand("train", "train a target model and write a checkpoint");
  add_common(train, common);
  train->add_option("--data", data, "training CSV (default: clean training split)");
  train->add_option("--seed", seed, "run seed");
  train->add_option("-o,--out", out, "checkpoint path")->required();

  auto* evaluate = app.add_subcommand("evaluate", "clean accuracy and attack success rate of a checkpoint");
  add_common(evaluate, common);
  evaluate->add_option("--model", model, "checkpoint")->required();
  evaluate->add_option("--test", test_csv, "test CSV (default: test split of the configured dataset)");

  auto* sweep = app.add_subcommand("sweep", "strategies x alphas x seeds, resumable");
  add_common(sweep, common);

  auto* verify = app.add_subcommand("verify", "brute-force and finite-difference self checks");
  verify->add_option("--instances", instances, "random instances per check");
  verify->add_option("--seed", seed, "instance generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*select) return cmd_select(common, alpha, seed, strategy, out, trace);
    if (*poison) return cmd_poison(common, mask, out, test_out);
    if (*train) return cmd_train(common, data, out, seed);
    if (*evaluate) return cmd_evaluate(common, model, test_csv);
    if (*sweep) return cmd_sweep(common);
    if (*verify) return cmd_verify(instances, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
