// sba: command-line runner for training experiments.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sba/config.hpp"
#include "sba/error.hpp"
#include "sba/harness.hpp"
#include "sba/inference.hpp"
#include "sba/network.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

int cmd_run(const std::string& config_path, std::optional<std::size_t> workers,
            const std::string& output, bool quiet) {
  sba::ExperimentSpec spec = sba::load_experiment(config_path);
  if (workers) spec.workers = *workers;
  if (!output.empty()) spec.output_dir = output;
  const auto result = sba::run_experiment(spec, nullptr, quiet ? nullptr : &std::cerr);
  std::size_t failed = 0;
  for (const auto& run : result.runs) {
    if (!run.ok) ++failed;
    std::cout << run.plan.run_id << ' ' << (run.ok ? "ok" : "failed");
    if (run.final_accuracy) std::cout << " final_test_accuracy=" << *run.final_accuracy;
    if (run.final_accuracy_vote) std::cout << " final_test_accuracy_vote=" << *run.final_accuracy_vote;
    std::cout << '\n';
  }
  std::cout << "results in " << result.output_dir.string() << '\n';
  if (failed) {
    std::cerr << failed << " of " << result.runs.size() << " runs failed; see summary.csv\n";
    return kRuntimeError;
  }
  return kOk;
}

sba::Dataset load_eval_dataset(const std::string& path, const std::string& labels,
                               int label_column) {
  if (!labels.empty()) return sba::load_idx(path, labels);
  return sba::load_delimited(path, label_column);
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset, const std::string& labels,
             int label_column, const std::string& mode_name, const std::string& config_path,
             std::uint64_t seed, std::size_t split) {
  const sba::EvalMode mode = sba::parse_eval_mode(mode_name);
  sba::RunConfig cfg;
  if (!config_path.empty()) {
    const sba::ExperimentSpec spec = sba::load_experiment(config_path);
    cfg = sba::run_config_from(spec.run_template, seed);
  } else {
    cfg.seeds = sba::Seeds::derive(seed);
  }
  if (split != 0) cfg.fixed_split = split;
  const sba::LayerStack net = sba::load_checkpoint(checkpoint);
  const sba::Dataset ds = load_eval_dataset(dataset, labels, label_column);
  if (ds.dim() != net.input_width()) {
    throw sba::DimensionError("dataset width " + std::to_string(ds.dim()) +
                              " does not match model input width " +
                              std::to_string(net.input_width()));
  }
  const auto settings = sba::vote_settings_for(cfg, 0);
  const sba::EvalResult r = sba::evaluate(net, ds, mode, settings);
  std::printf("mode=%s correct=%zu total=%zu accuracy=%.17g error_rate=%.17g\n",
              mode_name.c_str(), r.correct, r.total, r.accuracy, r.error_rate);
  return kOk;
}

int cmd_cost_ratio(const std::string& a_path, const std::string& b_path, double target,
                   const std::string& run_a, const std::string& run_b) {
  const auto a_records = sba::read_metrics(a_path);
  const auto b_records = sba::read_metrics(b_path);
  const auto a = sba::metrics_for_run(a_records, run_a);
  const auto b = sba::metrics_for_run(b_records, run_b);
  const sba::CostRatio r = sba::cost_ratio(a, b, target);
  auto describe = [](const char* name, const sba::TimeToTarget& t) {
    if (t.reached()) {
      std::printf("%s: reached at epoch %zu after %.6f s\n", name, *t.epoch, *t.seconds);
    } else {
      std::printf("%s: not reached\n", name);
    }
  };
  describe("a", r.a);
  describe("b", r.b);
  if (r.ratio) {
    std::printf("cost_ratio=%.17g\n", *r.ratio);
  } else {
    std::printf("cost_ratio=not reached\n");
  }
  return kOk;
}

int cmd_curves(const std::string& metrics, const std::string& out) {
  const auto records = sba::read_metrics(metrics);
  for (const auto& path : sba::emit_curves(records, out)) std::cout << path.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train and evaluate MLP classifiers with stochastic batch augmentation"};
  app.require_subcommand(1);

  std::string config_path, output;
  std::optional<std::size_t> workers;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "Run every configuration of an experiment file");
  run->add_option("config", config_path, "Experiment config file")->required();
  run->add_option("--workers", workers, "Parallel run slots (overrides the config)");
  run->add_option("--output", output, "Output directory (overrides the config)");
  run->add_flag("-q,--quiet", quiet, "No per-epoch progress on stderr");

  std::string checkpoint, dataset, labels, eval_mode = "argmax", eval_config;
  int label_column = -1;
  std::uint64_t seed = 0;
  std::size_t split = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("checkpoint", checkpoint, "Model checkpoint (.sba)")->required();
  eval->add_option("dataset", dataset, "IDX image file (with --labels) or delimited file")
      ->required();
  eval->add_option("--labels", labels, "IDX label file");
  eval->add_option("--label-column", label_column, "Label column of a delimited file");
  eval->add_option("--eval-mode", eval_mode, "argmax or vote");
  eval->add_option("--config", eval_config, "Config supplying vicinity settings for vote mode");
  eval->add_option("--seed", seed, "Master seed for vote-mode randomness");
  eval->add_option("--split", split, "Pin the vote split layer");

  std::string metrics_a, metrics_b, run_a, run_b;
  double target = 0.0;
  auto* cost = app.add_subcommand("cost-ratio", "Time-to-target ratio of run a over run b");
  cost->add_option("metrics_a", metrics_a, "Metrics file of run a (e.g. BA)")->required();
  cost->add_option("metrics_b", metrics_b, "Metrics file of run b (e.g. SBA)")->required();
  cost->add_option("--target", target, "Target test accuracy in [0, 1]")->required();
  cost->add_option("--run-a", run_a, "Run id within metrics_a (default: first)");
  cost->add_option("--run-b", run_b, "Run id within metrics_b (default: first)");

  std::string curves_in, curves_out;
  auto* curves = app.add_subcommand("curves", "Write one CSV curve file per run");
  curves->add_option("metrics", curves_in, "Metrics file")->required();
  curves->add_option("out", curves_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_run(config_path, workers, output, quiet);
    if (*eval) {
      return cmd_eval(checkpoint, dataset, labels, label_column, eval_mode, eval_config, seed,
                      split);
    }
    if (*cost) return cmd_cost_ratio(metrics_a, metrics_b, target, run_a, run_b);
    if (*curves) return cmd_curves(curves_in, curves_out);
  } catch (const sba::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}
