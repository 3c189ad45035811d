#include <ostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "ttl/bench/commands.hpp"
#include "ttl/core/threads.hpp"

namespace ttl::bench {

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"TTM layer verification, parameter accounting, benchmarking and toy training",
               "ttl_bench"};
  app.require_subcommand(1);

  std::string config_path;
  CommandOptions opts;
  Extent batch = 0;
  std::size_t repeats = 0, steps = 0;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run file with [layer] blocks")->required();
    sub->add_option("--seed", seed, "Run seed (overrides the config's seed)");
    sub->add_option("--out", opts.out_path, "CSV output path");
    sub->add_option("--threads", threads, "Contraction threads (capped by TTM_THREADS)")
        ->check(CLI::PositiveNumber);
  };
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference and cross-strategy checks");
  common(gradcheck);
  gradcheck->add_option("--batch", batch, "Input rows")->check(CLI::PositiveNumber);
  gradcheck->add_option("--entries", opts.gradcheck_entries,
                        "Entries checked per tensor (0 = all)");

  auto* bench = app.add_subcommand("bench", "Time and memory of each strategy pair");
  common(bench);
  bench->add_option("--batch", batch, "Input rows")->check(CLI::PositiveNumber);
  bench->add_option("--repeats", repeats, "Timed repetitions after 3 warmups")
      ->check(CLI::PositiveNumber);
  bench->add_flag("--explain", opts.explain, "Print contraction plans");
  bench->add_flag("--model-only", opts.model_only, "Report modeled costs without running");

  auto* params = app.add_subcommand("params", "Parameter counts and compression rates");
  common(params);

  auto* train = app.add_subcommand("train-toy", "Teacher-student training of an MLP block");
  common(train);
  train->add_option("--steps", steps, "Optimizer steps")->check(CLI::PositiveNumber);
  train->add_option("--batch", batch, "Rows per step")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsageError;
  }
  if (batch) opts.batch = batch;
  if (repeats) opts.repeats = repeats;
  if (steps) opts.steps = steps;
  for (auto* sub : {gradcheck, bench, params, train}) {
    if (sub->parsed() && sub->count("--seed")) opts.seed = seed;
  }
  core::set_thread_limit(threads);

  RunConfig config;
  try {
    config = load_config(config_path);
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kUsageError;
  }
  try {
    if (gradcheck->parsed()) return cmd_gradcheck(config, opts, out);
    if (bench->parsed()) return cmd_bench(config, opts, out);
    if (params->parsed()) return cmd_params(config, opts, out);
    return cmd_train_toy(config, opts, out, err);
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
}

}  // namespace ttl::bench
