#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "esnrmt/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::string out;
  bool no_timestamp = false;
  int threads = 0;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config, "JSON experiment config")->required();
  sub->add_option("--out", args.out, "output CSV path")->required();
  sub->add_flag("--no-timestamp", args.no_timestamp, "omit the generated-at header line");
  sub->add_option("--threads", args.threads, "worker threads (ESN_RMT_THREADS overrides)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noisy linear echo-state networks: Monte Carlo errors vs deterministic "
               "equivalents"};
  app.require_subcommand(1);

  CommonArgs sweep_args, curve_args, design_args, compare_args;
  CLI::App* sweep = app.add_subcommand("sweep", "eta^2 sweep: Monte Carlo vs theory");
  add_common(sweep, sweep_args);
  CLI::App* curve = app.add_subcommand("memory-curve", "memory capacity MC(tau) per delay");
  add_common(curve, curve_args);
  CLI::App* design = app.add_subcommand("design", "rank Haar sigma candidates for a task");
  add_common(design, design_args);
  CLI::App* compare = app.add_subcommand("compare", "aligned sweeps across ensembles");
  add_common(compare, compare_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (sweep->parsed()) {
      const auto cfg = esnrmt::load_config(sweep_args.config, "sweep");
      const int threads = esnrmt::resolve_threads(sweep_args.threads);
      const auto rows = esnrmt::run_sweep(cfg, threads);
      esnrmt::write_results_csv(sweep_args.out, rows, !sweep_args.no_timestamp);
    } else if (curve->parsed()) {
      const auto cfg = esnrmt::load_config(curve_args.config, "memory-curve");
      const int threads = esnrmt::resolve_threads(curve_args.threads);
      const auto rows = esnrmt::run_memory_curve(cfg, threads);
      esnrmt::write_memory_curve_csv(curve_args.out, rows, !curve_args.no_timestamp);
    } else if (design->parsed()) {
      const auto cfg = esnrmt::load_config(design_args.config, "design");
      const auto rows = esnrmt::run_design(cfg);
      esnrmt::write_design_csv(design_args.out, rows, !design_args.no_timestamp);
    } else if (compare->parsed()) {
      const auto cfg = esnrmt::load_config(compare_args.config, "compare");
      const int threads = esnrmt::resolve_threads(compare_args.threads);
      const auto runs = esnrmt::run_compare(cfg, threads);
      esnrmt::write_compare_csv(compare_args.out, runs, !compare_args.no_timestamp);
    }
  } catch (const esnrmt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const esnrmt::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
