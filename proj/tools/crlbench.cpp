// crlbench: continual representation learning experiments on spectrogram
// classification.

#include <omp.h>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "crl/config.hpp"
#include "crl/error.hpp"
#include "crl/experiment.hpp"
#include "crl/reporting.hpp"

namespace fs = std::filesystem;

namespace {

void apply_thread_cap() {
  const char* env = std::getenv("CRLBENCH_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end || n < 1) throw crl::UsageError(std::string("CRLBENCH_THREADS must be a positive integer, got '") + env + "'");
  omp_set_num_threads(static_cast<int>(n));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual representation learning benchmark"};
  app.require_subcommand(1);

  std::string config_path, output, seeds;
  bool quiet = false;
  std::vector<std::string> inputs;

  auto* gen = app.add_subcommand("generate-data", "Write the configured synthetic corpus as manifest + feature files");
  gen->add_option("--config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
  gen->add_option("--output", output, "Output directory (overrides run.output_dir)");
  gen->add_flag("--quiet", quiet, "Suppress progress output");

  auto* run = app.add_subcommand("run", "Train and evaluate every configured seed/fold");
  run->add_option("--config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
  run->add_option("--output", output, "Output directory (overrides run.output_dir)");
  run->add_option("--seeds", seeds, "Comma-separated seeds (overrides run.seeds)");
  run->add_flag("--quiet", quiet, "Suppress progress output");

  auto* plot = app.add_subcommand("plot", "Accuracy trajectories and FLEP curves as SVG and PNG");
  plot->add_option("results", inputs, "results.json files or run directories");
  plot->add_option("--output", output, "Directory for the figures")->required();
  plot->add_flag("--quiet", quiet, "Suppress progress output");

  auto* report = app.add_subcommand("report", "Average accuracy / forgetting table as CSV and markdown");
  report->add_option("results", inputs, "results.json files or run directories");
  report->add_option("--output", output, "Directory for the tables")->required();
  report->add_flag("--quiet", quiet, "Suppress progress output");

  CLI11_PARSE(app, argc, argv);

  try {
    apply_thread_cap();
    crl::RunOptions opts;
    if (!output.empty()) opts.output_dir = output;
    if (!quiet) opts.log = &std::cerr;

    if (gen->parsed()) {
      crl::cmd_generate_data(crl::load_config(config_path), opts);
    } else if (run->parsed()) {
      if (!seeds.empty()) opts.seeds = crl::parse_seed_list(seeds);
      const auto doc = crl::cmd_run(crl::load_config(config_path), opts);
      crl::print_summary(doc, std::cout);
    } else {
      std::vector<fs::path> paths(inputs.begin(), inputs.end());
      const auto written = plot->parsed() ? crl::cmd_plot(paths, output) : crl::cmd_report(paths, output);
      if (!quiet)
        for (const auto& p : written) std::cerr << "wrote " << p.string() << "\n";
      if (report->parsed()) {
        std::ifstream md(fs::path(output) / "report.md");
        std::cout << md.rdbuf();
      }
    }
  } catch (const crl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const crl::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
