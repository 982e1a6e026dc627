#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ocvkit/cli_commands.hpp"
#include "ocvkit/errors.hpp"

namespace {

int run(int argc, char** argv) {
  CLI::App app{"Battery OCV characterization toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string log_path;
  std::string out_dir;
  std::string params_path;
  std::string r0_report_path;
  double epsilon = ocvkit::kDefaultEpsilon;
  std::size_t table_n = ocvkit::kDefaultTableNodes;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;

  CLI::App* sim = app.add_subcommand(
      "simulate", "Run the configured protocol on a simulated cell and write log.csv");
  sim->add_option("--config", config_path, "run configuration file")->required();
  sim->add_option("--out", out_dir, "output directory")->required();
  sim->add_option("--seed", seed, "override the config seed");

  CLI::App* eocv = app.add_subcommand(
      "estimate-ocv", "Fit the OCV model and table from a test log");
  eocv->add_option("--log", log_path, "protocol log CSV")->required();
  eocv->add_option("--out", out_dir, "output directory")->required();
  eocv->add_option("--epsilon", epsilon, "SOC scaling margin in [0, 0.5)");
  eocv->add_option("--table-n", table_n, "OCV table node count");

  CLI::App* er0 = app.add_subcommand(
      "estimate-r0", "Estimate internal resistance from a log's pulse segment, or run "
                     "the configured Monte Carlo study");
  er0->add_option("--log", log_path, "protocol log CSV with a pulse segment");
  er0->add_option("--config", config_path, "config with an [r0_study] section");
  er0->add_option("--out", out_dir, "output directory")->required();
  er0->add_option("--trials", trials, "override the study trial count");
  er0->add_option("--seed", seed, "override the config seed");

  CLI::App* hyst = app.add_subcommand(
      "hysteresis", "Recover the hysteresis series from a log, fitted parameters, and "
                    "an r0 report");
  hyst->add_option("--log", log_path, "protocol log CSV")->required();
  hyst->add_option("--params", params_path, "fitted OCV parameters file")->required();
  hyst->add_option("--r0-report", r0_report_path, "r0 report CSV")->required();
  hyst->add_option("--out", out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (sim->parsed()) {
    ocvkit::SimulateOptions opt{config_path, out_dir, seed};
    ocvkit::cmd_simulate(opt, std::cout);
  } else if (eocv->parsed()) {
    ocvkit::EstimateOcvOptions opt{log_path, out_dir, epsilon, table_n};
    ocvkit::cmd_estimate_ocv(opt, std::cout);
  } else if (er0->parsed()) {
    ocvkit::EstimateR0Options opt{log_path, config_path, out_dir, trials, seed};
    ocvkit::cmd_estimate_r0(opt, std::cout);
  } else if (hyst->parsed()) {
    ocvkit::HysteresisOptions opt{log_path, params_path, r0_report_path, out_dir};
    ocvkit::cmd_hysteresis(opt, std::cout);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ocvkit::Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "E_INTERNAL: " << e.what() << "\n";
    return 1;
  }
}
