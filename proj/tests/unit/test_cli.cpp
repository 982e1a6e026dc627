#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ocvkit/cli_commands.hpp"
#include "ocvkit/config.hpp"
#include "ocvkit/errors.hpp"
#include "ocvkit/log.hpp"
#include "ocvkit/ocv_estimation.hpp"
#include "ocvkit/ocv_model.hpp"

using Catch::Matchers::ContainsSubstring;
using namespace ocvkit;

namespace {

// Table-curve R-int cell with measurement noise, quick N/4 protocol, and a
// Monte Carlo study block, so every subcommand has something to chew on.
const char* kRunConfig = R"(# format=1
seed = 424242

[cell]
cell_id = cli-a
capacity_As = 3600
r_ohmic_Ohm = 0.07
r_sei_Ohm = 0
c_sei_F = 3000
r_ct_Ohm = 0
c_dl_F = 600
hysteresis_model = resistive
hysteresis_value = 0
noise_std_V = 0.0002
soc_initial = 0.2
ocv_min_V = 3.2
ocv_max_V = 3.9
ocv_model = table
ocv_table = 0:3.0 0.25:3.35 0.5:3.55 0.75:3.75 1:4.0

[protocol]
kind = ocv_test
n_rate = 4
sample_dt_s = 30
control_dt_s = 1
rest_s = 600
pulse_kind = discharge_at_full
pulse_amplitude_A = 0.5
pulse_dt_s = 10
pulse_cycles = 1
r0_hat_Ohm = 0.07

[estimation]
epsilon = 0.175
table_n = 201

[r0_study]
pulse_kind = optimized_alternating
amplitude_A = 1
dt_s = 10
cycles = 1
r0_true_Ohm = 0.07
e_true_V = 3.6
sigma_V = 0.0002
trials = 500
)";

std::filesystem::path make_temp_dir() {
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  auto dir =
      std::filesystem::temp_directory_path() / ("ocvkit_cli_" + std::to_string(stamp));
  std::filesystem::create_directories(dir);
  return dir;
}

std::filesystem::path write_run_config(const std::filesystem::path& dir) {
  const auto path = dir / "run.cfg";
  std::ofstream(path, std::ios::binary) << kRunConfig;
  return path;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("simulate is reproducible and seed-sensitive", "[cli]") {
  const auto dir = make_temp_dir();
  const auto cfg = write_run_config(dir);

  std::ostringstream info;
  const SimulateResult a =
      cmd_simulate({cfg.string(), (dir / "a").string(), std::nullopt}, info);
  REQUIRE(std::filesystem::exists(a.log_path));
  REQUIRE(std::filesystem::exists(a.truth_path));
  REQUIRE(a.log.records.size() > 1000);
  REQUIRE(info.str().find("rows = ") != std::string::npos);

  const TimeSeriesLog log = read_log_file(a.log_path);
  REQUIRE_NOTHROW(log.validate());
  REQUIRE(log.cell_id == "cli-a");
  REQUIRE(log.records.size() == a.log.records.size());

  const RunConfig truth_back = read_config_file(a.truth_path);
  REQUIRE(truth_back.truth.capacity_As == 3600.0);
  REQUIRE(truth_back.soc_initial == 0.2);
  REQUIRE_FALSE(truth_back.truth.true_ocv.generative());
  REQUIRE(truth_back.seed == 424242);

  const SimulateResult b =
      cmd_simulate({cfg.string(), (dir / "b").string(), std::nullopt}, info);
  REQUIRE(read_bytes(b.log_path) == read_bytes(a.log_path));
  REQUIRE(read_bytes(b.truth_path) == read_bytes(a.truth_path));

  const SimulateResult c = cmd_simulate({cfg.string(), (dir / "c").string(), 999}, info);
  REQUIRE(read_bytes(c.log_path) != read_bytes(a.log_path));
  const RunConfig truth_c = read_config_file(c.truth_path);
  REQUIRE(truth_c.seed == 999);

  std::filesystem::remove_all(dir);
}

TEST_CASE("the command chain runs end to end on one log", "[cli]") {
  const auto dir = make_temp_dir();
  const auto cfg = write_run_config(dir);
  std::ostringstream info;

  const SimulateResult sim =
      cmd_simulate({cfg.string(), (dir / "sim").string(), std::nullopt}, info);

  EstimateOcvOptions eo;
  eo.log_path = sim.log_path;
  eo.out_dir = (dir / "est").string();
  const EstimateOcvResult est = cmd_estimate_ocv(eo, info);

  SECTION("the fit lands near the simulated resistance") {
    REQUIRE(est.estimation.fit.params.r0h_Ohm > 0.055);
    REQUIRE(est.estimation.fit.params.r0h_Ohm < 0.085);
    REQUIRE(est.estimation.fit.residual_rms_V < 0.01);
    REQUIRE(est.estimation.fit.rows > 500);
  }

  SECTION("artifacts parse back") {
    const OcvParameters params = read_parameters_file(est.params_path);
    REQUIRE(params.cell_id == "cli-a");
    REQUIRE(params.r0h_Ohm == est.estimation.fit.params.r0h_Ohm);

    std::ifstream tab(est.table_path);
    const OcvTable table = parse_table_csv(tab);
    REQUIRE(table.soc.size() == 201);
    REQUIRE(table.soc.front() == 0.0);
    REQUIRE(table.soc.back() == 1.0);

    const std::string report = read_bytes(est.report_path);
    REQUIRE(report.find("residual_rms_V = ") != std::string::npos);
    REQUIRE(report.find("qd_As = ") != std::string::npos);
    REQUIRE(report.find("monotone_violations = ") != std::string::npos);
  }

  SECTION("pulse resistance, study mode, and hysteresis close the loop") {
    EstimateR0Options ro;
    ro.log_path = sim.log_path;
    ro.out_dir = (dir / "r0").string();
    const EstimateR0Result r0 = cmd_estimate_r0(ro, info);
    REQUIRE(r0.r0_Ohm > 0.05);
    REQUIRE(r0.r0_Ohm < 0.09);
    const R0ReportSummary summary = read_r0_report_file(r0.report_path);
    REQUIRE(summary.cell_id == "cli-a");
    REQUIRE(summary.r0_Ohm == r0.r0_Ohm);
    REQUIRE(read_bytes(r0.report_path).find("# mode=log") != std::string::npos);

    EstimateR0Options mc;
    mc.config_path = cfg.string();
    mc.out_dir = (dir / "r0mc").string();
    const EstimateR0Result study = cmd_estimate_r0(mc, info);
    REQUIRE(study.variance_ratio > 0.7);
    REQUIRE(study.variance_ratio < 1.3);
    REQUIRE(study.r0_Ohm == Catch::Approx(0.07).margin(0.005));
    REQUIRE(read_bytes(study.report_path).find("# mode=monte_carlo") != std::string::npos);

    HysteresisOptions ho;
    ho.log_path = sim.log_path;
    ho.params_path = est.params_path;
    ho.r0_report_path = r0.report_path;
    ho.out_dir = (dir / "hyst").string();
    const HysteresisResult h = cmd_hysteresis(ho, info);
    REQUIRE(std::fabs(h.recovery.r_h_Ohm) < 0.02);
    REQUIRE(h.recovery.rms_divergence_V < 0.01);
    REQUIRE_FALSE(h.recovery.points.empty());
    REQUIRE(read_bytes(h.series_path).find("k,h1_V,h2_V") != std::string::npos);
  }

  std::filesystem::remove_all(dir);
}

TEST_CASE("command options are checked before work starts", "[cli]") {
  const auto dir = make_temp_dir();
  std::ostringstream info;

  SECTION("estimate-r0 wants exactly one source") {
    EstimateR0Options both;
    both.log_path = "x.csv";
    both.config_path = "y.cfg";
    both.out_dir = (dir / "o").string();
    REQUIRE_THROWS_WITH(cmd_estimate_r0(both, info),
                        ContainsSubstring("exactly one of --log or --config"));
    EstimateR0Options neither;
    neither.out_dir = (dir / "o").string();
    REQUIRE_THROWS_WITH(cmd_estimate_r0(neither, info),
                        ContainsSubstring("exactly one of --log or --config"));
  }

  SECTION("an output directory is mandatory") {
    EstimateOcvOptions eo;
    eo.log_path = "whatever.csv";
    eo.out_dir = "";
    REQUIRE_THROWS_WITH(cmd_estimate_ocv(eo, info),
                        ContainsSubstring("an output directory is required"));
  }

  SECTION("simulate insists on cell and protocol sections") {
    const auto no_protocol = dir / "np.cfg";
    std::ofstream(no_protocol) << "# format=1\n[cell]\ncapacity_As = 3600\n";
    REQUIRE_THROWS_WITH(
        cmd_simulate({no_protocol.string(), (dir / "o").string(), std::nullopt}, info),
        ContainsSubstring("config has no [protocol] section"));

    const auto no_cell = dir / "nc.cfg";
    std::ofstream(no_cell) << "# format=1\n[protocol]\nkind = ocv_test\nr0_hat_Ohm = 0.1\n";
    REQUIRE_THROWS_WITH(
        cmd_simulate({no_cell.string(), (dir / "o").string(), std::nullopt}, info),
        ContainsSubstring("config has no [cell] section"));
  }

  SECTION("a log without a pulse train cannot feed estimate-r0") {
    TimeSeriesLog log;
    log.cell_id = "quiet";
    log.records = {{0.0, 0.0, 3.6, Mode::Rest}, {1.0, 0.0, 3.6, Mode::Rest}};
    const auto path = (dir / "quiet.csv").string();
    write_log_file(log, path);
    EstimateR0Options ro;
    ro.log_path = path;
    ro.out_dir = (dir / "o").string();
    REQUIRE_THROWS_WITH(cmd_estimate_r0(ro, info),
                        ContainsSubstring("log has no pulse segment"));
  }

  SECTION("a study config without the study section is rejected") {
    const auto plain = dir / "plain.cfg";
    std::ofstream(plain) << "# format=1\nseed = 2\n";
    EstimateR0Options ro;
    ro.config_path = plain.string();
    ro.out_dir = (dir / "o").string();
    REQUIRE_THROWS_WITH(cmd_estimate_r0(ro, info),
                        ContainsSubstring("config has no [r0_study] section"));
  }

  std::filesystem::remove_all(dir);
}

TEST_CASE("hysteresis refuses inputs from different cells", "[cli]") {
  const auto dir = make_temp_dir();
  const auto cfg = write_run_config(dir);
  std::ostringstream info;

  const SimulateResult sim =
      cmd_simulate({cfg.string(), (dir / "sim").string(), std::nullopt}, info);
  EstimateOcvOptions eo;
  eo.log_path = sim.log_path;
  eo.out_dir = (dir / "est").string();
  const EstimateOcvResult est = cmd_estimate_ocv(eo, info);
  EstimateR0Options ro;
  ro.log_path = sim.log_path;
  ro.out_dir = (dir / "r0").string();
  const EstimateR0Result r0 = cmd_estimate_r0(ro, info);

  OcvParameters params = read_parameters_file(est.params_path);
  params.cell_id = "imposter";
  const auto forged = (dir / "forged_params.txt").string();
  write_parameters_file(params, forged);

  HysteresisOptions ho;
  ho.log_path = sim.log_path;
  ho.params_path = forged;
  ho.r0_report_path = r0.report_path;
  ho.out_dir = (dir / "hyst").string();
  REQUIRE_THROWS_WITH(cmd_hysteresis(ho, info),
                      ContainsSubstring("cell id mismatch") &&
                          ContainsSubstring("imposter"));

  std::filesystem::remove_all(dir);
}

TEST_CASE("the installed binary reports one-line error codes", "[cli]") {
  const char* bin = std::getenv("OCVKIT_BIN");
  if (bin == nullptr) {
    SKIP("OCVKIT_BIN not set; binary smoke test needs the built CLI");
  }
  const auto dir = make_temp_dir();

  const std::string err_path = (dir / "err.txt").string();
  const std::string cmd = std::string("\"") + bin + "\" estimate-ocv --log " +
                          (dir / "absent.csv").string() + " --out " +
                          (dir / "out").string() + " 2>" + err_path;
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != 0);
  REQUIRE_THAT(read_bytes(err_path), ContainsSubstring("E_IO:"));

  const std::string help_path = (dir / "help.txt").string();
  const std::string help_cmd =
      std::string("\"") + bin + "\" --help >" + help_path + " 2>&1";
  REQUIRE(std::system(help_cmd.c_str()) == 0);
  const std::string help = read_bytes(help_path);
  REQUIRE_THAT(help, ContainsSubstring("simulate"));
  REQUIRE_THAT(help, ContainsSubstring("estimate-ocv"));
  REQUIRE_THAT(help, ContainsSubstring("estimate-r0"));
  REQUIRE_THAT(help, ContainsSubstring("hysteresis"));

  std::filesystem::remove_all(dir);
}
