#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ocvkit/battery.hpp"
#include "ocvkit/config.hpp"
#include "ocvkit/errors.hpp"
#include "ocvkit/log.hpp"
#include "ocvkit/ocv_estimation.hpp"
#include "ocvkit/ocv_model.hpp"
#include "ocvkit/protocols.hpp"
#include "ocvkit/resistance.hpp"
#include "ocvkit/rng.hpp"

// Command bodies behind the CLI front end. Each takes parsed options, writes
// its outputs under an output directory, reports progress on `info`, and
// throws Error subclasses; the CLI maps those to one-line E_* messages.

namespace ocvkit {

namespace detail {

inline std::filesystem::path prepare_out_dir(const std::string& out_dir) {
  if (out_dir.empty()) throw ConfigError("an output directory is required (--out)");
  std::filesystem::path p(out_dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
  return p;
}

}  // namespace detail

struct SimulateOptions {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

struct SimulateResult {
  std::string log_path;
  std::string truth_path;
  TimeSeriesLog log;
  ProtocolDiagnostics diagnostics;
};

inline SimulateResult cmd_simulate(const SimulateOptions& opt, std::ostream& info) {
  RunConfig cfg = read_config_file(opt.config_path);
  if (!cfg.has_cell) throw ConfigError(opt.config_path + ": config has no [cell] section");
  if (!cfg.has_protocol) throw ConfigError(opt.config_path + ": config has no [protocol] section");
  if (opt.seed) cfg.seed = *opt.seed;
  const auto out = detail::prepare_out_dir(opt.out_dir);

  Rng master(cfg.seed);
  SimCell cell(cfg.truth, cfg.initial_state(), master.substream(0));
  SimulateResult res;
  if (cfg.protocol == ProtocolKind::OcvTest) {
    OcvTestOutcome run = low_rate_ocv_test(cell, cfg.cell_info(), cfg.ocv_test);
    res.log = std::move(run.log);
    res.diagnostics = std::move(run.diagnostics);
  } else {
    ChargeOutcome run = cccv_charge(cell, cfg.charge, cfg.truth.cell_id);
    res.log = std::move(run.log);
    res.diagnostics = std::move(run.diagnostics);
  }

  res.log_path = (out / "log.csv").string();
  res.truth_path = (out / "truth.txt").string();
  write_log_file(res.log, res.log_path);
  write_truth_sidecar_file(res.truth_path, cfg.truth, cfg.soc_initial, cfg.seed);
  info << "seed = " << cfg.seed << "\n";
  info << "rows = " << res.log.records.size() << "\n";
  for (const auto& ph : res.diagnostics.phases) {
    info << "phase " << ph.name << ": " << format_double(ph.start_s) << " s to "
         << format_double(ph.end_s) << " s, " << ph.rows << " rows\n";
  }
  if (res.diagnostics.cc_skipped) info << "cc phase skipped (cell already charged)\n";
  if (res.diagnostics.cv_clipped) info << "cv current clipped at i_max\n";
  info << "wrote " << res.log_path << "\n";
  info << "wrote " << res.truth_path << "\n";
  return res;
}

struct EstimateOcvOptions {
  std::string log_path;
  std::string out_dir;
  double epsilon = kDefaultEpsilon;
  std::size_t table_n = kDefaultTableNodes;
};

struct EstimateOcvResult {
  std::string params_path;
  std::string table_path;
  std::string report_path;
  OcvEstimation estimation;
};

inline EstimateOcvResult cmd_estimate_ocv(const EstimateOcvOptions& opt, std::ostream& info) {
  const auto out = detail::prepare_out_dir(opt.out_dir);
  const TimeSeriesLog log = read_log_file(opt.log_path);
  EstimateOcvResult res;
  res.estimation = estimate_ocv(log, opt.epsilon, opt.table_n);
  const OcvEstimation& est = res.estimation;

  res.params_path = (out / "ocv_params.txt").string();
  res.table_path = (out / "ocv_table.csv").string();
  res.report_path = (out / "ocv_report.txt").string();
  write_parameters_file(est.fit.params, res.params_path);
  write_table_file(est.table, res.table_path, log.cell_id);

  std::ofstream rep(res.report_path, std::ios::binary);
  if (!rep) throw IoError("cannot open " + res.report_path + " for writing");
  rep << "# format=1\n";
  rep << "# cell_id=" << log.cell_id << "\n";
  rep << "# ocv-estimation-report\n";
  rep << "rows = " << est.fit.rows << "\n";
  rep << "residual_rms_V = " << format_double(est.fit.residual_rms_V) << "\n";
  rep << "condition = " << format_double(est.fit.condition) << "\n";
  rep << "r0h_Ohm = " << format_double(est.fit.params.r0h_Ohm) << "\n";
  rep << "epsilon = " << format_double(opt.epsilon) << "\n";
  rep << "qd_As = " << format_double(est.window.capacity.qd_As) << "\n";
  rep << "qc_As = " << format_double(est.window.capacity.qc_As) << "\n";
  rep << "i_d_A = " << format_double(est.window.capacity.i_d_A) << "\n";
  rep << "i_c_A = " << format_double(est.window.capacity.i_c_A) << "\n";
  rep << "soc_out_of_range_rows = " << est.trajectory.out_of_range << "\n";
  rep << "extrapolated_nodes = "
      << std::count(est.table.extrapolated.begin(), est.table.extrapolated.end(), true) << "\n";
  rep << "monotone_violations = " << est.table.monotone_violations << "\n";
  if (!rep) throw IoError("failed writing " + res.report_path);
  rep.close();

  info << "rows = " << est.fit.rows << "\n";
  info << "residual_rms_V = " << format_double(est.fit.residual_rms_V) << "\n";
  info << "r0h_Ohm = " << format_double(est.fit.params.r0h_Ohm) << "\n";
  info << "wrote " << res.params_path << "\n";
  info << "wrote " << res.table_path << "\n";
  info << "wrote " << res.report_path << "\n";
  return res;
}

struct EstimateR0Options {
  std::string log_path;     // exactly one of log_path / config_path
  std::string config_path;
  std::string out_dir;
  std::optional<std::size_t> trials;
  std::optional<std::uint64_t> seed;
};

struct EstimateR0Result {
  std::string report_path;
  double r0_Ohm = 0.0;
  double e_volts = 0.0;
  double crlb_var_Ohm2 = 0.0;
  double variance_ratio = 0.0;  // Monte Carlo mode only
};

// Summary block shared by both report modes; the trial table follows it.
namespace detail {

inline void write_r0_report_header(std::ostream& out, const std::string& cell_id,
                                   const std::string& mode, PulseKind kind,
                                   std::size_t samples) {
  out << "# format=1\n";
  out << "# cell_id=" << cell_id << "\n";
  out << "# r0-report\n";
  out << "# mode=" << mode << "\n";
  out << "# pulse_kind=" << pulse_kind_name(kind) << "\n";
  out << "# samples=" << samples << "\n";
}

}  // namespace detail

inline EstimateR0Result cmd_estimate_r0(const EstimateR0Options& opt, std::ostream& info) {
  const bool from_log = !opt.log_path.empty();
  const bool from_config = !opt.config_path.empty();
  if (from_log == from_config) {
    throw ConfigError("estimate-r0 takes exactly one of --log or --config");
  }
  const auto out_dir = detail::prepare_out_dir(opt.out_dir);
  EstimateR0Result res;
  res.report_path = (out_dir / "r0_report.csv").string();
  std::ofstream out(res.report_path, std::ios::binary);
  if (!out) throw IoError("cannot open " + res.report_path + " for writing");

  if (from_log) {
    const TimeSeriesLog log = read_log_file(opt.log_path);
    std::vector<double> currents;
    std::vector<double> voltages;
    PulseKind kind = PulseKind::DischargeAtFull;
    bool found = false;
    for (const SegmentView& seg : segments(log)) {
      if (seg.mode != Mode::Pulse) continue;
      if (found) throw DataError("log has more than one pulse segment");
      found = true;
      bool any_positive = false;
      bool any_negative = false;
      for (std::size_t k = seg.first; k < seg.end(); ++k) {
        currents.push_back(log.records[k].i_A);
        voltages.push_back(log.records[k].v_V);
        any_positive = any_positive || log.records[k].i_A > 0.0;
        any_negative = any_negative || log.records[k].i_A < 0.0;
      }
      kind = (any_positive && any_negative) ? PulseKind::OptimizedAlternating
             : any_positive                 ? PulseKind::ChargeAtEmpty
                                            : PulseKind::DischargeAtFull;
    }
    if (!found) throw DataError("log has no pulse segment");
    const ResistanceEstimate est = estimate_r0(currents, voltages);
    res.r0_Ohm = est.r0_Ohm;
    res.e_volts = est.e_volts;
    res.crlb_var_Ohm2 = est.predicted_var_Ohm2;
    detail::write_r0_report_header(out, log.cell_id, "log", kind, est.samples);
    out << "# r0_Ohm = " << format_double(est.r0_Ohm) << "\n";
    out << "# e_volts = " << format_double(est.e_volts) << "\n";
    out << "# sigma_V = " << format_double(est.sigma_V) << "\n";
    out << "# sigma_from_residual = " << (est.sigma_from_residual ? "true" : "false") << "\n";
    out << "# crlb_var_Ohm2 = " << format_double(est.predicted_var_Ohm2) << "\n";
    out << "trial,r0_hat,e_hat\n";
    out << "0," << format_double(est.r0_Ohm) << "," << format_double(est.e_volts) << "\n";
  } else {
    RunConfig cfg = read_config_file(opt.config_path);
    if (!cfg.r0_study.present) {
      throw ConfigError(opt.config_path + ": config has no [r0_study] section");
    }
    if (opt.seed) cfg.seed = *opt.seed;
    R0StudyConfig st = cfg.r0_study;
    if (opt.trials) st.trials = *opt.trials;
    const PulseProfile profile = generate_pulse(st.kind, st.amplitude_A, st.dt_s, st.cycles);
    const Rng master = Rng(cfg.seed).substream(1);
    const MonteCarloStudy mc = run_monte_carlo(profile, st.r0_true_Ohm, st.e_true_V, st.sigma_V,
                                               st.trials, master, true);
    res.r0_Ohm = mc.mean_r0_Ohm;
    res.e_volts = mc.mean_e_volts;
    res.crlb_var_Ohm2 = mc.crlb_var_Ohm2;
    res.variance_ratio = mc.variance_ratio;
    const std::string cell_id = cfg.has_cell ? cfg.truth.cell_id : "study";
    detail::write_r0_report_header(out, cell_id, "monte_carlo", st.kind,
                                   profile.currents_A.size());
    out << "# seed = " << cfg.seed << "\n";
    out << "# trials = " << mc.trials << "\n";
    out << "# r0_true_Ohm = " << format_double(st.r0_true_Ohm) << "\n";
    out << "# e_true_V = " << format_double(st.e_true_V) << "\n";
    out << "# sigma_V = " << format_double(st.sigma_V) << "\n";
    out << "# r0_Ohm = " << format_double(mc.mean_r0_Ohm) << "\n";
    out << "# e_volts = " << format_double(mc.mean_e_volts) << "\n";
    out << "# empirical_std_Ohm = " << format_double(mc.std_r0_Ohm) << "\n";
    out << "# crlb_var_Ohm2 = " << format_double(mc.crlb_var_Ohm2) << "\n";
    out << "# crlb_std_Ohm = " << format_double(std::sqrt(mc.crlb_var_Ohm2)) << "\n";
    out << "# variance_ratio = " << format_double(mc.variance_ratio) << "\n";
    out << "trial,r0_hat,e_hat\n";
    for (std::size_t t = 0; t < mc.r0_samples.size(); ++t) {
      out << t << "," << format_double(mc.r0_samples[t]) << ","
          << format_double(mc.e_samples[t]) << "\n";
    }
  }
  if (!out) throw IoError("failed writing " + res.report_path);
  out.close();
  info << "r0_Ohm = " << format_double(res.r0_Ohm) << "\n";
  info << "crlb_var_Ohm2 = " << format_double(res.crlb_var_Ohm2) << "\n";
  info << "wrote " << res.report_path << "\n";
  return res;
}

struct R0ReportSummary {
  std::string cell_id;
  double r0_Ohm = 0.0;
};

inline R0ReportSummary parse_r0_report_summary(std::istream& in, const std::string& name) {
  R0ReportSummary s;
  bool has_cell = false;
  bool has_r0 = false;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] != '#') break;
    if (line.rfind("# cell_id=", 0) == 0) {
      s.cell_id = line.substr(10);
      has_cell = true;
    } else if (line.rfind("# r0_Ohm = ", 0) == 0) {
      const std::string v = line.substr(11);
      const char* begin = v.c_str();
      char* end = nullptr;
      s.r0_Ohm = std::strtod(begin, &end);
      if (end == begin) throw DataError(name + ": malformed r0_Ohm line");
      has_r0 = true;
    }
  }
  if (!has_cell) throw DataError(name + ": missing cell_id comment");
  if (!has_r0) throw DataError(name + ": missing r0_Ohm summary line");
  return s;
}

inline R0ReportSummary read_r0_report_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open r0 report " + path);
  return parse_r0_report_summary(in, path);
}

struct HysteresisOptions {
  std::string log_path;
  std::string params_path;
  std::string r0_report_path;
  std::string out_dir;
};

struct HysteresisResult {
  std::string series_path;
  HysteresisRecovery recovery;
};

inline HysteresisResult cmd_hysteresis(const HysteresisOptions& opt, std::ostream& info) {
  const auto out_dir = detail::prepare_out_dir(opt.out_dir);
  const TimeSeriesLog log = read_log_file(opt.log_path);
  const OcvParameters params = read_parameters_file(opt.params_path);
  const R0ReportSummary r0 = read_r0_report_file(opt.r0_report_path);
  if (log.cell_id != params.cell_id || log.cell_id != r0.cell_id) {
    throw DataError("cell id mismatch: log '" + log.cell_id + "', parameters '" +
                    params.cell_id + "', r0 report '" + r0.cell_id + "'");
  }
  HysteresisResult res;
  res.recovery = recover_hysteresis(log, params, r0.r0_Ohm);
  res.series_path = (out_dir / "hysteresis.csv").string();
  std::ofstream out(res.series_path, std::ios::binary);
  if (!out) throw IoError("cannot open " + res.series_path + " for writing");
  out << "# format=1\n";
  out << "# cell_id=" << log.cell_id << "\n";
  out << "# hysteresis-series\n";
  out << "# r0_hat_Ohm = " << format_double(r0.r0_Ohm) << "\n";
  out << "# r_h_Ohm = " << format_double(res.recovery.r_h_Ohm) << "\n";
  out << "# rms_divergence_V = " << format_double(res.recovery.rms_divergence_V) << "\n";
  out << "# negative_r_h = " << (res.recovery.negative_r_h ? "true" : "false") << "\n";
  out << "k,h1_V,h2_V\n";
  for (const HysteresisPoint& p : res.recovery.points) {
    out << p.record << "," << format_double(p.h1_V) << "," << format_double(p.h2_V) << "\n";
  }
  if (!out) throw IoError("failed writing " + res.series_path);
  out.close();
  if (res.recovery.negative_r_h) {
    info << "warning: recovered r_h is negative; pulse estimate exceeds the fitted "
            "lumped resistance\n";
  }
  info << "r_h_Ohm = " << format_double(res.recovery.r_h_Ohm) << "\n";
  info << "rms_divergence_V = " << format_double(res.recovery.rms_divergence_V) << "\n";
  info << "wrote " << res.series_path << "\n";
  return res;
}

}  // namespace ocvkit
