#pragma once

#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ocvkit/battery.hpp"
#include "ocvkit/errors.hpp"
#include "ocvkit/ocv_estimation.hpp"
#include "ocvkit/ocv_model.hpp"
#include "ocvkit/protocols.hpp"
#include "ocvkit/resistance.hpp"

// Declarative run configuration: flat key = value lines under [cell],
// [protocol], [estimation], and [r0_study] section headers, with a global
// seed. The ground-truth sidecar written next to simulated logs is itself a
// valid config fragment, so closed-loop tests re-read it with this parser.

namespace ocvkit {

enum class ProtocolKind { OcvTest, Cccv };

struct R0StudyConfig {
  bool present = false;
  PulseKind kind = PulseKind::DischargeAtFull;
  double amplitude_A = 1.0;
  double dt_s = kDefaultPulseDt;
  std::size_t cycles = 1;
  double r0_true_Ohm = 0.05;
  double e_true_V = 3.6;
  double sigma_V = 0.0002;
  std::size_t trials = 100000;
};

struct RunConfig {
  std::uint64_t seed = 1;
  bool has_cell = false;
  BatteryGroundTruth truth;
  double soc_initial = 1.0;
  bool has_protocol = false;
  ProtocolKind protocol = ProtocolKind::OcvTest;
  OcvTestConfig ocv_test;
  ChargeConfig charge;
  double r0_hat_Ohm = 0.0;
  double epsilon = kDefaultEpsilon;
  std::size_t table_n = kDefaultTableNodes;
  R0StudyConfig r0_study;

  ProtocolCellInfo cell_info() const {
    return {truth.cell_id, truth.capacity_As, truth.ocv_min_V, truth.ocv_max_V, r0_hat_Ohm};
  }

  CellState initial_state() const {
    CellState st;
    st.soc_true = soc_initial;
    return st;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] inline void config_fail(std::size_t line, const std::string& what) {
  throw ConfigError("config line " + std::to_string(line) + ": " + what);
}

inline double parse_config_double(const std::string& v, std::size_t line) {
  const char* begin = v.c_str();
  char* end = nullptr;
  const double x = std::strtod(begin, &end);
  if (end == begin || *end != '\0') config_fail(line, "expected a number, got '" + v + "'");
  return x;
}

inline std::uint64_t parse_config_u64(const std::string& v, std::size_t line) {
  const char* begin = v.c_str();
  char* end = nullptr;
  const unsigned long long x = std::strtoull(begin, &end, 10);
  if (end == begin || *end != '\0' || v[0] == '-') {
    config_fail(line, "expected a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::uint64_t>(x);
}

inline bool parse_config_bool(const std::string& v, std::size_t line) {
  if (v == "true") return true;
  if (v == "false") return false;
  config_fail(line, "expected true or false, got '" + v + "'");
}

inline std::vector<std::pair<double, double>> parse_soc_pairs(const std::string& v,
                                                              std::size_t line) {
  std::vector<std::pair<double, double>> out;
  std::istringstream tokens(v);
  std::string tok;
  while (tokens >> tok) {
    const std::size_t colon = tok.find(':');
    if (colon == std::string::npos) {
      config_fail(line, "ocv_table entries must look like soc:volts, got '" + tok + "'");
    }
    out.emplace_back(parse_config_double(tok.substr(0, colon), line),
                     parse_config_double(tok.substr(colon + 1), line));
  }
  if (out.empty()) config_fail(line, "ocv_table has no entries");
  return out;
}

inline KVector parse_k_values(const std::string& v, std::size_t line) {
  KVector k{};
  std::istringstream tokens(v);
  std::string tok;
  std::size_t n = 0;
  while (tokens >> tok) {
    if (n >= kOcvTermCount) config_fail(line, "ocv_k takes exactly 8 values");
    k[n++] = parse_config_double(tok, line);
  }
  if (n != kOcvTermCount) config_fail(line, "ocv_k takes exactly 8 values");
  return k;
}

}  // namespace detail

inline RunConfig parse_run_config(std::istream& in) {
  using detail::config_fail;
  RunConfig cfg;
  std::string section;
  std::string line;
  std::size_t lineno = 0;
  bool saw_format = false;

  bool has_capacity = false;
  bool has_r0_hat = false;
  bool has_i_cc = false;
  bool has_i_sd = false;
  std::string ocv_model = "default";
  std::size_t ocv_model_line = 0;
  std::vector<std::pair<double, double>> table_points;
  bool has_table = false;
  KVector k{};
  bool has_k = false;
  double ocv_epsilon = kDefaultEpsilon;

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      if (!saw_format) {
        if (t != "# format=1") config_fail(lineno, "first line must be '# format=1'");
        saw_format = true;
      }
      continue;
    }
    if (!saw_format) config_fail(lineno, "first line must be '# format=1'");
    if (t.front() == '[') {
      if (t.back() != ']') config_fail(lineno, "unterminated section header");
      section = t.substr(1, t.size() - 2);
      if (section != "cell" && section != "protocol" && section != "estimation" &&
          section != "r0_study") {
        config_fail(lineno, "unknown section [" + section + "]");
      }
      if (section == "cell") cfg.has_cell = true;
      if (section == "protocol") cfg.has_protocol = true;
      if (section == "r0_study") cfg.r0_study.present = true;
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) config_fail(lineno, "expected key = value");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string val = detail::trim(t.substr(eq + 1));
    if (key.empty()) config_fail(lineno, "empty key");
    if (val.empty()) config_fail(lineno, "key '" + key + "' has no value");

    if (section.empty()) {
      if (key == "seed") {
        cfg.seed = detail::parse_config_u64(val, lineno);
      } else {
        config_fail(lineno, "unknown key '" + key + "' before any section");
      }
    } else if (section == "cell") {
      if (key == "cell_id") {
        cfg.truth.cell_id = val;
      } else if (key == "capacity_As") {
        cfg.truth.capacity_As = detail::parse_config_double(val, lineno);
        has_capacity = true;
      } else if (key == "r_ohmic_Ohm") {
        cfg.truth.r_ohmic_Ohm = detail::parse_config_double(val, lineno);
      } else if (key == "r_sei_Ohm") {
        cfg.truth.r_sei_Ohm = detail::parse_config_double(val, lineno);
      } else if (key == "c_sei_F") {
        cfg.truth.c_sei_F = detail::parse_config_double(val, lineno);
      } else if (key == "r_ct_Ohm") {
        cfg.truth.r_ct_Ohm = detail::parse_config_double(val, lineno);
      } else if (key == "c_dl_F") {
        cfg.truth.c_dl_F = detail::parse_config_double(val, lineno);
      } else if (key == "hysteresis_model") {
        if (val == "resistive") {
          cfg.truth.hysteresis.kind = Hysteresis::Kind::Resistive;
        } else if (val == "constant_magnitude") {
          cfg.truth.hysteresis.kind = Hysteresis::Kind::ConstantMagnitude;
        } else {
          config_fail(lineno, "hysteresis_model must be resistive or constant_magnitude");
        }
      } else if (key == "hysteresis_value") {
        cfg.truth.hysteresis.value = detail::parse_config_double(val, lineno);
      } else if (key == "noise_std_V") {
        cfg.truth.noise_std_V = detail::parse_config_double(val, lineno);
      } else if (key == "soc_initial") {
        cfg.soc_initial = detail::parse_config_double(val, lineno);
      } else if (key == "ocv_min_V") {
        cfg.truth.ocv_min_V = detail::parse_config_double(val, lineno);
      } else if (key == "ocv_max_V") {
        cfg.truth.ocv_max_V = detail::parse_config_double(val, lineno);
      } else if (key == "allow_limits_outside_curve") {
        cfg.truth.allow_limits_outside_curve = detail::parse_config_bool(val, lineno);
      } else if (key == "ocv_model") {
        if (val != "default" && val != "table" && val != "combined3") {
          config_fail(lineno, "ocv_model must be default, table, or combined3");
        }
        ocv_model = val;
        ocv_model_line = lineno;
      } else if (key == "ocv_table") {
        table_points = detail::parse_soc_pairs(val, lineno);
        has_table = true;
      } else if (key == "ocv_k") {
        k = detail::parse_k_values(val, lineno);
        has_k = true;
      } else if (key == "ocv_epsilon") {
        ocv_epsilon = detail::parse_config_double(val, lineno);
      } else {
        config_fail(lineno, "unknown key '" + key + "' in [cell]");
      }
    } else if (section == "protocol") {
      if (key == "kind") {
        if (val == "ocv_test") {
          cfg.protocol = ProtocolKind::OcvTest;
        } else if (val == "cccv") {
          cfg.protocol = ProtocolKind::Cccv;
        } else {
          config_fail(lineno, "protocol kind must be ocv_test or cccv");
        }
      } else if (key == "n_rate") {
        cfg.ocv_test.n_rate = detail::parse_config_double(val, lineno);
      } else if (key == "temperature_C") {
        cfg.ocv_test.temperature_C = detail::parse_config_double(val, lineno);
      } else if (key == "sample_dt_s") {
        cfg.ocv_test.sample_dt_s = detail::parse_config_double(val, lineno);
      } else if (key == "control_dt_s") {
        cfg.ocv_test.control_dt_s = detail::parse_config_double(val, lineno);
        cfg.charge.control_dt_s = cfg.ocv_test.control_dt_s;
      } else if (key == "rest_s") {
        cfg.ocv_test.rest_s = detail::parse_config_double(val, lineno);
      } else if (key == "pulse_kind") {
        cfg.ocv_test.pulse_kind = pulse_kind_from_name(val);
      } else if (key == "pulse_amplitude_A") {
        cfg.ocv_test.pulse_amplitude_A = detail::parse_config_double(val, lineno);
      } else if (key == "pulse_dt_s") {
        cfg.ocv_test.pulse_dt_s = detail::parse_config_double(val, lineno);
      } else if (key == "pulse_cycles") {
        cfg.ocv_test.pulse_cycles =
            static_cast<std::size_t>(detail::parse_config_u64(val, lineno));
      } else if (key == "max_phase_s") {
        cfg.ocv_test.max_phase_s = detail::parse_config_double(val, lineno);
        cfg.charge.max_phase_s = cfg.ocv_test.max_phase_s;
      } else if (key == "r0_hat_Ohm") {
        cfg.r0_hat_Ohm = detail::parse_config_double(val, lineno);
        has_r0_hat = true;
      } else if (key == "i_cc_A") {
        cfg.charge.i_cc_A = detail::parse_config_double(val, lineno);
        has_i_cc = true;
      } else if (key == "i_sd_A") {
        cfg.charge.i_sd_A = detail::parse_config_double(val, lineno);
        has_i_sd = true;
      } else {
        config_fail(lineno, "unknown key '" + key + "' in [protocol]");
      }
    } else if (section == "estimation") {
      if (key == "epsilon") {
        cfg.epsilon = detail::parse_config_double(val, lineno);
      } else if (key == "table_n") {
        cfg.table_n = static_cast<std::size_t>(detail::parse_config_u64(val, lineno));
      } else {
        config_fail(lineno, "unknown key '" + key + "' in [estimation]");
      }
    } else {  // r0_study
      if (key == "pulse_kind") {
        cfg.r0_study.kind = pulse_kind_from_name(val);
      } else if (key == "amplitude_A") {
        cfg.r0_study.amplitude_A = detail::parse_config_double(val, lineno);
      } else if (key == "dt_s") {
        cfg.r0_study.dt_s = detail::parse_config_double(val, lineno);
      } else if (key == "cycles") {
        cfg.r0_study.cycles = static_cast<std::size_t>(detail::parse_config_u64(val, lineno));
      } else if (key == "r0_true_Ohm") {
        cfg.r0_study.r0_true_Ohm = detail::parse_config_double(val, lineno);
      } else if (key == "e_true_V") {
        cfg.r0_study.e_true_V = detail::parse_config_double(val, lineno);
      } else if (key == "sigma_V") {
        cfg.r0_study.sigma_V = detail::parse_config_double(val, lineno);
      } else if (key == "trials") {
        cfg.r0_study.trials = static_cast<std::size_t>(detail::parse_config_u64(val, lineno));
      } else {
        config_fail(lineno, "unknown key '" + key + "' in [r0_study]");
      }
    }
  }

  if (cfg.has_cell && !has_capacity) {
    throw ConfigError("config: [cell] is missing required key capacity_As");
  }
  if (ocv_model == "table" && !has_table) {
    detail::config_fail(ocv_model_line, "ocv_model = table requires an ocv_table line");
  }
  if (ocv_model == "combined3" && !has_k) {
    detail::config_fail(ocv_model_line, "ocv_model = combined3 requires an ocv_k line");
  }
  if (ocv_model == "table") {
    cfg.truth.true_ocv = OcvCurve::from_table(std::move(table_points));
  } else if (ocv_model == "combined3") {
    OcvParameters p;
    p.k = k;
    p.epsilon = ocv_epsilon;
    p.cell_id = cfg.truth.cell_id;
    cfg.truth.true_ocv = OcvCurve::combined3(std::move(p));
  } else if (has_table) {
    cfg.truth.true_ocv = OcvCurve::from_table(std::move(table_points));
  }
  if (cfg.soc_initial < 0.0 || cfg.soc_initial > 1.0) {
    throw ConfigError("config: soc_initial must lie in [0, 1]");
  }
  if (cfg.has_protocol) {
    if (!has_r0_hat) throw ConfigError("config: [protocol] is missing required key r0_hat_Ohm");
    if (cfg.protocol == ProtocolKind::Cccv) {
      if (!has_i_cc) throw ConfigError("config: [protocol] kind cccv requires i_cc_A");
      if (!has_i_sd) throw ConfigError("config: [protocol] kind cccv requires i_sd_A");
      cfg.charge.ocv_min_V = cfg.truth.ocv_min_V;
      cfg.charge.ocv_max_V = cfg.truth.ocv_max_V;
      cfg.charge.r0_hat_Ohm = cfg.r0_hat_Ohm;
      cfg.charge.validate();
    } else {
      cfg.ocv_test.validate();
      if (!(cfg.r0_hat_Ohm > 0.0)) throw ConfigError("config: r0_hat_Ohm must be positive");
    }
  }
  cfg.truth.validate();
  return cfg;
}

inline RunConfig read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  try {
    return parse_run_config(in);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// Ground-truth echo written next to simulated logs. Parses as a config with
// just the seed and [cell] section, so closed-loop checks read it back with
// parse_run_config.
inline void write_truth_sidecar(std::ostream& out, const BatteryGroundTruth& truth,
                                double soc_initial, std::uint64_t seed) {
  out << "# format=1\n";
  out << "# ground truth used by the simulation\n";
  out << "seed = " << seed << "\n\n";
  out << "[cell]\n";
  out << "cell_id = " << truth.cell_id << "\n";
  out << "capacity_As = " << format_double(truth.capacity_As) << "\n";
  out << "r_ohmic_Ohm = " << format_double(truth.r_ohmic_Ohm) << "\n";
  out << "r_sei_Ohm = " << format_double(truth.r_sei_Ohm) << "\n";
  out << "c_sei_F = " << format_double(truth.c_sei_F) << "\n";
  out << "r_ct_Ohm = " << format_double(truth.r_ct_Ohm) << "\n";
  out << "c_dl_F = " << format_double(truth.c_dl_F) << "\n";
  out << "hysteresis_model = "
      << (truth.hysteresis.kind == Hysteresis::Kind::Resistive ? "resistive"
                                                               : "constant_magnitude")
      << "\n";
  out << "hysteresis_value = " << format_double(truth.hysteresis.value) << "\n";
  out << "noise_std_V = " << format_double(truth.noise_std_V) << "\n";
  out << "soc_initial = " << format_double(soc_initial) << "\n";
  out << "ocv_min_V = " << format_double(truth.ocv_min_V) << "\n";
  out << "ocv_max_V = " << format_double(truth.ocv_max_V) << "\n";
  out << "allow_limits_outside_curve = "
      << (truth.allow_limits_outside_curve ? "true" : "false") << "\n";
  if (truth.true_ocv.generative()) {
    const OcvParameters& p = truth.true_ocv.generative_params();
    out << "ocv_model = combined3\n";
    out << "ocv_k =";
    for (double kv : p.k) out << " " << format_double(kv);
    out << "\n";
    out << "ocv_epsilon = " << format_double(p.epsilon) << "\n";
  } else {
    out << "ocv_model = table\n";
    out << "ocv_table =";
    const auto& s = truth.true_ocv.table_soc();
    const auto& v = truth.true_ocv.table_V();
    for (std::size_t i = 0; i < s.size(); ++i) {
      out << " " << format_double(s[i]) << ":" << format_double(v[i]);
    }
    out << "\n";
  }
}

inline void write_truth_sidecar_file(const std::string& path, const BatteryGroundTruth& truth,
                                     double soc_initial, std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_truth_sidecar(out, truth, soc_initial, seed);
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace ocvkit
