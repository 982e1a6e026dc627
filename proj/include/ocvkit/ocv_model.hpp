#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "ocvkit/errors.hpp"

namespace ocvkit {

inline constexpr std::size_t kOcvTermCount = 8;
using KVector = std::array<double, kOcvTermCount>;

inline constexpr double kDefaultEpsilon = 0.175;

// Prints a double with enough digits to round-trip bit-exactly.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct FitDiagnostics {
  double residual_rms_V = 0.0;
  double condition = 0.0;
  std::size_t rows = 0;
};

// Eight-term OCV-SOC curve plus the lumped series resistance the same fit
// produces. epsilon is the SOC scaling margin the parameters were fit with;
// evaluating with a different margin is meaningless, so it travels along.
struct OcvParameters {
  KVector k{};
  double r0h_Ohm = 0.0;
  double epsilon = kDefaultEpsilon;
  std::string cell_id = "cell";
  FitDiagnostics diagnostics{};

  void validate() const {
    for (double v : k) {
      if (!std::isfinite(v)) throw DataError("OCV parameter vector has a non-finite entry");
    }
    if (!std::isfinite(r0h_Ohm)) throw DataError("r0h is non-finite");
    if (!(epsilon >= 0.0 && epsilon < 0.5)) {
      throw DataError("epsilon must lie in [0, 0.5), got " + format_double(epsilon));
    }
  }
};

// Affine map from [0,1] onto [eps, 1-eps]. Keeps the log and reciprocal
// basis terms finite at the SOC rails; the midpoint 0.5 is a fixed point.
inline double scale_soc(double s, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 0.5)) {
    throw DataError("epsilon must lie in [0, 0.5), got " + format_double(epsilon));
  }
  constexpr double tol = 1e-9;
  if (!(s >= -tol && s <= 1.0 + tol)) {
    throw DataError("soc " + format_double(s) + " outside [0,1] beyond tolerance");
  }
  if (s < 0.0) s = 0.0;
  if (s > 1.0) s = 1.0;
  return (1.0 - 2.0 * epsilon) * s + epsilon;
}

// Regressor row p_o(s'): [1, 1/s', 1/s'^2, 1/s'^3, 1/s'^4, s', ln s', ln(1-s')].
// Requires 0 < s' < 1; a raw SOC of 0 or 1 passed here means the scaling
// step was skipped upstream.
inline std::array<double, kOcvTermCount> ocv_regressor(double s_prime) {
  if (!(s_prime > 0.0 && s_prime < 1.0)) {
    throw DataError("scaled soc " + format_double(s_prime) +
                    " outside (0,1); apply scale_soc before building regressors");
  }
  const double inv = 1.0 / s_prime;
  const double inv2 = inv * inv;
  return {1.0, inv, inv2, inv2 * inv, inv2 * inv2, s_prime, std::log(s_prime), std::log1p(-s_prime)};
}

inline double evaluate_ocv(const OcvParameters& p, double s) {
  const auto row = ocv_regressor(scale_soc(s, p.epsilon));
  double v = 0.0;
  for (std::size_t j = 0; j < kOcvTermCount; ++j) v += p.k[j] * row[j];
  return v;
}

// Analytic dOCV/ds, term by term through the scaling chain rule.
inline double ocv_slope(const OcvParameters& p, double s) {
  const double sp = scale_soc(s, p.epsilon);
  const double inv = 1.0 / sp;
  const double inv2 = inv * inv;
  const double d_dsp = -p.k[1] * inv2 - 2.0 * p.k[2] * inv2 * inv - 3.0 * p.k[3] * inv2 * inv2 -
                       4.0 * p.k[4] * inv2 * inv2 * inv + p.k[5] + p.k[6] * inv -
                       p.k[7] / (1.0 - sp);
  return (1.0 - 2.0 * p.epsilon) * d_dsp;
}

inline double predict_terminal_voltage(const OcvParameters& p, double s, double i_A) {
  return evaluate_ocv(p, s) + i_A * p.r0h_Ohm;
}

inline void serialize_parameters(const OcvParameters& p, std::ostream& os) {
  p.validate();
  os << "# format=1\n";
  os << "# ocv-parameters\n";
  os << "cell_id = " << p.cell_id << "\n";
  os << "epsilon = " << format_double(p.epsilon) << "\n";
  for (std::size_t j = 0; j < kOcvTermCount; ++j) {
    os << "k" << j << " = " << format_double(p.k[j]) << "\n";
  }
  os << "r0h_Ohm = " << format_double(p.r0h_Ohm) << "\n";
  os << "residual_rms_V = " << format_double(p.diagnostics.residual_rms_V) << "\n";
  os << "condition = " << format_double(p.diagnostics.condition) << "\n";
  os << "rows = " << p.diagnostics.rows << "\n";
}

inline OcvParameters parse_parameters(std::istream& is) {
  OcvParameters p;
  std::array<bool, kOcvTermCount> seen_k{};
  bool seen_r0h = false;
  std::string line;
  std::size_t line_no = 0;
  bool format_seen = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (line_no == 1) {
      format_seen = line.rfind("# format=1", 0) == 0;
      if (format_seen) continue;
      throw DataError("parameter file missing '# format=1' first line");
    }
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError("parameter file line " + std::to_string(line_no) + ": expected key = value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto as_double = [&](const std::string& v) {
      char* end = nullptr;
      double d = std::strtod(v.c_str(), &end);
      if (end == v.c_str() || *end != '\0') {
        throw DataError("parameter file line " + std::to_string(line_no) + ": bad number '" + v +
                        "'");
      }
      return d;
    };
    if (key == "cell_id") {
      p.cell_id = value;
    } else if (key == "epsilon") {
      p.epsilon = as_double(value);
    } else if (key.size() == 2 && key[0] == 'k' && key[1] >= '0' && key[1] <= '7') {
      const std::size_t j = static_cast<std::size_t>(key[1] - '0');
      p.k[j] = as_double(value);
      seen_k[j] = true;
    } else if (key == "r0h_Ohm") {
      p.r0h_Ohm = as_double(value);
      seen_r0h = true;
    } else if (key == "residual_rms_V") {
      p.diagnostics.residual_rms_V = as_double(value);
    } else if (key == "condition") {
      p.diagnostics.condition = as_double(value);
    } else if (key == "rows") {
      p.diagnostics.rows = static_cast<std::size_t>(as_double(value));
    } else {
      throw DataError("parameter file line " + std::to_string(line_no) + ": unknown key '" + key +
                      "'");
    }
  }
  for (std::size_t j = 0; j < kOcvTermCount; ++j) {
    if (!seen_k[j]) throw DataError("parameter file missing k" + std::to_string(j));
  }
  if (!seen_r0h) throw DataError("parameter file missing r0h_Ohm");
  p.validate();
  return p;
}

inline void write_parameters_file(const OcvParameters& p, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  serialize_parameters(p, os);
  if (!os.flush()) throw IoError("write failed for '" + path + "'");
}

inline OcvParameters read_parameters_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  return parse_parameters(is);
}

}  // namespace ocvkit
