#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <string>
#include <utility>
#include <vector>

#include "ocvkit/errors.hpp"
#include "ocvkit/linalg.hpp"
#include "ocvkit/log.hpp"
#include "ocvkit/ocv_model.hpp"
#include "ocvkit/soc.hpp"

namespace ocvkit {

inline constexpr double kConditionLimit = 1e12;
inline constexpr std::size_t kDefaultTableNodes = 201;

// Stacked observation system v = P [k; R0h]: one row per Charge/Discharge
// record, regressor on the scaled SOC plus the record's current as the
// ninth column.
struct DesignSystem {
  Matrix p;
  std::vector<double> v;
  std::vector<std::size_t> rows;  // source record index per design row
  double epsilon = kDefaultEpsilon;
};

inline DesignSystem build_design(const TimeSeriesLog& log, const std::vector<double>& soc,
                                 double epsilon) {
  if (soc.size() != log.records.size()) {
    throw DataError("soc trajectory and log are not aligned");
  }
  DesignSystem d;
  d.epsilon = epsilon;
  for (std::size_t k = 0; k < log.records.size(); ++k) {
    const Mode m = log.records[k].mode;
    if (m == Mode::Charge || m == Mode::Discharge) d.rows.push_back(k);
  }
  constexpr std::size_t kCols = kOcvTermCount + 1;
  d.p = Matrix(d.rows.size(), kCols);
  d.v.resize(d.rows.size());
  for (std::size_t r = 0; r < d.rows.size(); ++r) {
    const auto& rec = log.records[d.rows[r]];
    const auto row = ocv_regressor(scale_soc(soc[d.rows[r]], epsilon));
    for (std::size_t j = 0; j < kOcvTermCount; ++j) {
      if (!std::isfinite(row[j])) throw DataError("non-finite regressor entry");
      d.p(r, j) = row[j];
    }
    if (!std::isfinite(rec.i_A) || !std::isfinite(rec.v_V)) {
      throw DataError("non-finite sample in log");
    }
    d.p(r, kCols - 1) = rec.i_A;
    d.v[r] = rec.v_V;
  }
  if (d.rows.size() < kCols) {
    throw DataError("need at least " + std::to_string(kCols) + " charge/discharge rows, got " +
                    std::to_string(d.rows.size()));
  }
  return d;
}

struct OcvFit {
  OcvParameters params;
  double residual_rms_V = 0.0;
  double condition = 0.0;
  std::size_t rows = 0;
};

// Least squares through an orthogonal factorization; a condition estimate
// above 1e12 or a rank-deficient design is an error, not a warning.
inline OcvFit fit_parameters(const DesignSystem& d) {
  const LeastSquaresSolution sol = solve_least_squares(d.p, d.v, kConditionLimit);
  OcvFit out;
  for (std::size_t j = 0; j < kOcvTermCount; ++j) out.params.k[j] = sol.x[j];
  out.params.r0h_Ohm = sol.x[kOcvTermCount];
  out.params.epsilon = d.epsilon;
  out.residual_rms_V = sol.residual_rms;
  out.condition = sol.condition;
  out.rows = d.p.rows();
  out.params.diagnostics = {out.residual_rms_V, out.condition, out.rows};
  return out;
}

struct OcvTable {
  std::vector<double> soc;
  std::vector<double> ocv_V;
  std::vector<bool> extrapolated;   // node outside a branch's SOC coverage
  std::size_t monotone_violations = 0;
};

namespace detail {

struct BranchSamples {
  std::vector<double> s, v;  // sorted by s ascending
};

inline BranchSamples branch_samples(const TimeSeriesLog& log, const std::vector<double>& soc,
                                    Mode mode) {
  std::vector<std::pair<double, double>> pts;
  for (std::size_t k = 0; k < log.records.size(); ++k) {
    if (log.records[k].mode == mode) pts.emplace_back(soc[k], log.records[k].v_V);
  }
  std::sort(pts.begin(), pts.end());
  BranchSamples b;
  b.s.reserve(pts.size());
  b.v.reserve(pts.size());
  for (const auto& [s, v] : pts) {
    if (!b.s.empty() && s == b.s.back()) continue;  // duplicate SOC, keep first
    b.s.push_back(s);
    b.v.push_back(v);
  }
  return b;
}

// Linear interpolation with endpoint takeover outside coverage.
inline double branch_value(const BranchSamples& b, double s, bool& extrapolated) {
  if (s <= b.s.front()) {
    extrapolated = extrapolated || s < b.s.front();
    return b.v.front();
  }
  if (s >= b.s.back()) {
    extrapolated = extrapolated || s > b.s.back();
    return b.v.back();
  }
  const auto it = std::upper_bound(b.s.begin(), b.s.end(), s);
  const std::size_t hi = static_cast<std::size_t>(it - b.s.begin());
  const std::size_t lo = hi - 1;
  const double w = (s - b.s[lo]) / (b.s[hi] - b.s[lo]);
  return b.v[lo] + w * (b.v[hi] - b.v[lo]);
}

}  // namespace detail

// Model-free OCV table: at each node, interpolate the discharge and charge
// branches separately on their own SOC trajectories and average, cancelling
// the symmetric +/- |i| R0h drops.
inline OcvTable build_table(const TimeSeriesLog& log, const std::vector<double>& soc,
                            std::size_t n = kDefaultTableNodes) {
  if (n < 2) throw DataError("table needs at least two nodes");
  if (soc.size() != log.records.size()) {
    throw DataError("soc trajectory and log are not aligned");
  }
  const auto dis = detail::branch_samples(log, soc, Mode::Discharge);
  const auto chg = detail::branch_samples(log, soc, Mode::Charge);
  if (dis.s.size() < 2 || chg.s.size() < 2) {
    throw DataError("table needs at least two samples on each branch");
  }
  OcvTable t;
  t.soc.resize(n);
  t.ocv_V.resize(n);
  t.extrapolated.assign(n, false);
  for (std::size_t j = 0; j < n; ++j) {
    const double s = static_cast<double>(j) / static_cast<double>(n - 1);
    bool ex = false;
    const double vd = detail::branch_value(dis, s, ex);
    const double vc = detail::branch_value(chg, s, ex);
    t.soc[j] = s;
    t.ocv_V[j] = 0.5 * (vd + vc);
    t.extrapolated[j] = ex;
  }
  for (std::size_t j = 1; j < n; ++j) {
    if (!(t.ocv_V[j] > t.ocv_V[j - 1])) ++t.monotone_violations;
  }
  return t;
}

inline void write_table_csv(const OcvTable& t, std::ostream& os, const std::string& cell_id) {
  os << "# format=1\n";
  os << "# cell_id=" << cell_id << "\n";
  bool any_ex = false;
  for (std::size_t j = 0; j < t.soc.size(); ++j) {
    if (t.extrapolated[j]) {
      os << (any_ex ? " " : "# extrapolated_nodes=") << j;
      any_ex = true;
    }
  }
  if (any_ex) os << "\n";
  if (t.monotone_violations > 0) {
    os << "# monotone_violations=" << t.monotone_violations << "\n";
  }
  os << "soc,ocv_volts\n";
  for (std::size_t j = 0; j < t.soc.size(); ++j) {
    os << format_double(t.soc[j]) << ',' << format_double(t.ocv_V[j]) << '\n';
  }
}

inline OcvTable parse_table_csv(std::istream& is) {
  OcvTable t;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::vector<std::size_t> ex_nodes;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line.rfind("# format=1", 0) != 0) throw DataError("table missing '# format=1' first line");
      continue;
    }
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string key = "# extrapolated_nodes=";
      if (line.rfind(key, 0) == 0) {
        std::size_t pos = key.size();
        while (pos < line.size()) {
          ex_nodes.push_back(std::strtoull(line.c_str() + pos, nullptr, 10));
          pos = line.find(' ', pos);
          if (pos == std::string::npos) break;
          ++pos;
        }
      }
      continue;
    }
    if (!header_seen) {
      if (line != "soc,ocv_volts") {
        throw DataError("table line " + std::to_string(line_no) +
                        ": expected header 'soc,ocv_volts'");
      }
      header_seen = true;
      continue;
    }
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos) {
      throw DataError("table line " + std::to_string(line_no) + ": expected 2 fields");
    }
    t.soc.push_back(std::strtod(line.c_str(), nullptr));
    t.ocv_V.push_back(std::strtod(line.c_str() + comma + 1, nullptr));
  }
  if (!header_seen) throw DataError("table missing column header");
  t.extrapolated.assign(t.soc.size(), false);
  for (std::size_t j : ex_nodes) {
    if (j < t.extrapolated.size()) t.extrapolated[j] = true;
  }
  for (std::size_t j = 1; j < t.ocv_V.size(); ++j) {
    if (!(t.ocv_V[j] > t.ocv_V[j - 1])) ++t.monotone_violations;
  }
  return t;
}

inline void write_table_file(const OcvTable& t, const std::string& path,
                             const std::string& cell_id) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_table_csv(t, os, cell_id);
  if (!os.flush()) throw IoError("write failed for '" + path + "'");
}

// Full pipeline from a raw protocol log: capacities, Coulomb-counted SOC
// over the analysis window, scaled-regressor fit, and the model-free table
// on the raw (unscaled) trajectory.
struct OcvEstimation {
  AnalysisWindow window;
  TimeSeriesLog window_log;
  SocTrajectory trajectory;  // aligned with window_log
  OcvFit fit;
  OcvTable table;
};

inline OcvEstimation estimate_ocv(const TimeSeriesLog& log, double epsilon = kDefaultEpsilon,
                                  std::size_t table_nodes = kDefaultTableNodes) {
  OcvEstimation out;
  out.window = find_analysis_window(log);
  out.window_log = slice(log, out.window.first, out.window.count());
  out.trajectory =
      coulomb_count(out.window_log, out.window.capacity.qc_As, out.window.capacity.qd_As, 1.0);
  const DesignSystem d = build_design(out.window_log, out.trajectory.soc, epsilon);
  out.fit = fit_parameters(d);
  out.fit.params.cell_id = log.cell_id;
  out.table = build_table(out.window_log, out.trajectory.soc, table_nodes);
  return out;
}

}  // namespace ocvkit
