#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ocvkit/errors.hpp"
#include "ocvkit/log.hpp"

namespace ocvkit {

struct CapacityEstimate {
  double qc_As = 0.0;
  double qd_As = 0.0;
  double i_c_A = 0.0;   // charge-segment current (median)
  double i_d_A = 0.0;   // discharge-segment current (median, negative)
  SegmentView discharge;
  SegmentView charge;
  // Row index bounding each segment's span: the first record after the run,
  // where the current changed, or the run's last record when the log ends
  // mid-segment. The span t(bound) - t(first) is the time the segment's
  // current actually flowed.
  std::size_t discharge_bound = 0;
  std::size_t charge_bound = 0;
};

namespace detail {

inline double median_current(const TimeSeriesLog& log, const SegmentView& seg) {
  std::vector<double> v;
  v.reserve(seg.count);
  for (std::size_t k = seg.first; k < seg.end(); ++k) v.push_back(log.records[k].i_A);
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

inline bool constant_current(const TimeSeriesLog& log, const SegmentView& seg, double median) {
  const double tol = 0.001 * std::fabs(median);
  for (std::size_t k = seg.first; k < seg.end(); ++k) {
    if (std::fabs(log.records[k].i_A - median) > tol) return false;
  }
  return true;
}

}  // namespace detail

// Charge and discharge capacity from the log's constant-current segments:
// Q = |I| * t over each segment's span. Requires exactly one qualifying
// segment of each kind; segments whose current varies by more than 0.1% of
// its median (a CC-CV charge, for instance) do not qualify.
inline CapacityEstimate compute_capacity(const TimeSeriesLog& log) {
  log.validate();
  const auto segs = segments(log);
  CapacityEstimate out;
  bool have_d = false, have_c = false;
  bool rejected_d = false, rejected_c = false;
  for (const auto& seg : segs) {
    if (seg.mode != Mode::Discharge && seg.mode != Mode::Charge) continue;
    const double med = detail::median_current(log, seg);
    const bool is_discharge = seg.mode == Mode::Discharge;
    if (med == 0.0 || (is_discharge && med > 0.0) || (!is_discharge && med < 0.0)) {
      throw DataError("segment current sign disagrees with its mode label");
    }
    if (!detail::constant_current(log, seg, med)) {
      (is_discharge ? rejected_d : rejected_c) = true;
      continue;
    }
    if (is_discharge) {
      if (have_d) throw DataError("multiple constant-current discharge segments; expected one");
      have_d = true;
      out.discharge = seg;
      out.i_d_A = med;
    } else {
      if (have_c) throw DataError("multiple constant-current charge segments; expected one");
      have_c = true;
      out.charge = seg;
      out.i_c_A = med;
    }
  }
  if (!have_d) {
    throw DataError(rejected_d ? "discharge segment is not constant-current"
                               : "log has no discharge segment");
  }
  if (!have_c) {
    throw DataError(rejected_c ? "charge segment is not constant-current"
                               : "log has no charge segment");
  }

  auto span = [&](const SegmentView& seg, std::size_t& bound) {
    bound = seg.end() < log.records.size() ? seg.end() : seg.last();
    const double dt = log.records[bound].t_s - log.records[seg.first].t_s;
    if (!(dt > 0.0)) throw DataError("zero-length capacity segment");
    return dt;
  };
  const double t_d = span(out.discharge, out.discharge_bound);
  const double t_c = span(out.charge, out.charge_bound);
  out.qd_As = -out.i_d_A * t_d;
  out.qc_As = out.i_c_A * t_c;
  return out;
}

struct SocTrajectory {
  std::vector<double> soc;          // aligned one-to-one with log records
  std::size_t out_of_range = 0;     // samples outside [-0.01, 1.01]
};

// Coulomb counting: s(k+1) = s(k) + dt_k * i(k) / Q with Q chosen by the
// sign of i(k) and dt_k taken from the actual timestamps. Zero current
// contributes zero regardless of which Q would apply. SOC beyond
// [-0.01, 1.01] is counted as a data-quality warning, not an error.
inline SocTrajectory coulomb_count(const TimeSeriesLog& log, double qc_As, double qd_As,
                                   double s_initial = 1.0) {
  if (!(qc_As > 0.0) || !(qd_As > 0.0)) throw DataError("capacities must be positive");
  log.validate();
  SocTrajectory out;
  out.soc.reserve(log.records.size());
  double s = s_initial;
  auto flag = [&](double v) {
    if (v < -0.01 || v > 1.01) ++out.out_of_range;
  };
  if (!log.records.empty()) {
    out.soc.push_back(s);
    flag(s);
  }
  for (std::size_t k = 0; k + 1 < log.records.size(); ++k) {
    const double dt = log.records[k + 1].t_s - log.records[k].t_s;
    const double i = log.records[k].i_A;
    if (i > 0.0) {
      s += dt * i / qc_As;
    } else if (i < 0.0) {
      s += dt * i / qd_As;
    }
    out.soc.push_back(s);
    flag(s);
  }
  return out;
}

// The stretch of the log the estimation pipeline analyzes: from the first
// discharge-segment row through the row bounding the charge segment. The
// battery is full at the window's first row, so Coulomb counting anchors
// s = 1 there.
struct AnalysisWindow {
  CapacityEstimate capacity;
  std::size_t first = 0;
  std::size_t last = 0;  // inclusive

  std::size_t count() const { return last - first + 1; }
};

inline AnalysisWindow find_analysis_window(const TimeSeriesLog& log) {
  AnalysisWindow w;
  w.capacity = compute_capacity(log);
  w.first = std::min(w.capacity.discharge.first, w.capacity.charge.first);
  w.last = std::max(w.capacity.discharge_bound, w.capacity.charge_bound);
  return w;
}

}  // namespace ocvkit
