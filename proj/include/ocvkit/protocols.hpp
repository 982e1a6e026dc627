#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "ocvkit/errors.hpp"
#include "ocvkit/log.hpp"
#include "ocvkit/resistance.hpp"

// Protocol executors. Emission contract: every phase emits its own first row
// at its start time, carrying the current it is about to apply; a phase never
// emits a row at its own termination time, so consecutive phases share no
// timestamp and each record's current really does flow until the next record.
// Capacity spans and Coulomb closure are exact under this contract.

namespace ocvkit {

template <class T>
concept CellBackend = requires(T c, const T& k, double i, double dt) {
  c.apply(i, dt);
  { c.measure(i) } -> std::convertible_to<double>;
  { k.predict_voltage(i, dt) } -> std::convertible_to<double>;
  { k.time_s() } -> std::convertible_to<double>;
};

// Polled at control-step boundaries; true stops the run with a valid partial log.
using CancelFn = std::function<bool()>;

struct ChargeConfig {
  double i_cc_A = 0.0;
  double i_sd_A = 0.0;
  double ocv_max_V = 0.0;
  double ocv_min_V = 0.0;
  double r0_hat_Ohm = 0.0;
  double control_dt_s = 1.0;
  double max_phase_s = 1.0e6;

  double i_max_A() const { return (ocv_max_V - ocv_min_V) / r0_hat_Ohm; }
  // Mode-select threshold: a rested cell at or above this is already
  // sufficiently charged and skips the CC branch.
  double v_cv1_V() const { return ocv_max_V - i_cc_A * r0_hat_Ohm; }

  void validate() const {
    if (!(r0_hat_Ohm > 0.0)) throw ConfigError("r0_hat_Ohm must be positive");
    if (!(ocv_max_V > ocv_min_V)) throw ConfigError("ocv_max_V must exceed ocv_min_V");
    if (!(control_dt_s > 0.0)) throw ConfigError("control_dt_s must be positive");
    if (!(max_phase_s > 0.0)) throw ConfigError("max_phase_s must be positive");
    if (!(i_sd_A > 0.0)) throw ConfigError("i_sd_A must be positive");
    if (!(i_sd_A < i_cc_A)) throw ConfigError("i_sd_A must be less than i_cc_A");
    if (!(i_cc_A <= i_max_A())) {
      throw ConfigError("i_cc_A exceeds i_max = (ocv_max - ocv_min)/r0_hat");
    }
  }
};

struct PhaseStat {
  std::string name;
  double start_s = 0.0;
  double end_s = 0.0;
  std::size_t rows = 0;
};

struct ProtocolDiagnostics {
  bool cc_skipped = false;
  bool cv_clipped = false;  // some CV step wanted more than i_max
  bool cancelled = false;
  double temperature_C = 0.0;
  std::vector<PhaseStat> phases;

  const PhaseStat* phase(const std::string& name) const {
    for (const auto& p : phases) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }
};

class LogEmitter {
 public:
  explicit LogEmitter(std::string cell_id) { log_.cell_id = std::move(cell_id); }

  void emit(double t_s, double i_A, double v_V, Mode mode) {
    if (!log_.records.empty() && !(t_s > log_.records.back().t_s)) {
      throw ProtocolError("log emission is not strictly increasing in time");
    }
    log_.records.push_back({t_s, i_A, v_V, mode});
    if (v_V < min_v_) min_v_ = v_V;
    if (v_V > max_v_) max_v_ = v_V;
  }

  bool empty() const { return log_.records.empty(); }
  double last_t_s() const { return log_.records.back().t_s; }
  double min_v_V() const { return min_v_; }
  double max_v_V() const { return max_v_; }
  TimeSeriesLog take() { return std::move(log_); }

 private:
  TimeSeriesLog log_;
  double min_v_ = std::numeric_limits<double>::infinity();
  double max_v_ = -std::numeric_limits<double>::infinity();
};

namespace detail {

// Constant-current phase terminated by a predicate on the sampled voltage.
// The sample that trips `done` is never emitted; the next phase owns that
// timestamp. `emit_stride` is in control steps (1 = every step).
template <CellBackend Cell, class Done>
PhaseStat run_cc_phase(Cell& cell, LogEmitter& em, double i_A, Mode mode, double dt_s,
                       std::size_t emit_stride, double max_phase_s, const char* name, Done done,
                       const CancelFn* cancel, bool& cancelled,
                       double fault_above_V = std::numeric_limits<double>::infinity()) {
  PhaseStat st;
  st.name = name;
  st.start_s = cell.time_s();
  em.emit(cell.time_s(), i_A, cell.measure(i_A), mode);
  ++st.rows;
  int steps_above = 0;
  for (std::size_t k = 1;; ++k) {
    if (cancel && (*cancel)()) {
      cancelled = true;
      break;
    }
    cell.apply(i_A, dt_s);
    const double v = cell.measure(i_A);
    if (v >= fault_above_V) {
      if (++steps_above > 1) {
        throw ProtocolError(std::string(name) +
                            " phase held terminal voltage above the charge limit");
      }
    } else {
      steps_above = 0;
    }
    if (done(v)) break;
    if (k % emit_stride == 0) {
      em.emit(cell.time_s(), i_A, v, mode);
      ++st.rows;
    }
    if (cell.time_s() - st.start_s > max_phase_s) {
      throw ProtocolError(std::string(name) + " phase exceeded its duration guard");
    }
  }
  st.end_s = cell.time_s();
  return st;
}

// Zero-current phase of a fixed duration (must be a whole number of control steps).
template <CellBackend Cell>
PhaseStat run_rest_phase(Cell& cell, LogEmitter& em, double dt_s, std::size_t emit_stride,
                         double duration_s, const CancelFn* cancel, bool& cancelled) {
  PhaseStat st;
  st.name = "rest";
  st.start_s = cell.time_s();
  const double steps_f = duration_s / dt_s;
  const auto n = static_cast<std::size_t>(std::llround(steps_f));
  if (std::fabs(steps_f - static_cast<double>(n)) > 1e-9) {
    throw ConfigError("rest_s must be a whole number of control steps");
  }
  em.emit(cell.time_s(), 0.0, cell.measure(0.0), Mode::Rest);
  ++st.rows;
  for (std::size_t k = 1; k <= n; ++k) {
    if (cancel && (*cancel)()) {
      cancelled = true;
      break;
    }
    cell.apply(0.0, dt_s);
    const double v = cell.measure(0.0);
    if (k == n) break;
    if (k % emit_stride == 0) {
      em.emit(cell.time_s(), 0.0, v, Mode::Rest);
      ++st.rows;
    }
  }
  st.end_s = cell.time_s();
  return st;
}

// Largest current whose one-step voltage prediction stays at or below v_set.
// The prediction is nondecreasing in current, so bisection on [0, i_max]
// finds the regulation point; a constant-magnitude hysteresis jump at zero
// current simply lands the bracket on zero.
template <CellBackend Cell>
double pin_current(const Cell& cell, double v_set_V, double i_max_A, double dt_s,
                   bool& clipped) {
  if (cell.predict_voltage(i_max_A, dt_s) <= v_set_V) {
    clipped = true;
    return i_max_A;
  }
  if (cell.predict_voltage(0.0, dt_s) > v_set_V) return 0.0;
  double lo = 0.0;
  double hi = i_max_A;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (cell.predict_voltage(mid, dt_s) <= v_set_V) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

struct CvResult {
  PhaseStat stat;
  bool clipped = false;
};

// Constant-voltage hold at cfg.ocv_max_V. The row at each step carries the
// current about to be applied over that step. Ends when the regulation
// current falls below i_sd; that current is never applied.
template <CellBackend Cell>
CvResult run_cv_phase(Cell& cell, LogEmitter& em, const ChargeConfig& cfg,
                      std::size_t emit_stride, const CancelFn* cancel, bool& cancelled) {
  CvResult r;
  r.stat.name = "cv";
  r.stat.start_s = cell.time_s();
  const double i_max = cfg.i_max_A();
  for (std::size_t k = 0;; ++k) {
    if (cancel && (*cancel)()) {
      cancelled = true;
      break;
    }
    const double i = pin_current(cell, cfg.ocv_max_V, i_max, cfg.control_dt_s, r.clipped);
    if (i < cfg.i_sd_A) break;
    if (k % emit_stride == 0) {
      em.emit(cell.time_s(), i, cell.measure(i), Mode::Charge);
      ++r.stat.rows;
    }
    cell.apply(i, cfg.control_dt_s);
    if (cell.time_s() - r.stat.start_s > cfg.max_phase_s) {
      throw ProtocolError("cv phase exceeded its duration guard");
    }
  }
  r.stat.end_s = cell.time_s();
  return r;
}

// Resistance pulse train at the profile's own sample spacing.
template <CellBackend Cell>
PhaseStat run_pulse_phase(Cell& cell, LogEmitter& em, const PulseProfile& profile,
                          const CancelFn* cancel, bool& cancelled) {
  PhaseStat st;
  st.name = "pulse";
  st.start_s = cell.time_s();
  const auto& cur = profile.currents_A;
  em.emit(cell.time_s(), cur[0], cell.measure(cur[0]), Mode::Pulse);
  ++st.rows;
  for (std::size_t k = 0; k < cur.size(); ++k) {
    if (cancel && (*cancel)()) {
      cancelled = true;
      break;
    }
    cell.apply(cur[k], profile.dt_s);
    if (k + 1 < cur.size()) {
      em.emit(cell.time_s(), cur[k + 1], cell.measure(cur[k + 1]), Mode::Pulse);
      ++st.rows;
    }
  }
  st.end_s = cell.time_s();
  return st;
}

// Algorithm body shared by the standalone command and the OCV test: skip CC
// when the rested cell is already above v_CV1, otherwise CC to ocv_max, then
// CV hold until the current decays below i_sd.
template <CellBackend Cell>
void run_cccv(Cell& cell, LogEmitter& em, const ChargeConfig& cfg, std::size_t emit_stride,
              ProtocolDiagnostics& diag, const CancelFn* cancel, bool& cancelled) {
  const double v_rest = cell.measure(0.0);
  if (v_rest < cfg.v_cv1_V()) {
    auto done = [&](double v) { return v >= cfg.ocv_max_V; };
    diag.phases.push_back(run_cc_phase(cell, em, cfg.i_cc_A, Mode::Charge, cfg.control_dt_s,
                                       emit_stride, cfg.max_phase_s, "cc", done, cancel,
                                       cancelled, cfg.ocv_max_V));
  } else {
    diag.cc_skipped = true;
  }
  if (cancelled) return;
  CvResult cv = run_cv_phase(cell, em, cfg, emit_stride, cancel, cancelled);
  diag.cv_clipped = diag.cv_clipped || cv.clipped;
  diag.phases.push_back(cv.stat);
}

// Marks when current stopped; skipped only if that instant already has a row.
template <CellBackend Cell>
void emit_closing_rest(Cell& cell, LogEmitter& em) {
  if (em.empty() || cell.time_s() > em.last_t_s()) {
    em.emit(cell.time_s(), 0.0, cell.measure(0.0), Mode::Rest);
  }
}

}  // namespace detail

struct ChargeOutcome {
  TimeSeriesLog log;
  ProtocolDiagnostics diagnostics;
};

// CC-CV charge, logged at every control step.
template <CellBackend Cell>
ChargeOutcome cccv_charge(Cell& cell, const ChargeConfig& cfg, const std::string& cell_id,
                          const CancelFn* cancel = nullptr) {
  cfg.validate();
  ChargeOutcome out;
  LogEmitter em(cell_id);
  bool cancelled = false;
  detail::run_cccv(cell, em, cfg, 1, out.diagnostics, cancel, cancelled);
  detail::emit_closing_rest(cell, em);
  out.diagnostics.cancelled = cancelled;
  out.log = em.take();
  return out;
}

struct OcvTestConfig {
  double n_rate = 64.0;  // branch current is capacity / (3600 * n_rate)
  double temperature_C = 25.0;
  double sample_dt_s = 60.0;
  double control_dt_s = 1.0;
  double rest_s = 3600.0;
  PulseKind pulse_kind = PulseKind::DischargeAtFull;
  double pulse_amplitude_A = 1.0;
  double pulse_dt_s = kDefaultPulseDt;
  std::size_t pulse_cycles = 1;
  double max_phase_s = 1.0e6;

  std::size_t emit_stride() const {
    const double ratio = sample_dt_s / control_dt_s;
    const auto stride = static_cast<std::size_t>(std::llround(ratio));
    if (stride == 0 || std::fabs(ratio - static_cast<double>(stride)) > 1e-9) {
      throw ConfigError("sample_dt_s must be a whole multiple of control_dt_s");
    }
    return stride;
  }

  void validate() const {
    if (!(n_rate > 0.0)) throw ConfigError("n_rate must be positive");
    if (!(sample_dt_s > 0.0)) throw ConfigError("sample_dt_s must be positive");
    if (!(control_dt_s > 0.0)) throw ConfigError("control_dt_s must be positive");
    if (!(rest_s >= 0.0)) throw ConfigError("rest_s must be non-negative");
    if (!(max_phase_s > 0.0)) throw ConfigError("max_phase_s must be positive");
    (void)emit_stride();
    (void)generate_pulse(pulse_kind, pulse_amplitude_A, pulse_dt_s, pulse_cycles);
  }
};

// What the protocol is told about the cell under test. r0_hat is the prior
// resistance estimate the charger uses for v_CV1 and the current ceiling.
struct ProtocolCellInfo {
  std::string cell_id = "cell";
  double capacity_As = 0.0;
  double ocv_min_V = 0.0;
  double ocv_max_V = 0.0;
  double r0_hat_Ohm = 0.0;

  void validate() const {
    if (cell_id.empty()) throw ConfigError("cell_id must be non-empty");
    if (!(capacity_As > 0.0)) throw ConfigError("capacity_As must be positive");
    if (!(ocv_max_V > ocv_min_V)) throw ConfigError("ocv_max_V must exceed ocv_min_V");
    if (!(r0_hat_Ohm > 0.0)) throw ConfigError("r0_hat_Ohm must be positive");
  }
};

struct OcvTestOutcome {
  TimeSeriesLog log;
  ProtocolDiagnostics diagnostics;
};

// Full data-collection run: CC-CV precharge, rest, low-rate discharge to
// ocv_min, low-rate charge to ocv_max, rest, resistance pulse train. The
// discharge and charge branches are logged on the sample grid; the precharge
// runs at full control rate and the pulses at their own spacing.
template <CellBackend Cell>
OcvTestOutcome low_rate_ocv_test(Cell& cell, const ProtocolCellInfo& info,
                                 const OcvTestConfig& cfg, const CancelFn* cancel = nullptr) {
  info.validate();
  cfg.validate();
  const double i_1c = info.capacity_As / 3600.0;
  const double i_branch = i_1c / cfg.n_rate;
  ChargeConfig charge_cfg;
  charge_cfg.i_cc_A = i_1c;
  charge_cfg.i_sd_A = i_branch;
  charge_cfg.ocv_max_V = info.ocv_max_V;
  charge_cfg.ocv_min_V = info.ocv_min_V;
  charge_cfg.r0_hat_Ohm = info.r0_hat_Ohm;
  charge_cfg.control_dt_s = cfg.control_dt_s;
  charge_cfg.max_phase_s = cfg.max_phase_s;
  charge_cfg.validate();

  OcvTestOutcome out;
  ProtocolDiagnostics& diag = out.diagnostics;
  diag.temperature_C = cfg.temperature_C;  // recorded setpoint; the model is isothermal
  LogEmitter em(info.cell_id);
  bool cancelled = false;
  const std::size_t stride = cfg.emit_stride();

  detail::run_cccv(cell, em, charge_cfg, 1, diag, cancel, cancelled);
  if (!cancelled) {
    diag.phases.push_back(
        detail::run_rest_phase(cell, em, cfg.control_dt_s, stride, cfg.rest_s, cancel, cancelled));
  }
  if (!cancelled) {
    auto done = [&](double v) { return v <= info.ocv_min_V; };
    diag.phases.push_back(detail::run_cc_phase(cell, em, -i_branch, Mode::Discharge,
                                               cfg.control_dt_s, stride, cfg.max_phase_s,
                                               "discharge", done, cancel, cancelled));
  }
  if (!cancelled) {
    auto done = [&](double v) { return v >= info.ocv_max_V; };
    diag.phases.push_back(detail::run_cc_phase(cell, em, i_branch, Mode::Charge,
                                               cfg.control_dt_s, stride, cfg.max_phase_s,
                                               "charge", done, cancel, cancelled));
  }
  if (!cancelled) {
    diag.phases.push_back(
        detail::run_rest_phase(cell, em, cfg.control_dt_s, stride, cfg.rest_s, cancel, cancelled));
  }
  if (!cancelled) {
    const PulseProfile pulse =
        generate_pulse(cfg.pulse_kind, cfg.pulse_amplitude_A, cfg.pulse_dt_s, cfg.pulse_cycles);
    diag.phases.push_back(detail::run_pulse_phase(cell, em, pulse, cancel, cancelled));
  }
  detail::emit_closing_rest(cell, em);
  diag.cancelled = cancelled;
  out.log = em.take();
  return out;
}

}  // namespace ocvkit
