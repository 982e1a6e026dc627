#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ocvkit/errors.hpp"
#include "ocvkit/ocv_model.hpp"
#include "ocvkit/rng.hpp"

namespace ocvkit {

// Instantaneous hysteresis contribution. Resistive matches the estimation
// assumption h = i * R_h; ConstantMagnitude (h = M * sign(i)) is deliberately
// mismatched so the cancellation claims can be probed under model error.
struct Hysteresis {
  enum class Kind { Resistive, ConstantMagnitude };

  Kind kind = Kind::Resistive;
  double value = 0.0;  // R_h in ohms, or M in volts

  static Hysteresis resistive(double r_h_Ohm) { return {Kind::Resistive, r_h_Ohm}; }
  static Hysteresis constant_magnitude(double m_V) { return {Kind::ConstantMagnitude, m_V}; }

  double voltage(double i_A) const {
    if (kind == Kind::Resistive) return i_A * value;
    return i_A > 0.0 ? value : (i_A < 0.0 ? -value : 0.0);
  }
};

// Strictly increasing OCV-SOC ground-truth curve on [0,1]: either a
// piecewise-linear table or a generative eight-term parameter set.
class OcvCurve {
public:
  static OcvCurve from_table(std::vector<std::pair<double, double>> points) {
    OcvCurve c;
    if (points.size() < 2) throw ConfigError("OCV table needs at least two points");
    std::sort(points.begin(), points.end());
    c.s_.reserve(points.size());
    c.v_.reserve(points.size());
    for (const auto& [s, v] : points) {
      c.s_.push_back(s);
      c.v_.push_back(v);
    }
    if (c.s_.front() != 0.0 || c.s_.back() != 1.0) {
      throw ConfigError("OCV table must span soc 0 to 1 exactly");
    }
    for (std::size_t i = 1; i < c.s_.size(); ++i) {
      if (!(c.s_[i] > c.s_[i - 1])) throw ConfigError("OCV table soc values must be distinct");
      if (!(c.v_[i] > c.v_[i - 1])) {
        throw ConfigError("OCV table must be strictly increasing, violation near soc " +
                          format_double(c.s_[i]));
      }
    }
    return c;
  }

  static OcvCurve combined3(OcvParameters params) {
    OcvCurve c;
    params.validate();
    c.generative_ = true;
    c.params_ = std::move(params);
    // Monotonicity scanned on a fine grid; generative parameter sets that
    // dip anywhere are rejected up front.
    constexpr std::size_t kScan = 2000;
    double prev = evaluate_ocv(c.params_, 0.0);
    for (std::size_t i = 1; i <= kScan; ++i) {
      const double s = static_cast<double>(i) / kScan;
      const double v = evaluate_ocv(c.params_, s);
      if (!(v > prev)) {
        throw ConfigError("generative OCV parameters not strictly increasing near soc " +
                          format_double(s));
      }
      prev = v;
    }
    return c;
  }

  double value(double s) const {
    if (generative_) return evaluate_ocv(params_, s);
    if (s <= s_.front()) return v_.front();
    if (s >= s_.back()) return v_.back();
    const auto it = std::upper_bound(s_.begin(), s_.end(), s);
    const std::size_t hi = static_cast<std::size_t>(it - s_.begin());
    const std::size_t lo = hi - 1;
    const double w = (s - s_[lo]) / (s_[hi] - s_[lo]);
    return v_[lo] + w * (v_[hi] - v_[lo]);
  }

  double min_V() const { return value(0.0); }
  double max_V() const { return value(1.0); }
  bool generative() const { return generative_; }
  const OcvParameters& generative_params() const {
    if (!generative_) throw DataError("OCV curve is a table, not generative");
    return params_;
  }
  const std::vector<double>& table_soc() const {
    if (generative_) throw DataError("OCV curve is generative, not a table");
    return s_;
  }
  const std::vector<double>& table_V() const {
    if (generative_) throw DataError("OCV curve is generative, not a table");
    return v_;
  }

private:
  bool generative_ = false;
  std::vector<double> s_, v_;
  OcvParameters params_;
};

// Hand-tuned lithium-ion shape: steep below 1% SOC, a gentle top with a
// 4.7 mV rise over the final 0.38% of SOC.
inline std::vector<std::pair<double, double>> default_ocv_anchors() {
  return {{0.0000, 2.8860}, {0.0039, 2.9839}, {0.0100, 3.0200}, {0.0250, 3.0810},
          {0.0500, 3.1600}, {0.0750, 3.2180}, {0.1000, 3.2640}, {0.1500, 3.3360},
          {0.2000, 3.3940}, {0.2500, 3.4430}, {0.3000, 3.4870}, {0.3500, 3.5280},
          {0.4000, 3.5680}, {0.4500, 3.6080}, {0.5000, 3.6490}, {0.5500, 3.6920},
          {0.6000, 3.7380}, {0.6500, 3.7870}, {0.7000, 3.8390}, {0.7500, 3.8940},
          {0.8000, 3.9520}, {0.8500, 4.0130}, {0.9000, 4.0770}, {0.9500, 4.1300},
          {0.9800, 4.1620}, {0.9950, 4.1855}, {1.0000, 4.1917}};
}

// Default ground-truth curve: the anchor shape resampled onto 201 uniform
// nodes, matching the default table resolution used elsewhere.
inline OcvCurve default_ocv_curve() {
  const OcvCurve anchors = OcvCurve::from_table(default_ocv_anchors());
  std::vector<std::pair<double, double>> pts;
  pts.reserve(201);
  for (std::size_t j = 0; j <= 200; ++j) {
    const double s = static_cast<double>(j) / 200.0;
    pts.emplace_back(s, anchors.value(s));
  }
  return OcvCurve::from_table(std::move(pts));
}

// Equivalent-circuit ground truth: series resistance, SEI and charge-transfer
// RC branches, hysteresis, a strictly increasing OCV curve, voltage limits,
// and Gaussian voltage measurement noise.
struct BatteryGroundTruth {
  std::string cell_id = "cell";
  double capacity_As = 14400.0;  // 4 Ah
  double r_ohmic_Ohm = 0.05;
  double r_sei_Ohm = 0.03;
  double c_sei_F = 3000.0;
  double r_ct_Ohm = 0.02;
  double c_dl_F = 600.0;
  Hysteresis hysteresis = Hysteresis::resistive(0.02);
  OcvCurve true_ocv = default_ocv_curve();
  double ocv_min_V = 3.00;
  double ocv_max_V = 4.18;
  double noise_std_V = 0.0;
  // Voltage limits are normally inside the curve range so the relative-SOC
  // window is realizable; setting this lets closed-loop tests push the
  // limits past the rails deliberately.
  bool allow_limits_outside_curve = false;

  void validate() const {
    if (!(capacity_As > 0.0)) throw ConfigError("capacity_As must be positive");
    if (r_ohmic_Ohm < 0.0 || r_sei_Ohm < 0.0 || r_ct_Ohm < 0.0) {
      throw ConfigError("resistances must be non-negative");
    }
    if (!(c_sei_F > 0.0) || !(c_dl_F > 0.0)) throw ConfigError("capacitances must be positive");
    if (!(noise_std_V >= 0.0)) throw ConfigError("noise_std_V must be non-negative");
    if (!(ocv_min_V < ocv_max_V)) throw ConfigError("ocv_min_V must be below ocv_max_V");
    if (!allow_limits_outside_curve) {
      if (ocv_min_V < true_ocv.min_V() || ocv_max_V > true_ocv.max_V()) {
        throw ConfigError("voltage limits outside the OCV curve range; set "
                          "allow_limits_outside_curve to permit this");
      }
    }
  }

  // Sum of the series resistances; the R-int view with both RC branches
  // collapsed. Excludes hysteresis.
  double reduce_to_rint() const { return r_ohmic_Ohm + r_sei_Ohm + r_ct_Ohm; }

  static BatteryGroundTruth default_cell() {
    BatteryGroundTruth t;
    t.cell_id = "default-cell";
    t.noise_std_V = 0.0002;
    t.validate();
    return t;
  }

  // R-int configuration: RC branch resistances folded into the series term,
  // capacitances left benign.
  static BatteryGroundTruth rint_cell(double capacity_As, double r0_Ohm, Hysteresis hyst,
                                      OcvCurve curve, double ocv_min_V, double ocv_max_V,
                                      double noise_std_V = 0.0) {
    BatteryGroundTruth t;
    t.capacity_As = capacity_As;
    t.r_ohmic_Ohm = r0_Ohm;
    t.r_sei_Ohm = 0.0;
    t.r_ct_Ohm = 0.0;
    t.hysteresis = hyst;
    t.true_ocv = std::move(curve);
    t.ocv_min_V = ocv_min_V;
    t.ocv_max_V = ocv_max_V;
    t.noise_std_V = noise_std_V;
    return t;
  }
};

struct CellState {
  double soc_true = 1.0;
  double v_sei_V = 0.0;
  double v_dl_V = 0.0;
  double h_V = 0.0;
  double t_s = 0.0;
};

struct StepOutcome {
  CellState state;
  double terminal_voltage_V = 0.0;
  bool clamped = false;
};

namespace detail {

// Exact zero-order-hold RC branch update. R == 0 keeps the branch inert.
inline double rc_step(double v, double r_Ohm, double c_F, double i_A, double dt_s) {
  if (r_Ohm == 0.0) return 0.0;
  const double a = std::exp(-dt_s / (r_Ohm * c_F));
  return v * a + r_Ohm * (1.0 - a) * i_A;
}

}  // namespace detail

// Advances the cell by one zero-order-hold interval of current; the returned
// voltage is the noiseless model response at the end of the interval with
// the current still flowing. SOC clamps to [0,1]; clamping is reported,
// never silent.
inline StepOutcome step_noiseless(const CellState& state, const BatteryGroundTruth& truth,
                                  double i_A, double dt_s) {
  if (!std::isfinite(i_A)) throw DataError("step current is non-finite");
  if (!(dt_s > 0.0)) throw DataError("step dt must be positive");
  StepOutcome out;
  out.state = state;
  out.state.t_s = state.t_s + dt_s;
  double soc = state.soc_true + i_A * dt_s / truth.capacity_As;
  if (soc < 0.0) {
    soc = 0.0;
    out.clamped = true;
  } else if (soc > 1.0) {
    soc = 1.0;
    out.clamped = true;
  }
  out.state.soc_true = soc;
  out.state.v_sei_V = detail::rc_step(state.v_sei_V, truth.r_sei_Ohm, truth.c_sei_F, i_A, dt_s);
  out.state.v_dl_V = detail::rc_step(state.v_dl_V, truth.r_ct_Ohm, truth.c_dl_F, i_A, dt_s);
  out.state.h_V = truth.hysteresis.voltage(i_A);
  out.terminal_voltage_V = truth.true_ocv.value(out.state.soc_true) + out.state.h_V +
                           i_A * truth.r_ohmic_Ohm + out.state.v_sei_V + out.state.v_dl_V;
  return out;
}

// step_noiseless plus Gaussian measurement noise on the returned voltage.
inline StepOutcome step(const CellState& state, const BatteryGroundTruth& truth, double i_A,
                        double dt_s, Rng& rng) {
  StepOutcome out = step_noiseless(state, truth, i_A, dt_s);
  out.terminal_voltage_V += rng.normal(truth.noise_std_V);
  return out;
}

// Instantaneous terminal-voltage read with current i flowing, without
// advancing time or moving charge.
inline double measure_voltage(const CellState& state, const BatteryGroundTruth& truth, double i_A,
                              Rng& rng) {
  return truth.true_ocv.value(state.soc_true) + truth.hysteresis.voltage(i_A) +
         i_A * truth.r_ohmic_Ohm + state.v_sei_V + state.v_dl_V + rng.normal(truth.noise_std_V);
}

// Protocol-facing simulator backend.
class SimCell {
public:
  SimCell(BatteryGroundTruth truth, CellState initial, Rng rng)
      : truth_(std::move(truth)), state_(initial), rng_(rng) {
    truth_.validate();
  }

  double apply(double i_A, double dt_s) {
    StepOutcome out = step(state_, truth_, i_A, dt_s, rng_);
    state_ = out.state;
    if (out.clamped) ++clamp_events_;
    return out.terminal_voltage_V;
  }

  double measure(double i_A) { return measure_voltage(state_, truth_, i_A, rng_); }

  // Noiseless one-step voltage prediction; the CV regulator inverts this.
  double predict_voltage(double i_A, double dt_s) const {
    return step_noiseless(state_, truth_, i_A, dt_s).terminal_voltage_V;
  }

  double time_s() const { return state_.t_s; }
  const CellState& state() const { return state_; }
  const BatteryGroundTruth& truth() const { return truth_; }
  std::size_t clamp_events() const { return clamp_events_; }

private:
  BatteryGroundTruth truth_;
  CellState state_;
  Rng rng_;
  std::size_t clamp_events_ = 0;
};

}  // namespace ocvkit
