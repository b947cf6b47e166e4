#pragma once

// Variable-rate inference control: trailing-window event-rate estimation, an
// online affine inference-cost model (RLS with forgetting), a conservative
// base step from the latency budgets, a PID correction on the window-latency
// error, convex blending, and history-size co-adaptation.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "evstream/errors.hpp"
#include "evstream/rng.hpp"

namespace evs {

struct ControllerConfig {
  double l_win_target = 1e-3;    // window-latency budget, seconds
  double l_inf_target = 5e-3;    // inference-latency budget, seconds
  double k_p = 0.5;              // PID gains, dimensionless after rate normalization
  double k_i = 0.05;
  double k_d = 0.1;
  double lambda = 0.5;           // blend weight toward the base step
  std::uint64_t s_min = 16;      // step clamp, events
  std::uint64_t s_max = 8192;
  std::uint64_t h_base = 256;    // baseline history size
  double integral_clamp = 0.1;   // |accumulated error| cap, seconds
  double rate_window = 0.01;     // rate-estimation window, seconds
  double rls_forget = 0.99;      // forgetting factor

  void validate() const {
    if (s_min < 1 || s_min > s_max) throw ValidationError("require 1 <= s_min <= s_max");
    if (l_win_target <= 0.0 || l_inf_target <= 0.0)
      throw ValidationError("latency budgets must be > 0");
    if (lambda < 0.0 || lambda > 1.0) throw ValidationError("lambda must lie in [0, 1]");
    if (rate_window <= 0.0) throw ValidationError("rate_window must be > 0");
    if (rls_forget <= 0.9 || rls_forget > 1.0)
      throw ValidationError("rls_forget must lie in (0.9, 1]");
    if (integral_clamp < 0.0) throw ValidationError("integral_clamp must be >= 0");
    if (h_base < 1) throw ValidationError("h_base must be >= 1");
  }
};

// Online affine fit T_inf(s) = a + b*s via recursive least squares in
// information form: phi accumulates forgetting-weighted x x^T, z accumulates
// x*y, for regressor x = [1, s]. Priors hold until 5 samples arrive; the
// slope is projected to b >= 0 afterwards.
class LatencyModel {
 public:
  explicit LatencyModel(double forget = 0.99) : forget_(forget) {}

  void update(double s, double t_measured) {
    if (t_measured < 0.0) throw ValidationError("measured latency must be >= 0");
    const double x0 = 1.0, x1 = s;
    phi00_ = forget_ * phi00_ + x0 * x0;
    phi01_ = forget_ * phi01_ + x0 * x1;
    phi11_ = forget_ * phi11_ + x1 * x1;
    z0_ = forget_ * z0_ + x0 * t_measured;
    z1_ = forget_ * z1_ + x1 * t_measured;
    ++samples_;
    solve();
  }

  double a() const { return samples_ < kWarmup ? kPriorA : a_; }
  double b() const { return samples_ < kWarmup ? kPriorB : b_; }
  double predict(double s) const { return a() + b() * s; }
  std::uint64_t samples() const { return samples_; }
  bool warm() const { return samples_ >= kWarmup; }

 private:
  static constexpr std::uint64_t kWarmup = 5;
  static constexpr double kPriorA = 1e-3;
  static constexpr double kPriorB = 1e-6;

  void solve() {
    const double det = phi00_ * phi11_ - phi01_ * phi01_;
    // Rank-deficient (constant regressor): fall back to the mean as a flat fit.
    if (std::abs(det) <= 1e-12 * std::abs(phi00_ * phi11_) || det == 0.0) {
      a_ = phi00_ > 0.0 ? z0_ / phi00_ : kPriorA;
      b_ = 0.0;
      return;
    }
    a_ = (phi11_ * z0_ - phi01_ * z1_) / det;
    b_ = (phi00_ * z1_ - phi01_ * z0_) / det;
    if (b_ < 0.0) b_ = 0.0;
  }

  double forget_;
  double phi00_ = 0.0, phi01_ = 0.0, phi11_ = 0.0;
  double z0_ = 0.0, z1_ = 0.0;
  double a_ = kPriorA, b_ = kPriorB;
  std::uint64_t samples_ = 0;
};

struct ControllerState {
  std::uint64_t step = 16;       // s_t, events per chunk
  std::uint64_t history = 256;   // H_t
  double integral = 0.0;         // accumulated error, seconds
  double prev_error = 0.0;       // seconds
  double last_t_inf = 0.0;       // seconds

  static ControllerState initial(const ControllerConfig& cfg) {
    ControllerState st;
    st.step = cfg.s_min;
    st.history = cfg.h_base;
    return st;
  }
};

struct LatencyRecord {
  double l_e = 0.0;  // event-formation latency, recorded as 0
  double l_s = 0.0;  // sampling latency, seconds
  double l_i = 0.0;  // inference latency, seconds
  double total = 0.0;
};

inline LatencyRecord make_latency_record(double l_s, double l_i) {
  LatencyRecord r;
  r.l_s = l_s;
  r.l_i = l_i;
  r.total = r.l_e + r.l_s + r.l_i;  // identity holds by construction
  return r;
}

// Events within the trailing window, divided by the window; floored at
// 1 ev/s so downstream divisions stay finite. Timestamps ascend.
inline double estimate_rate(std::span<const std::uint64_t> t_us, std::uint64_t now_us,
                            double rate_window) {
  if (rate_window <= 0.0) throw ValidationError("rate_window must be > 0");
  const double window_us = rate_window * 1e6;
  const double lo = static_cast<double>(now_us) - window_us;
  std::size_t count = 0;
  for (std::size_t i = t_us.size(); i-- > 0;) {
    const double t = static_cast<double>(t_us[i]);
    if (t > static_cast<double>(now_us)) continue;
    if (t < lo) break;
    ++count;
  }
  const double rate = static_cast<double>(count) / rate_window;
  return rate < 1.0 ? 1.0 : rate;
}

inline double predict_window_latency(double s, double rate) { return s / rate; }

namespace detail {

inline std::uint64_t clamp_step(double s, const ControllerConfig& cfg) {
  if (!(s > 0.0)) return cfg.s_min;  // also catches NaN
  if (s >= static_cast<double>(cfg.s_max)) return cfg.s_max;
  const auto v = static_cast<std::uint64_t>(s);
  return v < cfg.s_min ? cfg.s_min : v;
}

}  // namespace detail

// s_0 = floor(min(R*L_win*, s_cap)); the cap spends the remaining inference
// budget at the modeled marginal cost, collapsing to s_min when the fixed
// cost alone exceeds the budget.
inline std::uint64_t base_step(double rate, const LatencyModel& model,
                               const ControllerConfig& cfg) {
  double cap;
  if (model.a() >= cfg.l_inf_target) {
    cap = static_cast<double>(cfg.s_min);
  } else if (model.b() > 0.0) {
    cap = std::floor((cfg.l_inf_target - model.a()) / model.b());
  } else {
    cap = static_cast<double>(cfg.s_max);
  }
  const double s0 = std::floor(std::min(rate * cfg.l_win_target, cap));
  return detail::clamp_step(s0, cfg);
}

// One PID update on the window-latency error; the error integral is clamped
// (anti-windup) and the correction is scaled by the rate so gains stay
// dimensionless.
inline std::uint64_t pid_step(ControllerState& state, double rate,
                              const ControllerConfig& cfg) {
  const double error = cfg.l_win_target - static_cast<double>(state.step) / rate;
  state.integral += error;
  if (state.integral > cfg.integral_clamp) state.integral = cfg.integral_clamp;
  if (state.integral < -cfg.integral_clamp) state.integral = -cfg.integral_clamp;
  const double derivative = error - state.prev_error;
  state.prev_error = error;
  const double correction =
      (cfg.k_p * error + cfg.k_i * state.integral + cfg.k_d * derivative) * rate;
  const double s = std::round(static_cast<double>(state.step) + correction);
  return detail::clamp_step(s, cfg);
}

inline std::uint64_t blend_step(std::uint64_t s_base, std::uint64_t s_pid,
                                const ControllerConfig& cfg) {
  const double s = std::round(cfg.lambda * static_cast<double>(s_base) +
                              (1.0 - cfg.lambda) * static_cast<double>(s_pid));
  return detail::clamp_step(s, cfg);
}

// H = round(H_base * s_min / max(s, 1)), floored at the KNN neighbor count.
inline std::uint64_t adapt_history(std::uint64_t s_next, std::uint32_t knn_k,
                                   const ControllerConfig& cfg) {
  const double ratio = static_cast<double>(cfg.h_base) * static_cast<double>(cfg.s_min) /
                       static_cast<double>(s_next < 1 ? 1 : s_next);
  auto h = static_cast<std::uint64_t>(std::round(ratio));
  if (h < knn_k) h = knn_k;
  if (h < 1) h = 1;
  return h;
}

struct ControlDecision {
  std::uint64_t s_next = 0;
  std::uint64_t h_next = 0;
  LatencyRecord record;
};

// Full per-chunk update: refresh the cost model with the measured inference
// time, form base and PID steps, blend, adapt the history, and account the
// chunk's latency. l_s_measured is the chunk's sampling latency as observed
// by the caller; knn_k keeps the history large enough for the encoder.
inline ControlDecision control_tick(ControllerState& state, double rate,
                                    double t_inf_measured, double l_s_measured,
                                    std::uint32_t knn_k, LatencyModel& model,
                                    const ControllerConfig& cfg) {
  model.update(static_cast<double>(state.step), t_inf_measured);
  state.last_t_inf = t_inf_measured;
  const std::uint64_t s0 = base_step(rate, model, cfg);
  const std::uint64_t s_pid = pid_step(state, rate, cfg);
  ControlDecision d;
  d.s_next = blend_step(s0, s_pid, cfg);
  d.h_next = adapt_history(d.s_next, knn_k, cfg);
  d.record = make_latency_record(l_s_measured, t_inf_measured);
  state.step = d.s_next;
  state.history = d.h_next;
  return d;
}

// Deterministic inference-time source for controller tests: T(s) = a + b*s
// plus optional Gaussian noise.
class SimulatedClock {
 public:
  SimulatedClock(double a, double b, double noise_sigma, std::uint64_t seed)
      : a_(a), b_(b), sigma_(noise_sigma), rng_(seed) {}

  double measure(double s) {
    double t = a_ + b_ * s;
    if (sigma_ > 0.0) t += rng_.normal(0.0, sigma_);
    return t < 0.0 ? 0.0 : t;
  }

 private:
  double a_, b_, sigma_;
  Rng rng_;
};

// Wall-clock timer for real runs; accumulated total never decreases.
class WallTimer {
 public:
  void start() { t0_ = std::chrono::steady_clock::now(); }

  double stop() {
    const auto t1 = std::chrono::steady_clock::now();
    const double sec = std::chrono::duration<double>(t1 - t0_).count();
    const double clamped = sec < 0.0 ? 0.0 : sec;
    total_ += clamped;
    return clamped;
  }

  double total() const { return total_; }

 private:
  std::chrono::steady_clock::time_point t0_{};
  double total_ = 0.0;
};

}  // namespace evs
