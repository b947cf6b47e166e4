#pragma once

// Event data model, synthetic stream generation and chunk iteration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "evstream/errors.hpp"
#include "evstream/rng.hpp"

namespace evs {

struct SensorGeometry {
  std::uint16_t width = 0;
  std::uint16_t height = 0;

  std::uint64_t area() const {
    return static_cast<std::uint64_t>(width) * static_cast<std::uint64_t>(height);
  }

  void validate() const {
    if (width == 0 || height == 0)
      throw ValidationError("sensor geometry must have positive width and height");
  }

  bool operator==(const SensorGeometry&) const = default;
};

// One asynchronous sensor event. Timestamps are integer microseconds; all
// latency math converts to seconds as doubles.
struct Event {
  std::uint64_t t_us = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;  // polarity, -1 or +1

  bool operator==(const Event&) const = default;
};

struct LabeledEvent {
  Event event;
  std::uint8_t label = 0;  // 0 = background, 1 = target

  bool operator==(const LabeledEvent&) const = default;
};

// Parametric target path: start + velocity * t, plus optional sinusoidal
// jitter applied perpendicular to the velocity (along y when stationary).
struct Trajectory {
  double start_x = 0.0;
  double start_y = 0.0;
  double vel_x = 0.0;  // pixels / second
  double vel_y = 0.0;
  double jitter_amp = 0.0;  // pixels
  double jitter_hz = 5.0;

  void position(double t_s, double& px, double& py) const {
    px = start_x + vel_x * t_s;
    py = start_y + vel_y * t_s;
    if (jitter_amp != 0.0) {
      const double j = jitter_amp * std::sin(6.283185307179586 * jitter_hz * t_s);
      const double speed = std::hypot(vel_x, vel_y);
      if (speed > 0.0) {
        px += -vel_y / speed * j;
        py += vel_x / speed * j;
      } else {
        py += j;
      }
    }
  }
};

struct GeneratorConfig {
  SensorGeometry geometry;
  double duration = 1.0;          // seconds
  double background_rate = 0.0;   // events/s, total over the sensor
  double target_rate = 0.0;       // events/s along the trajectory
  Trajectory trajectory;
  double target_sigma = 1.0;      // pixels
  std::uint64_t seed = 1;

  void validate() const {
    geometry.validate();
    if (duration <= 0.0) throw ValidationError("generator duration must be > 0");
    if (background_rate < 0.0 || target_rate < 0.0)
      throw ValidationError("generator rates must be >= 0");
  }
};

namespace detail {

inline std::uint16_t clamp_pixel(double v, std::uint16_t extent) {
  const double r = std::round(v);
  if (r <= 0.0) return 0;
  if (r >= static_cast<double>(extent - 1)) return extent - 1;
  return static_cast<std::uint16_t>(r);
}

}  // namespace detail

// Homogeneous Poisson background (uniform pixels, random polarity) plus a
// Poisson target process along the trajectory with isotropic Gaussian pixel
// offsets. Offsets are truncated at 4 sigma per axis so the label-consistency
// invariant is exact, then the pixel is clamped to the sensor. Output is
// sorted by time; ties keep generation order with background first.
inline std::vector<LabeledEvent> generate_stream(const GeneratorConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::vector<LabeledEvent> out;

  if (cfg.background_rate > 0.0) {
    double t = rng.exponential(cfg.background_rate);
    while (t < cfg.duration) {
      LabeledEvent le;
      le.event.t_us = static_cast<std::uint64_t>(t * 1e6);
      le.event.x = static_cast<std::uint16_t>(
          std::min<double>(std::floor(rng.uniform() * cfg.geometry.width),
                           cfg.geometry.width - 1));
      le.event.y = static_cast<std::uint16_t>(
          std::min<double>(std::floor(rng.uniform() * cfg.geometry.height),
                           cfg.geometry.height - 1));
      le.event.p = static_cast<std::int8_t>(rng.sign());
      le.label = 0;
      out.push_back(le);
      t += rng.exponential(cfg.background_rate);
    }
  }

  if (cfg.target_rate > 0.0) {
    const double cap = 4.0 * cfg.target_sigma;
    double t = rng.exponential(cfg.target_rate);
    while (t < cfg.duration) {
      double cx = 0.0, cy = 0.0;
      cfg.trajectory.position(t, cx, cy);
      const double dx = std::clamp(rng.normal(0.0, cfg.target_sigma), -cap, cap);
      const double dy = std::clamp(rng.normal(0.0, cfg.target_sigma), -cap, cap);
      LabeledEvent le;
      le.event.t_us = static_cast<std::uint64_t>(t * 1e6);
      le.event.x = detail::clamp_pixel(cx + dx, cfg.geometry.width);
      le.event.y = detail::clamp_pixel(cy + dy, cfg.geometry.height);
      le.event.p = static_cast<std::int8_t>(rng.sign());
      le.label = 1;
      out.push_back(le);
      t += rng.exponential(cfg.target_rate);
    }
  }

  std::stable_sort(out.begin(), out.end(),
                   [](const LabeledEvent& a, const LabeledEvent& b) {
                     return a.event.t_us < b.event.t_us;
                   });
  return out;
}

// Sequential chunk iterator. Streams are immutable; one cursor per consumer.
class StreamCursor {
 public:
  explicit StreamCursor(std::span<const LabeledEvent> events) : events_(events) {}

  // Next s events in stream order, fewer at end of stream. Empty chunk
  // signals exhaustion.
  std::span<const LabeledEvent> take_chunk(std::size_t s) {
    if (s < 1) throw ValidationError("chunk step size must be >= 1");
    const std::size_t n = std::min(s, events_.size() - pos_);
    auto chunk = events_.subspan(pos_, n);
    pos_ += n;
    return chunk;
  }

  bool exhausted() const { return pos_ >= events_.size(); }
  std::size_t position() const { return pos_; }

 private:
  std::span<const LabeledEvent> events_;
  std::size_t pos_ = 0;
};

}  // namespace evs
