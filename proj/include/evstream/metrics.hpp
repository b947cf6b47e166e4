#pragma once

// Point-level confusion metrics, window-level object-compatible detection
// metrics (rasterize, 8-connected components, coverage threshold), and the
// focal loss. All 0/0 ratios report 0 with a degeneracy flag so aggregation
// never poisons totals. History-padded (ignored) rows are excluded from
// every count and from the loss.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "evstream/errors.hpp"
#include "evstream/events.hpp"

namespace evs {

struct PointTally {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::uint64_t n_bg() const { return fp + tn; }
  std::uint64_t total() const { return tp + fp + fn + tn; }
};

struct PointMetrics {
  double pd = 0.0;       // TP / (TP + FN)
  double fa = 0.0;       // FP / N_bg
  double iou_pos = 0.0;  // TP / (TP + FP + FN)
  double prec = 0.0;     // TP / (TP + FP)
  double acc = 0.0;      // (TP + TN) / total
  bool pd_degenerate = false;
  bool fa_degenerate = false;
  bool iou_degenerate = false;
  bool prec_degenerate = false;
  bool acc_degenerate = false;
  PointTally tally;
};

namespace detail {

inline double safe_ratio(double num, double den, bool& degenerate) {
  if (den == 0.0) {
    degenerate = true;
    return 0.0;
  }
  return num / den;
}

}  // namespace detail

inline PointMetrics point_metrics(std::span<const std::uint8_t> predictions,
                                  std::span<const std::uint8_t> labels,
                                  std::span<const std::uint8_t> ignore) {
  if (predictions.size() != labels.size() ||
      (!ignore.empty() && ignore.size() != labels.size()))
    throw ValidationError("point metrics length mismatch");
  PointMetrics m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!ignore.empty() && ignore[i]) continue;
    const bool pred = predictions[i] != 0;
    const bool truth = labels[i] != 0;
    if (pred && truth) ++m.tally.tp;
    else if (pred && !truth) ++m.tally.fp;
    else if (!pred && truth) ++m.tally.fn;
    else ++m.tally.tn;
  }
  const auto& t = m.tally;
  m.pd = detail::safe_ratio(static_cast<double>(t.tp), static_cast<double>(t.tp + t.fn), m.pd_degenerate);
  m.fa = detail::safe_ratio(static_cast<double>(t.fp), static_cast<double>(t.n_bg()), m.fa_degenerate);
  m.iou_pos = detail::safe_ratio(static_cast<double>(t.tp), static_cast<double>(t.tp + t.fp + t.fn), m.iou_degenerate);
  m.prec = detail::safe_ratio(static_cast<double>(t.tp), static_cast<double>(t.tp + t.fp), m.prec_degenerate);
  m.acc = detail::safe_ratio(static_cast<double>(t.tp + t.tn), static_cast<double>(t.total()), m.acc_degenerate);
  return m;
}

struct WindowEvalConfig {
  double bin_duration = 0.05;  // seconds per bin
  SensorGeometry geometry;
  double tau_c = 0.5;          // inclusive coverage threshold

  void validate() const {
    if (bin_duration <= 0.0) throw ValidationError("bin_duration must be > 0");
    if (tau_c <= 0.0 || tau_c > 1.0) throw ValidationError("tau_c must lie in (0, 1]");
    geometry.validate();
  }
};

struct ObjectTally {
  std::uint64_t n_obj = 0, n_det = 0, n_fp_comp = 0, n_bins = 0;
};

// Pixel set to 1 iff at least one selected event lands there.
inline std::vector<std::uint8_t> rasterize(std::span<const LabeledEvent> events,
                                           std::span<const std::uint8_t> select,
                                           const SensorGeometry& geometry) {
  if (select.size() != events.size()) throw ValidationError("rasterize mask length mismatch");
  std::vector<std::uint8_t> grid(geometry.area(), 0);
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (!select[i]) continue;
    const auto& e = events[i].event;
    if (e.x >= geometry.width || e.y >= geometry.height)
      throw ValidationError("event coordinate outside sensor geometry");
    grid[static_cast<std::size_t>(e.y) * geometry.width + e.x] = 1;
  }
  return grid;
}

// Maximal 8-connected components of positive pixels, each a sorted list of
// linear indices; components ordered by their smallest index.
inline std::vector<std::vector<std::uint32_t>> connected_components_8(
    std::span<const std::uint8_t> grid, std::uint16_t width, std::uint16_t height) {
  if (grid.size() != static_cast<std::size_t>(width) * height)
    throw ValidationError("grid size does not match geometry");
  std::vector<std::vector<std::uint32_t>> components;
  std::vector<std::uint8_t> seen(grid.size(), 0);
  std::vector<std::uint32_t> stack;
  for (std::size_t start = 0; start < grid.size(); ++start) {
    if (!grid[start] || seen[start]) continue;
    std::vector<std::uint32_t> comp;
    stack.assign(1, static_cast<std::uint32_t>(start));
    seen[start] = 1;
    while (!stack.empty()) {
      const std::uint32_t idx = stack.back();
      stack.pop_back();
      comp.push_back(idx);
      const std::int64_t cx = idx % width;
      const std::int64_t cy = idx / width;
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const std::int64_t nx = cx + dx;
          const std::int64_t ny = cy + dy;
          if (nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
          const auto n = static_cast<std::size_t>(ny * width + nx);
          if (!grid[n] || seen[n]) continue;
          seen[n] = 1;
          stack.push_back(static_cast<std::uint32_t>(n));
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    components.push_back(std::move(comp));
  }
  return components;
}

struct WindowMetrics {
  double pd = 0.0;          // N_det / N_obj
  double fa_density = 0.0;  // N_fp_comp / (N_bins * W * H)
  bool pd_degenerate = false;
  bool fa_degenerate = false;
  ObjectTally tally;
};

// Per consecutive time bin: ground-truth objects are the components of the
// GT-positive raster; an object is detected iff the predicted raster covers
// at least tau_c of its pixels (inclusive); a predicted component is a false
// positive iff it overlaps zero GT-positive pixels.
inline WindowMetrics window_metrics(std::span<const LabeledEvent> stream,
                                    std::span<const std::uint8_t> predictions,
                                    std::span<const std::uint8_t> ignore,
                                    const WindowEvalConfig& cfg) {
  cfg.validate();
  if (predictions.size() != stream.size() ||
      (!ignore.empty() && ignore.size() != stream.size()))
    throw ValidationError("window metrics length mismatch");
  WindowMetrics m;
  if (stream.empty()) {
    m.pd_degenerate = true;
    m.fa_degenerate = true;
    return m;
  }

  const double bin_us = cfg.bin_duration * 1e6;
  const std::uint64_t t0 = stream.front().event.t_us;
  const std::uint16_t w = cfg.geometry.width;
  const std::uint16_t h = cfg.geometry.height;

  std::size_t i = 0;
  std::uint64_t bin_index = 0;
  while (i < stream.size()) {
    const auto bin_of = [&](std::size_t j) {
      return static_cast<std::uint64_t>(
          std::floor(static_cast<double>(stream[j].event.t_us - t0) / bin_us));
    };
    bin_index = bin_of(i);
    std::size_t j = i;
    while (j < stream.size() && bin_of(j) == bin_index) ++j;

    const auto slice = stream.subspan(i, j - i);
    std::vector<std::uint8_t> gt_sel(slice.size(), 0), pred_sel(slice.size(), 0);
    for (std::size_t s = 0; s < slice.size(); ++s) {
      const bool skip = !ignore.empty() && ignore[i + s];
      gt_sel[s] = (!skip && slice[s].label != 0) ? 1 : 0;
      pred_sel[s] = (!skip && predictions[i + s] != 0) ? 1 : 0;
    }
    const auto gt_grid = rasterize(slice, gt_sel, cfg.geometry);
    const auto pred_grid = rasterize(slice, pred_sel, cfg.geometry);

    for (const auto& obj : connected_components_8(gt_grid, w, h)) {
      ++m.tally.n_obj;
      std::size_t covered = 0;
      for (const std::uint32_t px : obj) covered += pred_grid[px] ? 1 : 0;
      if (static_cast<double>(covered) >= cfg.tau_c * static_cast<double>(obj.size()))
        ++m.tally.n_det;
    }
    for (const auto& comp : connected_components_8(pred_grid, w, h)) {
      bool touches_gt = false;
      for (const std::uint32_t px : comp) {
        if (gt_grid[px]) {
          touches_gt = true;
          break;
        }
      }
      if (!touches_gt) ++m.tally.n_fp_comp;
    }
    i = j;
  }
  m.tally.n_bins = bin_index + 1;  // consecutive bins from the first event

  m.pd = detail::safe_ratio(static_cast<double>(m.tally.n_det),
                            static_cast<double>(m.tally.n_obj), m.pd_degenerate);
  const double cells = static_cast<double>(m.tally.n_bins) *
                       static_cast<double>(cfg.geometry.area());
  m.fa_density = detail::safe_ratio(static_cast<double>(m.tally.n_fp_comp), cells,
                                    m.fa_degenerate);
  return m;
}

struct LossResult {
  double value = 0.0;
  bool degenerate = false;  // no rows survived the ignore mask
};

// FL = -alpha * (1 - p_t)^gamma * log(p_t), averaged over non-ignored rows,
// with p_t the softmax probability of the true class.
inline LossResult focal_loss(std::span<const double> logits, std::size_t classes,
                             std::span<const std::uint8_t> labels,
                             std::span<const std::uint8_t> ignore,
                             double alpha = 0.5, double gamma = 2.0) {
  if (classes < 2) throw ValidationError("focal loss needs >= 2 classes");
  if (logits.size() != labels.size() * classes ||
      (!ignore.empty() && ignore.size() != labels.size()))
    throw ValidationError("focal loss length mismatch");
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (!ignore.empty() && ignore[r]) continue;
    if (labels[r] >= classes) throw ValidationError("label outside class range");
    const double* z = logits.data() + r * classes;
    double mx = z[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, z[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(z[c] - mx);
    const double log_pt = z[labels[r]] - mx - std::log(denom);
    const double pt = std::exp(log_pt);
    sum += -alpha * std::pow(1.0 - pt, gamma) * log_pt;
    ++used;
  }
  LossResult out;
  if (used == 0) {
    out.degenerate = true;
    return out;
  }
  out.value = sum / static_cast<double>(used);
  return out;
}

}  // namespace evs
