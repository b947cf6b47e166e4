#pragma once

// Per-event causal spatial encoding: local event-rate feature, causal KNN
// over a bounded history, position-bias MLP, masked single-query attention,
// residual + layer norm.
//
// Coordinates are normalized to [0,1] by sensor width/height and time to
// seconds from stream start, which makes the default radius of 0.2
// dimensionally meaningful.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "evstream/errors.hpp"
#include "evstream/tensor.hpp"

namespace evs {

struct SpatialHyperparams {
  std::uint32_t k = 16;      // causal neighbors
  double radius = 0.2;       // weighted-distance cutoff, inclusive
  double lambda_s = 1.0;     // spatial distance weight
  double lambda_t = 1.0;     // temporal distance weight
  double alpha = 1.0;        // time scale for the temporal distance, 1/s
  double tau = 0.01;         // event-rate horizon, seconds
  std::uint32_t dim = 128;   // feature dimension D
  std::uint32_t heads = 4;   // attention heads, must divide dim

  void validate() const {
    if (k < 1) throw ValidationError("spatial k must be >= 1");
    if (radius <= 0.0) throw ValidationError("spatial radius must be > 0");
    if (tau <= 0.0) throw ValidationError("spatial tau must be > 0");
    if (dim == 0 || heads == 0 || dim % heads != 0)
      throw ValidationError("spatial dim must be a positive multiple of heads");
  }
};

// Raw input feature is [u, v, t_s, log1p(R)/10, p].
inline constexpr std::size_t kRawFeatureDim = 5;

struct SpatialEncoderParams {
  Mat w_c;                       // kRawFeatureDim x D, center projection
  std::vector<float> b_c;        // D
  Mat pos_w1;                    // 4 x D, position MLP
  std::vector<float> pos_b1;     // D
  Mat pos_w2;                    // D x D
  std::vector<float> pos_b2;     // D
  std::vector<float> ln_gamma;   // D
  std::vector<float> ln_beta;    // D
};

struct NormalizedPoint {
  double u = 0.0;    // x / width
  double v = 0.0;    // y / height
  double t_s = 0.0;  // seconds from stream start
};

// Bounded ring of the most recent already-encoded events. Entries are in
// stream order (logical index 0 = oldest); the projected center feature of
// each event is stored so later events can attend to it.
class HistoryBuffer {
 public:
  HistoryBuffer(std::size_t capacity, std::size_t feat_dim)
      : cap_(std::max<std::size_t>(capacity, 1)), dim_(feat_dim) {
    points_.reserve(cap_);
    feats_.reserve(cap_ * dim_);
  }

  std::size_t capacity() const { return cap_; }
  std::size_t size() const { return points_.size(); }
  std::size_t feature_dim() const { return dim_; }

  // Capacity changes are only valid at chunk boundaries; keeps the most
  // recent events.
  void set_capacity(std::size_t cap) {
    cap = std::max<std::size_t>(cap, 1);
    if (cap == cap_) return;
    compact();
    if (points_.size() > cap) {
      const std::size_t drop = points_.size() - cap;
      points_.erase(points_.begin(), points_.begin() + static_cast<std::ptrdiff_t>(drop));
      feats_.erase(feats_.begin(), feats_.begin() + static_cast<std::ptrdiff_t>(drop * dim_));
    }
    cap_ = cap;
  }

  void push(const NormalizedPoint& pt, double polarity, std::uint64_t t_us,
            std::span<const double> feat) {
    if (feat.size() != dim_) throw ValidationError("history feature size mismatch");
    if (points_.size() == cap_) {
      // Ring overwrite of the oldest slot.
      points_[head_] = Entry{pt, polarity, t_us};
      std::copy(feat.begin(), feat.end(), feats_.begin() + static_cast<std::ptrdiff_t>(head_ * dim_));
      head_ = (head_ + 1) % cap_;
    } else {
      points_.push_back(Entry{pt, polarity, t_us});
      feats_.insert(feats_.end(), feat.begin(), feat.end());
    }
  }

  const NormalizedPoint& point(std::size_t logical) const { return slot(logical).pt; }
  double polarity(std::size_t logical) const { return slot(logical).polarity; }
  std::uint64_t timestamp_us(std::size_t logical) const { return slot(logical).t_us; }

  std::span<const double> feature(std::size_t logical) const {
    const std::size_t phys = physical(logical);
    return {feats_.data() + phys * dim_, dim_};
  }

  void clear() {
    points_.clear();
    feats_.clear();
    head_ = 0;
  }

 private:
  struct Entry {
    NormalizedPoint pt;
    double polarity = 0.0;
    std::uint64_t t_us = 0;
  };

  std::size_t physical(std::size_t logical) const {
    return points_.size() == cap_ ? (head_ + logical) % cap_ : logical;
  }

  const Entry& slot(std::size_t logical) const { return points_[physical(logical)]; }

  // Rotates storage so logical order equals physical order.
  void compact() {
    if (head_ == 0) return;
    std::rotate(points_.begin(), points_.begin() + static_cast<std::ptrdiff_t>(head_), points_.end());
    std::rotate(feats_.begin(), feats_.begin() + static_cast<std::ptrdiff_t>(head_ * dim_), feats_.end());
    head_ = 0;
  }

  std::size_t cap_;
  std::size_t dim_;
  std::size_t head_ = 0;
  std::vector<Entry> points_;
  std::vector<double> feats_;
};

// Events per second within [t_s - tau, t_s), counting buffer contents only.
inline double local_event_rate(const HistoryBuffer& history, double t_s, double tau) {
  if (tau <= 0.0) throw ValidationError("tau must be > 0");
  const double lo = t_s - tau;
  std::size_t count = 0;
  // Buffer is time-ordered; walk backward and stop at the horizon.
  for (std::size_t i = history.size(); i-- > 0;) {
    const double tj = history.point(i).t_s;
    if (tj >= t_s) continue;
    if (tj < lo) break;
    ++count;
  }
  return static_cast<double>(count) / tau;
}

struct WeightedDistance {
  double spatial = 0.0;   // euclidean in (u, v)
  double temporal = 0.0;  // alpha * |dt|
  double total = 0.0;     // lambda_s * spatial + lambda_t * temporal
};

inline WeightedDistance weighted_distance(const NormalizedPoint& a,
                                          const NormalizedPoint& b,
                                          const SpatialHyperparams& hp) {
  WeightedDistance d;
  const double du = a.u - b.u;
  const double dv = a.v - b.v;
  d.spatial = std::sqrt(du * du + dv * dv);
  d.temporal = hp.alpha * std::abs(a.t_s - b.t_s);
  d.total = hp.lambda_s * d.spatial + hp.lambda_t * d.temporal;
  return d;
}

// k nearest causal neighbors. Valid slots come first, sorted by distance
// with ties resolved toward the more recent event; remaining slots are
// masked. Offsets are neighbor minus center.
struct NeighborQuery {
  std::vector<std::uint32_t> index;            // history logical slot
  std::vector<std::uint8_t> mask;              // 1 = valid
  std::vector<double> dist;                    // weighted distance
  std::vector<std::array<double, 3>> offset;   // (du, dv, dt_s)

  explicit NeighborQuery(std::size_t k)
      : index(k, 0), mask(k, 0), dist(k, 0.0), offset(k, {0.0, 0.0, 0.0}) {}

  std::size_t valid_count() const {
    std::size_t n = 0;
    while (n < mask.size() && mask[n]) ++n;
    return n;
  }
};

inline NeighborQuery causal_knn(const NormalizedPoint& center,
                                const HistoryBuffer& history,
                                const SpatialHyperparams& hp) {
  NeighborQuery q(hp.k);
  struct Cand {
    double d;
    std::uint32_t j;
  };
  // Worst candidate first: larger distance, then older event.
  auto worse = [](const Cand& a, const Cand& b) {
    if (a.d != b.d) return a.d < b.d;
    return a.j > b.j;
  };

  std::vector<Cand> heap;
  heap.reserve(hp.k + 1);
  for (std::size_t j = 0; j < history.size(); ++j) {
    const double d = weighted_distance(center, history.point(j), hp).total;
    if (d > hp.radius) continue;  // inclusive cutoff
    heap.push_back({d, static_cast<std::uint32_t>(j)});
    std::push_heap(heap.begin(), heap.end(), worse);
    if (heap.size() > hp.k) {
      std::pop_heap(heap.begin(), heap.end(), worse);
      heap.pop_back();
    }
  }
  std::sort(heap.begin(), heap.end(), [](const Cand& a, const Cand& b) {
    if (a.d != b.d) return a.d < b.d;
    return a.j > b.j;
  });

  for (std::size_t s = 0; s < heap.size(); ++s) {
    const auto& pt = history.point(heap[s].j);
    q.index[s] = heap[s].j;
    q.mask[s] = 1;
    q.dist[s] = heap[s].d;
    q.offset[s] = {pt.u - center.u, pt.v - center.v, pt.t_s - center.t_s};
  }
  return q;
}

// f_tilde = f_raw * W_c + b_c.
inline std::vector<double> encode_center(std::span<const double> f_raw,
                                         const SpatialEncoderParams& p) {
  if (!all_finite(f_raw)) throw ValidationError("non-finite raw feature");
  std::vector<double> out(p.w_c.cols, 0.0);
  matvec(p.w_c, f_raw, out);
  add_bias(out, p.b_c);
  return out;
}

inline std::vector<double> assemble_raw_feature(const NormalizedPoint& pt,
                                                double rate, double polarity) {
  // Raw rates span several orders of magnitude; log1p(R)/10 keeps the
  // feature in the same range as the coordinates.
  return {pt.u, pt.v, pt.t_s, std::log1p(rate) / 10.0, polarity};
}

// phi = W2 * relu(W1 * z + b1) + b2 with z = [du, dv, dt_s, d].
inline void position_bias(const std::array<double, 3>& offset, double dist,
                          const SpatialEncoderParams& p, std::span<double> out) {
  const std::array<double, 4> z{offset[0], offset[1], offset[2], dist};
  std::vector<double> hidden(p.pos_w1.cols, 0.0);
  matvec(p.pos_w1, z, hidden);
  add_bias(hidden, p.pos_b1);
  for (auto& h : hidden) h = relu(h);
  matvec(p.pos_w2, hidden, out);
  add_bias(out, p.pos_b2);
}

inline constexpr double kMaskScore = -1e9;

// Projection-free single-query attention, multi-head by splitting the
// feature into contiguous sub-vectors. Masked slots score kMaskScore; if
// every slot is masked the result is zero.
inline std::vector<double> local_attention(std::span<const double> center,
                                           std::span<const double> neighbor_feats,
                                           std::span<const std::uint8_t> mask,
                                           const SpatialHyperparams& hp) {
  const std::size_t d = hp.dim;
  const std::size_t k = mask.size();
  std::vector<double> out(d, 0.0);
  bool any_valid = false;
  for (std::size_t s = 0; s < k; ++s) any_valid = any_valid || mask[s];
  if (!any_valid) return out;

  const std::size_t head_dim = d / hp.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<double> score(k, 0.0);
  for (std::size_t h = 0; h < hp.heads; ++h) {
    const std::size_t base = h * head_dim;
    for (std::size_t s = 0; s < k; ++s) {
      double dot = 0.0;
      const double* kv = neighbor_feats.data() + s * d + base;
      for (std::size_t i = 0; i < head_dim; ++i) dot += center[base + i] * kv[i];
      score[s] = dot * scale + (mask[s] ? 0.0 : kMaskScore);
    }
    double mx = score[0];
    for (std::size_t s = 1; s < k; ++s) mx = std::max(mx, score[s]);
    double denom = 0.0;
    for (std::size_t s = 0; s < k; ++s) {
      score[s] = std::exp(score[s] - mx);
      denom += score[s];
    }
    for (std::size_t s = 0; s < k; ++s) {
      const double w = score[s] / denom;
      if (w == 0.0) continue;
      const double* kv = neighbor_feats.data() + s * d + base;
      for (std::size_t i = 0; i < head_dim; ++i) out[base + i] += w * kv[i];
    }
  }
  return out;
}

// Full per-event encoding; appends the event to the history afterwards.
// Dropout is identity at inference.
inline std::vector<double> spatial_encode_event(const NormalizedPoint& pt,
                                                double polarity, std::uint64_t t_us,
                                                HistoryBuffer& history,
                                                const SpatialEncoderParams& p,
                                                const SpatialHyperparams& hp) {
  const double rate = local_event_rate(history, pt.t_s, hp.tau);
  const auto f_raw = assemble_raw_feature(pt, rate, polarity);
  const auto center = encode_center(f_raw, p);

  const NeighborQuery q = causal_knn(pt, history, hp);
  const std::size_t d = hp.dim;
  std::vector<double> neighbor_feats(static_cast<std::size_t>(hp.k) * d, 0.0);
  for (std::size_t s = 0; s < hp.k; ++s) {
    if (!q.mask[s]) continue;
    std::span<double> h(neighbor_feats.data() + s * d, d);
    position_bias(q.offset[s], q.dist[s], p, h);
    const auto fj = history.feature(q.index[s]);
    for (std::size_t i = 0; i < d; ++i) h[i] += fj[i];
  }
  const auto attn = local_attention(center, neighbor_feats, q.mask, hp);

  std::vector<double> pre(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) pre[i] = center[i] + attn[i];
  std::vector<double> out(d, 0.0);
  layer_norm(pre, p.ln_gamma, p.ln_beta, out);

  history.push(pt, polarity, t_us, center);
  return out;
}

}  // namespace evs
