#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "evstream/rng.hpp"
#include "evstream/spatial.hpp"

using namespace evs;

namespace {

SpatialHyperparams tiny_params() {
  SpatialHyperparams hp;
  hp.k = 4;
  hp.dim = 8;
  hp.heads = 2;
  return hp;
}

// Encoder parameters with deterministic, hand-controllable weights.
SpatialEncoderParams make_params(const SpatialHyperparams& hp, Rng& rng) {
  SpatialEncoderParams p;
  p.w_c = Mat(kRawFeatureDim, hp.dim);
  p.pos_w1 = Mat(4, hp.dim);
  p.pos_w2 = Mat(hp.dim, hp.dim);
  p.b_c.assign(hp.dim, 0.0f);
  p.pos_b1.assign(hp.dim, 0.0f);
  p.pos_b2.assign(hp.dim, 0.0f);
  p.ln_gamma.assign(hp.dim, 1.0f);
  p.ln_beta.assign(hp.dim, 0.0f);
  auto fill = [&](std::vector<float>& w) {
    for (auto& v : w) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  };
  fill(p.w_c.w);
  fill(p.pos_w1.w);
  fill(p.pos_w2.w);
  fill(p.b_c);
  fill(p.pos_b1);
  fill(p.pos_b2);
  return p;
}

// Reference KNN: score every history slot, filter by the inclusive radius,
// order by (distance asc, recency desc) and truncate to k.
std::vector<std::pair<double, std::uint32_t>> knn_oracle(
    const NormalizedPoint& center, const HistoryBuffer& history,
    const SpatialHyperparams& hp) {
  std::vector<std::pair<double, std::uint32_t>> all;
  for (std::size_t j = 0; j < history.size(); ++j) {
    const double d = weighted_distance(center, history.point(j), hp).total;
    if (d <= hp.radius) all.push_back({d, static_cast<std::uint32_t>(j)});
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second > b.second;
  });
  if (all.size() > hp.k) all.resize(hp.k);
  return all;
}

}  // namespace

TEST_CASE("hyperparameter validation") {
  SpatialHyperparams hp;
  REQUIRE_NOTHROW(hp.validate());
  hp.heads = 3;  // does not divide 128
  REQUIRE_THROWS_AS(hp.validate(), ValidationError);
  hp = {};
  hp.k = 0;
  REQUIRE_THROWS_AS(hp.validate(), ValidationError);
  hp = {};
  hp.radius = 0.0;
  REQUIRE_THROWS_AS(hp.validate(), ValidationError);
}

TEST_CASE("weighted distance composes spatial and temporal terms") {
  SpatialHyperparams hp;
  hp.lambda_s = 2.0;
  hp.lambda_t = 3.0;
  hp.alpha = 10.0;
  const NormalizedPoint a{0.5, 0.5, 1.0};
  const NormalizedPoint b{0.5, 0.25, 0.9};
  const auto d = weighted_distance(a, b, hp);
  REQUIRE(d.spatial == Catch::Approx(0.25));
  REQUIRE(d.temporal == Catch::Approx(1.0));  // 10 * 0.1
  REQUIRE(d.total == Catch::Approx(2.0 * 0.25 + 3.0 * 1.0));
}

TEST_CASE("causal knn matches a brute-force oracle on random histories") {
  Rng rng(2024);
  SpatialHyperparams hp;
  hp.k = 8;
  hp.radius = 0.5;
  hp.dim = 4;
  hp.heads = 2;

  for (int trial = 0; trial < 50; ++trial) {
    HistoryBuffer history(256, hp.dim);
    const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform(0.0, 120.0));
    std::vector<double> feat(hp.dim, 0.0);
    double t = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      t += rng.uniform(0.0, 0.01);
      history.push({rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), t}, 1.0,
                   static_cast<std::uint64_t>(t * 1e6), feat);
    }
    const NormalizedPoint center{rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0),
                                 t + 0.001};

    const auto expected = knn_oracle(center, history, hp);
    const auto q = causal_knn(center, history, hp);

    REQUIRE(q.valid_count() == expected.size());
    for (std::size_t s = 0; s < expected.size(); ++s) {
      REQUIRE(q.mask[s] == 1);
      REQUIRE(q.index[s] == expected[s].second);
      REQUIRE(q.dist[s] == expected[s].first);
      const auto& pt = history.point(q.index[s]);
      REQUIRE(q.offset[s][0] == pt.u - center.u);
      REQUIRE(q.offset[s][1] == pt.v - center.v);
      REQUIRE(q.offset[s][2] == pt.t_s - center.t_s);
    }
    for (std::size_t s = expected.size(); s < hp.k; ++s) REQUIRE(q.mask[s] == 0);
  }
}

TEST_CASE("knn radius cutoff is inclusive") {
  SpatialHyperparams hp;
  hp.k = 4;
  hp.radius = 0.125;  // exactly representable; sqrt(0.125^2) == 0.125
  hp.dim = 2;

  HistoryBuffer history(8, hp.dim);
  const std::vector<double> feat(hp.dim, 0.0);
  history.push({0.125, 0.0, 0.0}, 1.0, 0, feat);  // d == radius, on the rim
  history.push({0.25, 0.0, 0.0}, 1.0, 1, feat);   // d > radius

  const auto q = causal_knn({0.0, 0.0, 0.0}, history, hp);
  REQUIRE(q.valid_count() == 1);
  REQUIRE(q.index[0] == 0);
  REQUIRE(q.dist[0] == 0.125);
}

TEST_CASE("knn distance ties resolve toward the more recent event") {
  SpatialHyperparams hp;
  hp.k = 2;
  hp.radius = 1.0;
  hp.dim = 2;

  HistoryBuffer history(8, hp.dim);
  const std::vector<double> feat(hp.dim, 0.0);
  // Three copies of the same point: identical distances to any center.
  for (int i = 0; i < 3; ++i) history.push({0.5, 0.5, 0.0}, 1.0, 0, feat);

  const auto q = causal_knn({0.5, 0.4, 0.0}, history, hp);
  REQUIRE(q.valid_count() == 2);
  REQUIRE(q.index[0] == 2);  // newest wins the tie
  REQUIRE(q.index[1] == 1);
}

TEST_CASE("local event rate counts the half-open trailing window") {
  HistoryBuffer history(16, 2);
  const std::vector<double> feat(2, 0.0);
  // Dyadic times so the window bounds are exact in floating point.
  for (double t : {0.25, 0.4375, 0.46875, 0.484375, 0.5, 0.5625})
    history.push({0.0, 0.0, t}, 1.0, static_cast<std::uint64_t>(t * 1e6), feat);

  // Window [0.4375, 0.5): the lower edge is included, the query time and
  // anything after it are not, and 0.25 is past the horizon.
  REQUIRE(local_event_rate(history, 0.5, 0.0625) == 48.0);
  REQUIRE(local_event_rate(HistoryBuffer(4, 2), 1.0, 0.01) == 0.0);
  REQUIRE_THROWS_AS(local_event_rate(history, 0.5, 0.0), ValidationError);
}

TEST_CASE("raw feature layout and rate compression") {
  const auto f = assemble_raw_feature({0.25, 0.75, 1.5}, 999.0, -1.0);
  REQUIRE(f.size() == kRawFeatureDim);
  REQUIRE(f[0] == 0.25);
  REQUIRE(f[1] == 0.75);
  REQUIRE(f[2] == 1.5);
  REQUIRE(f[3] == Catch::Approx(std::log1p(999.0) / 10.0));
  REQUIRE(f[4] == -1.0);
}

TEST_CASE("center projection matches a naive matrix product") {
  Rng rng(11);
  const auto hp = tiny_params();
  const auto p = make_params(hp, rng);
  const std::vector<double> f{0.1, -0.2, 0.3, 0.05, 1.0};
  const auto out = encode_center(f, p);
  REQUIRE(out.size() == hp.dim);
  for (std::size_t c = 0; c < hp.dim; ++c) {
    double acc = static_cast<double>(p.b_c[c]);
    for (std::size_t r = 0; r < kRawFeatureDim; ++r)
      acc += f[r] * static_cast<double>(p.w_c.at(r, c));
    REQUIRE(out[c] == Catch::Approx(acc).margin(1e-12));
  }
  const std::vector<double> bad{0.1, std::nan(""), 0.0, 0.0, 1.0};
  REQUIRE_THROWS_AS(encode_center(bad, p), ValidationError);
}

TEST_CASE("position bias matches a hand-evaluated two-layer mlp") {
  Rng rng(12);
  const auto hp = tiny_params();
  const auto p = make_params(hp, rng);
  const std::array<double, 3> offset{0.02, -0.01, -0.005};
  const double dist = 0.03;

  std::vector<double> out(hp.dim, 0.0);
  position_bias(offset, dist, p, out);

  const std::array<double, 4> z{offset[0], offset[1], offset[2], dist};
  std::vector<double> hidden(hp.dim, 0.0);
  for (std::size_t c = 0; c < hp.dim; ++c) {
    double acc = static_cast<double>(p.pos_b1[c]);
    for (std::size_t r = 0; r < 4; ++r)
      acc += z[r] * static_cast<double>(p.pos_w1.at(r, c));
    hidden[c] = std::max(acc, 0.0);
  }
  for (std::size_t c = 0; c < hp.dim; ++c) {
    double acc = static_cast<double>(p.pos_b2[c]);
    for (std::size_t r = 0; r < hp.dim; ++r)
      acc += hidden[r] * static_cast<double>(p.pos_w2.at(r, c));
    REQUIRE(out[c] == Catch::Approx(acc).margin(1e-12));
  }
}

TEST_CASE("attention reduces to identity, zero, and single-slot selection") {
  const auto hp = tiny_params();
  Rng rng(13);
  std::vector<double> center(hp.dim);
  for (auto& v : center) v = rng.uniform(-1.0, 1.0);

  SECTION("identical neighbors return the shared vector") {
    std::vector<double> nf(hp.k * hp.dim);
    std::vector<double> shared(hp.dim);
    for (auto& v : shared) v = rng.uniform(-1.0, 1.0);
    for (std::size_t s = 0; s < hp.k; ++s)
      std::copy(shared.begin(), shared.end(), nf.begin() + s * hp.dim);
    const std::vector<std::uint8_t> mask(hp.k, 1);
    const auto out = local_attention(center, nf, mask, hp);
    for (std::size_t i = 0; i < hp.dim; ++i)
      REQUIRE(out[i] == Catch::Approx(shared[i]).margin(1e-12));
  }

  SECTION("fully masked query yields zero") {
    std::vector<double> nf(hp.k * hp.dim, 123.0);
    const std::vector<std::uint8_t> mask(hp.k, 0);
    const auto out = local_attention(center, nf, mask, hp);
    for (double v : out) REQUIRE(v == 0.0);
  }

  SECTION("single valid slot is copied through") {
    std::vector<double> nf(hp.k * hp.dim, 55.0);
    std::vector<std::uint8_t> mask(hp.k, 0);
    mask[0] = 1;
    std::vector<double> only(hp.dim);
    for (auto& v : only) v = rng.uniform(-1.0, 1.0);
    std::copy(only.begin(), only.end(), nf.begin());
    const auto out = local_attention(center, nf, mask, hp);
    for (std::size_t i = 0; i < hp.dim; ++i)
      REQUIRE(out[i] == Catch::Approx(only[i]).margin(1e-12));
  }

  SECTION("weights form a convex combination per head") {
    Rng r2(99);
    std::vector<double> nf(hp.k * hp.dim);
    for (auto& v : nf) v = r2.uniform(-2.0, 2.0);
    const std::vector<std::uint8_t> mask(hp.k, 1);
    const auto out = local_attention(center, nf, mask, hp);
    // Each output coordinate must lie within the range of its inputs.
    for (std::size_t i = 0; i < hp.dim; ++i) {
      double lo = nf[i], hi = nf[i];
      for (std::size_t s = 1; s < hp.k; ++s) {
        lo = std::min(lo, nf[s * hp.dim + i]);
        hi = std::max(hi, nf[s * hp.dim + i]);
      }
      REQUIRE(out[i] >= lo - 1e-12);
      REQUIRE(out[i] <= hi + 1e-12);
    }
  }
}

TEST_CASE("layer norm normalizes and constant input returns the shift") {
  const std::size_t n = 8;
  std::vector<float> gamma(n, 1.0f), beta(n, 0.0f);
  std::vector<double> x(n), out(n);

  Rng rng(14);
  for (auto& v : x) v = rng.uniform(-3.0, 3.0);
  layer_norm(x, gamma, beta, out);
  double mean = 0.0, var = 0.0;
  for (double v : out) mean += v;
  mean /= n;
  for (double v : out) var += (v - mean) * (v - mean);
  var /= n;
  REQUIRE(mean == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(var == Catch::Approx(1.0).margin(1e-4));  // eps-deflated

  std::fill(x.begin(), x.end(), 2.5);
  for (std::size_t i = 0; i < n; ++i) beta[i] = static_cast<float>(i);
  layer_norm(x, gamma, beta, out);
  for (std::size_t i = 0; i < n; ++i)
    REQUIRE(out[i] == Catch::Approx(static_cast<double>(i)).margin(1e-12));
}

TEST_CASE("history ring keeps the newest events across capacity changes") {
  HistoryBuffer h(4, 2);
  for (int i = 0; i < 6; ++i) {
    const std::vector<double> feat{static_cast<double>(i), static_cast<double>(-i)};
    h.push({0.1 * i, 0.0, 0.01 * i}, 1.0, static_cast<std::uint64_t>(i), feat);
  }
  REQUIRE(h.size() == 4);
  REQUIRE(h.capacity() == 4);
  // Logical order is oldest-to-newest: events 2, 3, 4, 5 remain.
  for (std::size_t i = 0; i < 4; ++i) {
    REQUIRE(h.timestamp_us(i) == i + 2);
    REQUIRE(h.feature(i)[0] == static_cast<double>(i + 2));
  }

  h.set_capacity(2);
  REQUIRE(h.size() == 2);
  REQUIRE(h.timestamp_us(0) == 4);
  REQUIRE(h.timestamp_us(1) == 5);

  h.set_capacity(8);
  REQUIRE(h.size() == 2);  // growth never invents events
  h.push({0.9, 0.9, 0.09}, -1.0, 9, std::vector<double>{9.0, -9.0});
  REQUIRE(h.size() == 3);
  REQUIRE(h.timestamp_us(2) == 9);
  REQUIRE(h.polarity(2) == -1.0);
}

TEST_CASE("event encoding is causal and stores the center projection") {
  Rng rng(15);
  const auto hp = tiny_params();
  const auto p = make_params(hp, rng);

  HistoryBuffer history(32, hp.dim);
  std::vector<NormalizedPoint> pts;
  std::vector<double> pols;
  for (int i = 0; i < 10; ++i) {
    pts.push_back({rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), 0.001 * i});
    pols.push_back(i % 2 == 0 ? 1.0 : -1.0);
  }

  SECTION("first event sees an empty neighborhood") {
    HistoryBuffer fresh(32, hp.dim);
    const auto out = spatial_encode_event(pts[0], pols[0], 0, fresh, p, hp);
    // With no neighbors, output is LN(center features).
    const double rate = 0.0;
    const auto raw = assemble_raw_feature(pts[0], rate, pols[0]);
    const auto center = encode_center(raw, p);
    std::vector<double> expect(hp.dim, 0.0);
    layer_norm(center, p.ln_gamma, p.ln_beta, expect);
    for (std::size_t i = 0; i < hp.dim; ++i)
      REQUIRE(out[i] == Catch::Approx(expect[i]).margin(1e-12));
    REQUIRE(fresh.size() == 1);
  }

  SECTION("history records the pre-attention projection of each event") {
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double rate = local_event_rate(history, pts[i].t_s, hp.tau);
      const auto center = encode_center(
          assemble_raw_feature(pts[i], rate, pols[i]), p);
      spatial_encode_event(pts[i], pols[i],
                           static_cast<std::uint64_t>(pts[i].t_s * 1e6),
                           history, p, hp);
      const auto stored = history.feature(history.size() - 1);
      for (std::size_t c = 0; c < hp.dim; ++c)
        REQUIRE(stored[c] == Catch::Approx(center[c]).margin(1e-12));
    }
  }

  SECTION("outputs never depend on later events") {
    HistoryBuffer h1(32, hp.dim), h2(32, hp.dim);
    std::vector<std::vector<double>> first_pass;
    for (std::size_t i = 0; i < pts.size(); ++i)
      first_pass.push_back(spatial_encode_event(
          pts[i], pols[i], static_cast<std::uint64_t>(pts[i].t_s * 1e6), h1, p, hp));

    // Re-encode a prefix only; prefix outputs must be bit-identical.
    for (std::size_t i = 0; i < 5; ++i) {
      const auto out = spatial_encode_event(
          pts[i], pols[i], static_cast<std::uint64_t>(pts[i].t_s * 1e6), h2, p, hp);
      REQUIRE(out == first_pass[i]);
    }
  }
}
