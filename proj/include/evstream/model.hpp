#pragma once

// Aggregate model: spatial encoder + SSM blocks + classifier head, with
// deterministic seeded initialization and a flat named-tensor view used by
// the weight container and the gradient-free fitter.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "evstream/errors.hpp"
#include "evstream/rng.hpp"
#include "evstream/spatial.hpp"
#include "evstream/temporal.hpp"

namespace evs {

struct ModelHyperparams {
  SpatialHyperparams spatial;
  SsmHyperparams ssm;

  void validate() const {
    spatial.validate();
    ssm.validate();
    if (spatial.dim != ssm.dim)
      throw ValidationError("spatial and ssm feature dimensions must match");
  }
};

struct ModelParams {
  SpatialEncoderParams spatial;
  std::vector<SsmBlockParams> blocks;
  HeadParams head;
};

// Visits every learnable tensor in a fixed order. The order defines both the
// weight-file layout and the initialization draw sequence.
template <class Model, class Fn>
void for_each_tensor(Model& m, Fn&& fn) {
  auto mat = [&](const std::string& name, auto& t) {
    fn(name, std::vector<std::uint32_t>{static_cast<std::uint32_t>(t.rows),
                                        static_cast<std::uint32_t>(t.cols)},
       t.w.data(), t.w.size());
  };
  auto vec = [&](const std::string& name, auto& t) {
    fn(name, std::vector<std::uint32_t>{static_cast<std::uint32_t>(t.size())}, t.data(),
       t.size());
  };

  mat("spatial.w_c", m.spatial.w_c);
  vec("spatial.b_c", m.spatial.b_c);
  mat("spatial.pos_w1", m.spatial.pos_w1);
  vec("spatial.pos_b1", m.spatial.pos_b1);
  mat("spatial.pos_w2", m.spatial.pos_w2);
  vec("spatial.pos_b2", m.spatial.pos_b2);
  vec("spatial.ln_gamma", m.spatial.ln_gamma);
  vec("spatial.ln_beta", m.spatial.ln_beta);
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    const std::string b = "block" + std::to_string(i) + ".";
    auto& blk = m.blocks[i];
    vec(b + "ln_gamma", blk.ln_gamma);
    vec(b + "ln_beta", blk.ln_beta);
    mat(b + "w_in", blk.w_in);
    mat(b + "conv_w", blk.conv_w);
    vec(b + "conv_b", blk.conv_b);
    mat(b + "w_x", blk.w_x);
    mat(b + "w_dt", blk.w_dt);
    vec(b + "b_dt", blk.b_dt);
    mat(b + "a_log", blk.a_log);
    vec(b + "d_skip", blk.d_skip);
    mat(b + "w_out", blk.w_out);
  }
  vec("head.ln_gamma", m.head.ln_gamma);
  vec("head.ln_beta", m.head.ln_beta);
  mat("head.w1", m.head.w1);
  vec("head.b1", m.head.b1);
  mat("head.w2", m.head.w2);
  vec("head.b2", m.head.b2);
}

inline std::size_t count_parameters(const ModelParams& m) {
  std::size_t total = 0;
  for_each_tensor(m, [&](const std::string&, const std::vector<std::uint32_t>&,
                         const float*, std::size_t n) { total += n; });
  return total;
}

namespace detail {

inline void xavier_init(Mat& m, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows + m.cols));
  for (auto& w : m.w) w = static_cast<float>(rng.uniform(-limit, limit));
}

}  // namespace detail

// Allocates and deterministically initializes all parameters: matrices
// uniform +-sqrt(6/(fan_in+fan_out)); LN gains 1, shifts 0; biases 0;
// d_skip 1; per channel a_log grids -exp(a_log) log-uniformly over
// [-1, -1e-2]; b_dt so that softplus(b_dt) lands in [1e-2, 1e-1].
inline ModelParams init_weights(const ModelHyperparams& hp, std::uint64_t seed) {
  hp.validate();
  const std::uint32_t d = hp.ssm.dim;
  const std::uint32_t di = hp.ssm.inner();
  const std::uint32_t n = hp.ssm.state;

  ModelParams m;
  m.spatial.w_c = Mat(kRawFeatureDim, d);
  m.spatial.b_c.assign(d, 0.0f);
  m.spatial.pos_w1 = Mat(4, d);
  m.spatial.pos_b1.assign(d, 0.0f);
  m.spatial.pos_w2 = Mat(d, d);
  m.spatial.pos_b2.assign(d, 0.0f);
  m.spatial.ln_gamma.assign(d, 1.0f);
  m.spatial.ln_beta.assign(d, 0.0f);

  m.blocks.assign(hp.ssm.blocks, SsmBlockParams{});
  for (auto& blk : m.blocks) {
    blk.ln_gamma.assign(d, 1.0f);
    blk.ln_beta.assign(d, 0.0f);
    blk.w_in = Mat(d, 2 * di);
    blk.conv_w = Mat(di, hp.ssm.conv_kernel);
    blk.conv_b.assign(di, 0.0f);
    blk.w_x = Mat(di, hp.ssm.dt_rank + 2 * n);
    blk.w_dt = Mat(hp.ssm.dt_rank, di);
    blk.b_dt.assign(di, 0.0f);
    blk.a_log = Mat(di, n);
    blk.d_skip.assign(di, 1.0f);
    blk.w_out = Mat(di, d);
  }

  m.head.ln_gamma.assign(d, 1.0f);
  m.head.ln_beta.assign(d, 0.0f);
  m.head.w1 = Mat(d, d / 2);
  m.head.b1.assign(d / 2, 0.0f);
  m.head.w2 = Mat(d / 2, hp.ssm.classes);
  m.head.b2.assign(hp.ssm.classes, 0.0f);

  Rng rng(seed);
  detail::xavier_init(m.spatial.w_c, rng);
  detail::xavier_init(m.spatial.pos_w1, rng);
  detail::xavier_init(m.spatial.pos_w2, rng);
  for (auto& blk : m.blocks) {
    detail::xavier_init(blk.w_in, rng);
    detail::xavier_init(blk.conv_w, rng);
    detail::xavier_init(blk.w_x, rng);
    detail::xavier_init(blk.w_dt, rng);
    detail::xavier_init(blk.w_out, rng);
    // Decay magnitudes on a log grid from 1e-2 to 1 across state channels.
    for (std::uint32_t ch = 0; ch < di; ++ch) {
      for (std::uint32_t s = 0; s < n; ++s) {
        const double frac = n > 1 ? static_cast<double>(s) / (n - 1) : 0.5;
        const double mag = std::exp(std::log(1e-2) * (1.0 - frac));
        blk.a_log.at(ch, s) = static_cast<float>(std::log(mag));
      }
    }
    // Inverse softplus of a log-uniform draw in [1e-2, 1e-1].
    for (std::uint32_t ch = 0; ch < di; ++ch) {
      const double target = std::exp(rng.uniform(std::log(1e-2), std::log(1e-1)));
      blk.b_dt[ch] = static_cast<float>(std::log(std::expm1(target)));
    }
  }
  detail::xavier_init(m.head.w1, rng);
  detail::xavier_init(m.head.w2, rng);
  return m;
}

}  // namespace evs
