#pragma once

// Stacked selective state-space blocks with exact chunked streaming.
//
// Each block runs, per step: pre-LN, input projection into a value path u
// and a gate path g, a short causal depthwise convolution over u whose tail
// is carried across chunks, input-dependent (delta, B, C), the diagonal
// state recurrence h <- exp(delta*A) h + (delta*B) u', a gated output, and
// an output projection. Blocks are wrapped in residual connections. Because
// the recurrence is a plain left-to-right scan, processing a stream in
// chunks with carried state is bit-identical to one full pass.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "evstream/errors.hpp"
#include "evstream/tensor.hpp"

namespace evs {

struct SsmHyperparams {
  std::uint32_t blocks = 2;       // stacked residual blocks M
  std::uint32_t dim = 128;        // model dimension D
  std::uint32_t state = 32;       // states per inner channel N
  std::uint32_t expand = 1;       // inner dim multiplier, D_inner = expand * dim
  std::uint32_t conv_kernel = 4;  // causal depthwise conv length
  std::uint32_t dt_rank = 8;      // low-rank delta projection
  std::uint32_t classes = 2;      // output classes C

  std::uint32_t inner() const { return expand * dim; }

  void validate() const {
    if (blocks == 0) throw ValidationError("ssm blocks must be >= 1");
    if (dim == 0 || state == 0 || expand == 0)
      throw ValidationError("ssm dim, state and expand must be >= 1");
    if (conv_kernel == 0) throw ValidationError("ssm conv_kernel must be >= 1");
    if (dt_rank == 0) throw ValidationError("ssm dt_rank must be >= 1");
    if (classes < 2) throw ValidationError("ssm classes must be >= 2");
    if (dim % 2 != 0) throw ValidationError("ssm dim must be even (head hidden is dim/2)");
  }
};

struct SsmBlockParams {
  std::vector<float> ln_gamma;  // D
  std::vector<float> ln_beta;   // D
  Mat w_in;                     // D x 2*D_inner: value path then gate path
  Mat conv_w;                   // D_inner x conv_kernel, column kernel-1 is the current step
  std::vector<float> conv_b;    // D_inner
  Mat w_x;                      // D_inner x (dt_rank + 2N): delta_low | B | C
  Mat w_dt;                     // dt_rank x D_inner
  std::vector<float> b_dt;      // D_inner
  Mat a_log;                    // D_inner x N, A = -exp(a_log)
  std::vector<float> d_skip;    // D_inner
  Mat w_out;                    // D_inner x D
};

struct HeadParams {
  std::vector<float> ln_gamma;  // D
  std::vector<float> ln_beta;   // D
  Mat w1;                       // D x D/2
  std::vector<float> b1;        // D/2
  Mat w2;                       // D/2 x C
  std::vector<float> b2;        // C
};

// Per-block carried state, zero at stream start.
struct BlockState {
  std::vector<double> h;          // D_inner x N, row-major by channel
  std::vector<double> conv_tail;  // D_inner x (conv_kernel - 1), oldest first

  BlockState() = default;
  BlockState(std::uint32_t inner, std::uint32_t state_dim, std::uint32_t conv_kernel)
      : h(static_cast<std::size_t>(inner) * state_dim, 0.0),
        conv_tail(static_cast<std::size_t>(inner) * (conv_kernel - 1), 0.0) {}
};

struct StreamState {
  std::vector<BlockState> blocks;
  std::uint64_t chunk_counter = 0;

  StreamState() = default;
  explicit StreamState(const SsmHyperparams& hp) { reset(hp); }

  void reset(const SsmHyperparams& hp) {
    blocks.assign(hp.blocks, BlockState(hp.inner(), hp.state, hp.conv_kernel));
    chunk_counter = 0;
  }
};

// One step of the diagonal state recurrence, exposed for direct testing.
// Shapes: a and h are channels x states, dt/u/d_skip/out are channels, b and
// c are states. h is updated in place.
inline void ssm_core_step(std::span<const double> a, std::span<const double> dt,
                          std::span<const double> b, std::span<const double> c,
                          std::span<const double> u, std::span<const double> d_skip,
                          std::span<double> h, std::span<double> out) {
  const std::size_t channels = u.size();
  const std::size_t states = b.size();
  if (a.size() != channels * states || h.size() != channels * states ||
      c.size() != states || dt.size() != channels || d_skip.size() != channels ||
      out.size() != channels)
    throw ValidationError("ssm core shape mismatch");
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const std::size_t base = ch * states;
    double acc = 0.0;
    for (std::size_t n = 0; n < states; ++n) {
      const double hn = std::exp(dt[ch] * a[base + n]) * h[base + n] + dt[ch] * b[n] * u[ch];
      h[base + n] = hn;
      acc += c[n] * hn;
    }
    out[ch] = acc + d_skip[ch] * u[ch];
  }
}

namespace detail {

inline void check_block_shapes(const SsmBlockParams& p, const SsmHyperparams& hp,
                               const BlockState& state) {
  const std::size_t d = hp.dim;
  const std::size_t di = hp.inner();
  const std::size_t n = hp.state;
  const std::size_t k = hp.conv_kernel;
  if (p.ln_gamma.size() != d || p.ln_beta.size() != d ||
      p.w_in.rows != d || p.w_in.cols != 2 * di ||
      p.conv_w.rows != di || p.conv_w.cols != k || p.conv_b.size() != di ||
      p.w_x.rows != di || p.w_x.cols != hp.dt_rank + 2 * n ||
      p.w_dt.rows != hp.dt_rank || p.w_dt.cols != di || p.b_dt.size() != di ||
      p.a_log.rows != di || p.a_log.cols != n || p.d_skip.size() != di ||
      p.w_out.rows != di || p.w_out.cols != d)
    throw ValidationError("ssm block parameter shape mismatch with hyperparams");
  if (state.h.size() != di * n || state.conv_tail.size() != di * (k - 1))
    throw ValidationError("ssm state shape mismatch with hyperparams");
}

}  // namespace detail

// Scans a chunk of `rows` D-vectors through one block (no residual). Output
// may alias the input buffer. State (hidden + conv tail) is written back.
inline void ssm_scan(const SsmBlockParams& p, const SsmHyperparams& hp,
                     std::span<const double> chunk, std::size_t rows,
                     BlockState& state, std::span<double> out) {
  detail::check_block_shapes(p, hp, state);
  const std::size_t d = hp.dim;
  const std::size_t di = hp.inner();
  const std::size_t n = hp.state;
  const std::size_t k = hp.conv_kernel;
  const std::size_t tail_len = k - 1;
  if (chunk.size() != rows * d || out.size() != rows * d)
    throw ValidationError("ssm scan buffer size mismatch");

  // A is parameter-only; hoist the exponentials out of the step loop.
  std::vector<double> a(di * n, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(static_cast<double>(p.a_log.w[i]));

  std::vector<double> d_skip_d(di);
  for (std::size_t ch = 0; ch < di; ++ch) d_skip_d[ch] = p.d_skip[ch];

  std::vector<double> ln(d), proj(2 * di), u(di), dt(di), xdbc(hp.dt_rank + 2 * n), o(di);
  for (std::size_t t = 0; t < rows; ++t) {
    const std::span<const double> x = chunk.subspan(t * d, d);
    layer_norm(x, p.ln_gamma, p.ln_beta, ln);
    matvec(p.w_in, ln, proj);
    // proj = [u_pre | g]; the conv consumes raw u_pre and the tail stores it.
    for (std::size_t ch = 0; ch < di; ++ch) {
      double* tail = state.conv_tail.data() + ch * tail_len;
      double acc = static_cast<double>(p.conv_b[ch]) +
                   static_cast<double>(p.conv_w.at(ch, k - 1)) * proj[ch];
      for (std::size_t j = 0; j < tail_len; ++j)
        acc += static_cast<double>(p.conv_w.at(ch, j)) * tail[j];
      for (std::size_t j = 0; j + 1 < tail_len; ++j) tail[j] = tail[j + 1];
      if (tail_len > 0) tail[tail_len - 1] = proj[ch];
      u[ch] = silu(acc);
    }
    matvec(p.w_x, u, xdbc);
    const std::span<const double> delta_low(xdbc.data(), hp.dt_rank);
    const std::span<const double> b_t(xdbc.data() + hp.dt_rank, n);
    const std::span<const double> c_t(xdbc.data() + hp.dt_rank + n, n);
    matvec(p.w_dt, delta_low, dt);
    for (std::size_t ch = 0; ch < di; ++ch)
      dt[ch] = softplus(dt[ch] + static_cast<double>(p.b_dt[ch]));

    ssm_core_step(a, dt, b_t, c_t, u, d_skip_d, state.h, o);

    std::span<double> y = out.subspan(t * d, d);
    for (std::size_t ch = 0; ch < di; ++ch) o[ch] *= silu(proj[di + ch]);
    matvec(p.w_out, o, y);
  }
}

// Residual wrapper: out = chunk + scan(chunk). In-place on `chunk`.
inline void block_forward(const SsmBlockParams& p, const SsmHyperparams& hp,
                          std::vector<double>& chunk, std::size_t rows,
                          BlockState& state) {
  std::vector<double> path(chunk.size(), 0.0);
  ssm_scan(p, hp, chunk, rows, state, path);
  for (std::size_t i = 0; i < chunk.size(); ++i) chunk[i] += path[i];
}

// Applies all M blocks to one chunk, in stream order. `chunk_index` must
// follow the state's counter exactly; an empty chunk leaves the state (and
// counter) untouched.
inline void stack_forward_streaming(const std::vector<SsmBlockParams>& blocks,
                                    const SsmHyperparams& hp,
                                    std::vector<double>& features, std::size_t rows,
                                    StreamState& state, std::uint64_t chunk_index) {
  if (blocks.size() != hp.blocks || state.blocks.size() != hp.blocks)
    throw ValidationError("block count mismatch with hyperparams");
  if (chunk_index != state.chunk_counter)
    throw ValidationError("out-of-order chunk counter");
  if (rows == 0) return;
  for (std::size_t m = 0; m < blocks.size(); ++m)
    block_forward(blocks[m], hp, features, rows, state.blocks[m]);
  ++state.chunk_counter;
}

// Z = ReLU(LN(T) W1 + b1) W2 + b2, one logit row per input row.
inline void classifier_head(const HeadParams& head, const SsmHyperparams& hp,
                            std::span<const double> features, std::size_t rows,
                            std::vector<double>& logits) {
  const std::size_t d = hp.dim;
  const std::size_t hidden_dim = d / 2;
  const std::size_t c = hp.classes;
  if (head.ln_gamma.size() != d || head.w1.rows != d || head.w1.cols != hidden_dim ||
      head.b1.size() != hidden_dim || head.w2.rows != hidden_dim || head.w2.cols != c ||
      head.b2.size() != c)
    throw ValidationError("head parameter shape mismatch with hyperparams");
  if (features.size() != rows * d) throw ValidationError("head input size mismatch");
  logits.assign(rows * c, 0.0);
  std::vector<double> ln(d), hidden(hidden_dim);
  for (std::size_t t = 0; t < rows; ++t) {
    layer_norm(features.subspan(t * d, d), head.ln_gamma, head.ln_beta, ln);
    matvec(head.w1, ln, hidden);
    add_bias(hidden, head.b1);
    for (auto& v : hidden) v = relu(v);
    std::span<double> z(logits.data() + t * c, c);
    matvec(head.w2, hidden, z);
    add_bias(z, head.b2);
  }
}

// Predicted class is the argmax; ties resolve to the lowest class index.
inline std::size_t argmax_class(std::span<const double> logit_row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logit_row.size(); ++i)
    if (logit_row[i] > logit_row[best]) best = i;
  return best;
}

struct PaddedLogits {
  std::vector<double> logits;        // total x classes
  std::vector<std::uint8_t> ignore;  // 1 = padded row, skip in losses/metrics
  std::size_t rows = 0;
  std::size_t classes = 0;
};

// Prepends h_b zero logit rows flagged ignore so logits align with the full
// label sequence of length `total`.
inline PaddedLogits pad_history_logits(std::span<const double> logits,
                                       std::size_t classes, std::size_t h_b,
                                       std::size_t total) {
  if (h_b > total) throw ValidationError("history length exceeds span length");
  if (logits.size() != (total - h_b) * classes)
    throw ValidationError("logit row count does not match span minus history");
  PaddedLogits out;
  out.rows = total;
  out.classes = classes;
  out.logits.assign(total * classes, 0.0);
  out.ignore.assign(total, 0);
  for (std::size_t r = 0; r < h_b; ++r) out.ignore[r] = 1;
  std::copy(logits.begin(), logits.end(), out.logits.begin() + static_cast<std::ptrdiff_t>(h_b * classes));
  return out;
}

}  // namespace evs
