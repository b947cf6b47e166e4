#pragma once

// Gradient-free fitting at nano scale via simultaneous-perturbation
// stochastic approximation: each iteration draws one Rademacher direction,
// probes the focal loss at theta +- c_t*delta on a fixed training stream,
// and steps along the estimated gradient. The loss of the unperturbed
// parameters is logged every iteration, so zero-gain runs produce an exactly
// constant curve.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "evstream/errors.hpp"
#include "evstream/metrics.hpp"
#include "evstream/pipeline.hpp"
#include "evstream/rng.hpp"

namespace evs {

struct NanoFitOptions {
  RunOptions run;                 // nano-scale hyperparams; fixed-step mode
  std::uint64_t iterations = 500;
  double a0 = 0.02;               // step-size schedule numerator
  double c0 = 0.05;               // perturbation schedule numerator
  double stability = 0.0;         // A in a_t = a0/(A+t+1)^0.602; 0 -> iterations/10
  std::uint64_t warmup = 0;       // leading events excluded from the loss
  double focal_alpha = 0.5;
  double focal_gamma = 2.0;
  std::uint64_t seed = 7;         // perturbation directions

  void validate() const {
    run.validate();
    if (a0 < 0.0 || c0 <= 0.0) throw ValidationError("require a0 >= 0 and c0 > 0");
  }
};

struct FitResult {
  std::vector<double> loss_curve;  // loss of theta_t, one row per iteration
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

namespace detail {

// Master copy of all parameters as doubles; materialized into the model's
// float tensors before every evaluation so updates accumulate without
// asymmetric rounding.
inline std::vector<double> flatten_params(const ModelParams& m) {
  std::vector<double> theta;
  for_each_tensor(m, [&](const std::string&, const std::vector<std::uint32_t>&,
                         const float* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) theta.push_back(static_cast<double>(data[i]));
  });
  return theta;
}

inline void unflatten_params(ModelParams& m, const std::vector<double>& theta) {
  std::size_t off = 0;
  for_each_tensor(m, [&](const std::string&, const std::vector<std::uint32_t>&,
                         float* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<float>(theta[off + i]);
    off += n;
  });
  if (off != theta.size()) throw ValidationError("parameter vector size mismatch");
}

}  // namespace detail

// Focal loss of a full pipeline pass, with the first `warmup` events serving
// as history-only context (their rows padded out of the loss).
inline double evaluate_stream_loss(const ModelParams& params, const NanoFitOptions& opt,
                                   std::span<const LabeledEvent> stream,
                                   const SensorGeometry& geometry) {
  if (opt.warmup >= stream.size())
    throw ValidationError("warmup leaves no events to score");
  const RunResult r = run_stream(params, opt.run, stream, geometry);
  const std::size_t c = r.classes;
  const std::span<const double> tail(r.logits.data() + opt.warmup * c,
                                     (r.rows - opt.warmup) * c);
  const PaddedLogits padded = pad_history_logits(tail, c, opt.warmup, r.rows);
  std::vector<std::uint8_t> labels(stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i) labels[i] = stream[i].label;
  const LossResult loss = focal_loss(padded.logits, c, labels, padded.ignore,
                                     opt.focal_alpha, opt.focal_gamma);
  if (loss.degenerate) throw ValidationError("loss degenerate: no scored events");
  return loss.value;
}

// Optimizes `params` in place; returns the per-iteration loss curve.
inline FitResult nano_fit(ModelParams& params, const NanoFitOptions& opt,
                          std::span<const LabeledEvent> stream,
                          const SensorGeometry& geometry) {
  opt.validate();
  if (stream.empty()) throw ValidationError("nano fit requires a nonempty stream");

  const double big_a =
      opt.stability > 0.0 ? opt.stability : static_cast<double>(opt.iterations) / 10.0;
  Rng rng(opt.seed);

  std::vector<double> theta = detail::flatten_params(params);
  std::vector<double> probe(theta.size());
  std::vector<double> delta(theta.size());

  auto loss_at = [&](const std::vector<double>& point, std::uint64_t iter) {
    detail::unflatten_params(params, point);
    const double value = evaluate_stream_loss(params, opt, stream, geometry);
    if (!std::isfinite(value))
      throw ValidationError("non-finite loss at iteration " + std::to_string(iter));
    return value;
  };

  FitResult fit;
  fit.initial_loss = loss_at(theta, 0);

  for (std::uint64_t t = 0; t < opt.iterations; ++t) {
    fit.loss_curve.push_back(loss_at(theta, t));

    const double a_t = opt.a0 / std::pow(big_a + static_cast<double>(t) + 1.0, 0.602);
    const double c_t = opt.c0 / std::pow(static_cast<double>(t) + 1.0, 0.101);
    for (auto& d : delta) d = static_cast<double>(rng.sign());

    for (std::size_t i = 0; i < theta.size(); ++i) probe[i] = theta[i] + c_t * delta[i];
    const double loss_plus = loss_at(probe, t);
    for (std::size_t i = 0; i < theta.size(); ++i) probe[i] = theta[i] - c_t * delta[i];
    const double loss_minus = loss_at(probe, t);

    const double ghat = (loss_plus - loss_minus) / (2.0 * c_t);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= a_t * ghat * delta[i];
  }

  detail::unflatten_params(params, theta);
  fit.final_loss = loss_at(theta, opt.iterations);
  return fit;
}

inline void write_loss_curve_csv(const FitResult& fit, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open loss curve CSV for writing: " + path);
  out << "iter,loss\n";
  char line[64];
  for (std::size_t i = 0; i < fit.loss_curve.size(); ++i) {
    std::snprintf(line, sizeof(line), "%zu,%.17g", i, fit.loss_curve[i]);
    out << line << '\n';
  }
  if (!out) throw ParseError("failed writing loss curve CSV: " + path);
}

}  // namespace evs
