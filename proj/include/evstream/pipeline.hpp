#pragma once

// End-to-end stream pipeline: chunked event consumption, per-event spatial
// encoding against the bounded history, streaming SSM forward, classifier
// head, latency accounting, and (in adaptive mode) the step-size controller.
// Strictly causal: an event influences only logits at its own index or
// later, and control decisions apply from the next chunk on.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "evstream/controller.hpp"
#include "evstream/errors.hpp"
#include "evstream/event_io.hpp"
#include "evstream/events.hpp"
#include "evstream/model.hpp"

namespace evs {

struct RunOptions {
  ModelHyperparams model;
  ControllerConfig controller;
  bool adaptive = true;
  std::uint64_t fixed_step = 0;  // events per chunk when not adaptive
  std::uint64_t seed = 1;
  // Inference clock: wall time for real benchmarking, or a deterministic
  // simulated affine cost for reproducible runs and controller tests.
  bool wall_clock = false;
  double clock_a = 1e-3;
  double clock_b = 1e-6;
  double clock_noise = 0.0;

  void validate() const {
    model.validate();
    controller.validate();
    if (!adaptive && fixed_step < 1)
      throw ValidationError("fixed mode requires a step of at least 1 event");
  }
};

struct ChunkLog {
  std::uint64_t tick = 0;
  double rate = 0.0;         // events/second at chunk close
  std::uint64_t step = 0;    // events consumed this chunk
  std::uint64_t history = 0; // history capacity during this chunk
  LatencyRecord record;
};

struct RunResult {
  std::vector<double> logits;        // rows x classes
  std::vector<std::uint8_t> pred;    // argmax per row
  std::vector<std::uint8_t> ignore;  // aligned mask, all zero for full runs
  std::size_t rows = 0;
  std::size_t classes = 0;
  std::vector<ChunkLog> chunks;
};

// Runs the full pipeline over one in-memory stream.
inline RunResult run_stream(const ModelParams& params, const RunOptions& opt,
                            std::span<const LabeledEvent> stream,
                            const SensorGeometry& geometry) {
  opt.validate();
  geometry.validate();
  const auto& shp = opt.model.spatial;
  const auto& thp = opt.model.ssm;

  RunResult result;
  result.classes = thp.classes;
  if (stream.empty()) return result;

  std::vector<std::uint64_t> timestamps(stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i) timestamps[i] = stream[i].event.t_us;
  const std::uint64_t t0_us = timestamps.front();

  ControllerState cstate = ControllerState::initial(opt.controller);
  LatencyModel cost_model(opt.controller.rls_forget);
  SimulatedClock sim_clock(opt.clock_a, opt.clock_b, opt.clock_noise, opt.seed);
  WallTimer timer;

  const std::uint64_t h0 = std::max<std::uint64_t>(opt.controller.h_base, shp.k);
  HistoryBuffer history(h0, shp.dim);
  StreamState tstate(thp);

  StreamCursor cursor(stream);
  std::vector<double> features;
  std::vector<double> chunk_logits;
  std::uint64_t tick = 0;
  std::uint64_t hist_now = h0;

  while (!cursor.exhausted()) {
    const std::uint64_t step = opt.adaptive ? cstate.step : opt.fixed_step;
    const std::size_t before = cursor.position();
    const auto chunk = cursor.take_chunk(step);
    const std::size_t rows = chunk.size();

    timer.start();
    features.assign(rows * shp.dim, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
      const auto& le = chunk[i];
      NormalizedPoint pt;
      pt.u = static_cast<double>(le.event.x) / geometry.width;
      pt.v = static_cast<double>(le.event.y) / geometry.height;
      pt.t_s = static_cast<double>(le.event.t_us - t0_us) * 1e-6;
      const auto row = spatial_encode_event(pt, static_cast<double>(le.event.p),
                                            le.event.t_us, history, params.spatial, shp);
      std::copy(row.begin(), row.end(), features.begin() + static_cast<std::ptrdiff_t>(i * shp.dim));
    }
    stack_forward_streaming(params.blocks, thp, features, rows, tstate, tick);
    classifier_head(params.head, thp, features, rows, chunk_logits);
    const double elapsed = timer.stop();

    const double l_i = opt.wall_clock ? elapsed : sim_clock.measure(static_cast<double>(rows));
    const std::uint64_t t_close = chunk.back().event.t_us;
    double l_s = 0.0;  // event-mean sampling latency over the chunk
    for (const auto& le : chunk) l_s += static_cast<double>(t_close - le.event.t_us) * 1e-6;
    l_s /= static_cast<double>(rows);

    const double rate = estimate_rate({timestamps.data(), before + rows}, t_close,
                                      opt.controller.rate_window);

    ChunkLog log;
    log.tick = tick;
    log.rate = rate;
    log.step = rows;
    log.history = hist_now;
    if (opt.adaptive) {
      const ControlDecision d =
          control_tick(cstate, rate, l_i, l_s, shp.k, cost_model, opt.controller);
      log.record = d.record;
      history.set_capacity(d.h_next);
      hist_now = d.h_next;
    } else {
      log.record = make_latency_record(l_s, l_i);
    }
    result.chunks.push_back(log);

    result.logits.insert(result.logits.end(), chunk_logits.begin(), chunk_logits.end());
    for (std::size_t i = 0; i < rows; ++i) {
      const std::span<const double> row(chunk_logits.data() + i * thp.classes, thp.classes);
      result.pred.push_back(static_cast<std::uint8_t>(argmax_class(row)));
    }
    ++tick;
  }

  result.rows = stream.size();
  result.ignore.assign(result.rows, 0);
  return result;
}

// ---- plot-ready CSV formats ----

inline constexpr const char* kLatencyCsvHeader = "tick,rate,step,hist,L_s_ms,L_i_ms,L_ms";

inline void write_latency_csv(const std::vector<ChunkLog>& chunks, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open latency CSV for writing: " + path);
  out << kLatencyCsvHeader << '\n';
  char line[256];
  for (const auto& c : chunks) {
    std::snprintf(line, sizeof(line), "%llu,%.17g,%llu,%llu,%.17g,%.17g,%.17g",
                  static_cast<unsigned long long>(c.tick), c.rate,
                  static_cast<unsigned long long>(c.step),
                  static_cast<unsigned long long>(c.history), c.record.l_s * 1e3,
                  c.record.l_i * 1e3, c.record.total * 1e3);
    out << line << '\n';
  }
  if (!out) throw ParseError("failed writing latency CSV: " + path);
}

// One row per event: index, timestamp, all logits, predicted class, ignore.
inline void write_logits_csv(const RunResult& r, std::span<const LabeledEvent> stream,
                             const std::string& path) {
  if (stream.size() != r.rows) throw ValidationError("logit rows do not match stream");
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open logits CSV for writing: " + path);
  out << "idx,t_us";
  for (std::size_t c = 0; c < r.classes; ++c) out << ",logit" << c;
  out << ",pred,ignore\n";
  char num[64];
  for (std::size_t i = 0; i < r.rows; ++i) {
    out << i << ',' << stream[i].event.t_us;
    for (std::size_t c = 0; c < r.classes; ++c) {
      std::snprintf(num, sizeof(num), ",%.17g", r.logits[i * r.classes + c]);
      out << num;
    }
    out << ',' << static_cast<unsigned>(r.pred[i]) << ','
        << static_cast<unsigned>(r.ignore[i]) << '\n';
  }
  if (!out) throw ParseError("failed writing logits CSV: " + path);
}

struct LogitsFile {
  std::vector<std::uint64_t> t_us;
  std::vector<double> logits;  // rows x classes
  std::vector<std::uint8_t> pred;
  std::vector<std::uint8_t> ignore;
  std::size_t rows = 0;
  std::size_t classes = 0;
};

inline LogitsFile read_logits_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open logits CSV: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty logits CSV", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  // Header fixes the class count: idx,t_us,logit0..logit{C-1},pred,ignore.
  std::size_t n_fields = 1;
  for (const char ch : line) n_fields += ch == ',' ? 1 : 0;
  if (n_fields < 6 || line.rfind("idx,t_us,logit0,", 0) != 0)
    throw ParseError("unrecognized logits CSV header", 1);
  LogitsFile f;
  f.classes = n_fields - 4;

  std::uint64_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        fields.emplace_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (fields.size() != f.classes + 4)
      throw ParseError("wrong field count in logits CSV", lineno);
    const auto idx = detail::parse_int_field<std::uint64_t>(fields[0], "idx", lineno);
    if (idx != f.rows) throw ParseError("non-sequential idx in logits CSV", lineno);
    f.t_us.push_back(detail::parse_int_field<std::uint64_t>(fields[1], "t_us", lineno));
    for (std::size_t c = 0; c < f.classes; ++c) {
      const std::string& s = fields[2 + c];
      double v = 0.0;
      const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size())
        throw ParseError("bad logit value in logits CSV", lineno);
      f.logits.push_back(v);
    }
    f.pred.push_back(static_cast<std::uint8_t>(
        detail::parse_int_field<std::uint32_t>(fields[f.classes + 2], "pred", lineno)));
    const auto ig =
        detail::parse_int_field<std::uint32_t>(fields[f.classes + 3], "ignore", lineno);
    if (ig > 1) throw ParseError("ignore flag must be 0 or 1", lineno);
    f.ignore.push_back(static_cast<std::uint8_t>(ig));
    ++f.rows;
  }
  return f;
}

}  // namespace evs
