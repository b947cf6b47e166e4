// Command-line front end: generate synthetic event streams, run the
// detection pipeline (adaptive or fixed-window), evaluate logits against
// labels, benchmark latency, and nano-scale fit weights.
//
// Exit codes: 0 success, 1 validation error, 2 I/O or parse error.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "evstream/evstream.hpp"

namespace {

using nlohmann::ordered_json;

struct GenerateArgs {
  std::string output;
  evs::GeneratorConfig cfg;
  double start_x = -1.0;  // negative = sensor center
  double start_y = -1.0;
};

struct RunArgs {
  std::string input;
  std::string mode = "adaptive";
  std::uint64_t fixed_step = 0;
  double fixed_window_ms = 0.0;
  std::string weights;
  std::string logits_path = "logits.csv";
  std::string latency_path = "latency.csv";
  std::string clock = "simulated";
  evs::RunOptions opt;
};

struct EvalArgs {
  std::string logits_path;
  std::string labels_path;
  std::string output;
  double bin_ms = 50.0;
  double tau_c = 0.5;
  double focal_alpha = 0.5;
  double focal_gamma = 2.0;
};

struct BenchArgs {
  RunArgs run;
  std::uint64_t repetitions = 1;
  double fixed_window_ms = 50.0;
  std::string output;
};

struct NanoFitArgs {
  std::string input;
  std::string weights_out;
  std::string curve_path = "loss_curve.csv";
  evs::NanoFitOptions opt;
};

void add_spatial_options(CLI::App* cmd, evs::SpatialHyperparams& s) {
  cmd->add_option("--k", s.k, "causal KNN neighbor count");
  cmd->add_option("--radius", s.radius, "weighted-distance neighbor cutoff (normalized units)");
  cmd->add_option("--lambda-s", s.lambda_s, "spatial distance weight");
  cmd->add_option("--lambda-t", s.lambda_t, "temporal distance weight");
  cmd->add_option("--time-scale", s.alpha, "temporal distance scale, 1/second");
  cmd->add_option("--tau", s.tau, "local event-rate horizon, seconds");
  cmd->add_option("--dim", s.dim, "feature dimension");
  cmd->add_option("--heads", s.heads, "attention heads (must divide dim)");
}

void add_ssm_options(CLI::App* cmd, evs::SsmHyperparams& t) {
  cmd->add_option("--blocks", t.blocks, "residual SSM block count");
  cmd->add_option("--state", t.state, "state dimension per inner channel");
  cmd->add_option("--expand", t.expand, "inner dimension multiplier");
  cmd->add_option("--conv-kernel", t.conv_kernel, "causal depthwise conv length");
  cmd->add_option("--dt-rank", t.dt_rank, "low-rank delta projection size");
  cmd->add_option("--classes", t.classes, "output class count");
}

void add_controller_options(CLI::App* cmd, evs::ControllerConfig& c) {
  cmd->add_option("--l-win-star", c.l_win_target, "window-latency budget, seconds");
  cmd->add_option("--l-inf-star", c.l_inf_target, "inference-latency budget, seconds");
  cmd->add_option("--k-p", c.k_p, "proportional gain");
  cmd->add_option("--k-i", c.k_i, "integral gain");
  cmd->add_option("--k-d", c.k_d, "derivative gain");
  cmd->add_option("--blend", c.lambda, "base-step blend weight in [0,1]");
  cmd->add_option("--s-min", c.s_min, "minimum step, events");
  cmd->add_option("--s-max", c.s_max, "maximum step, events");
  cmd->add_option("--h-base", c.h_base, "baseline history size, events");
  cmd->add_option("--integral-clamp", c.integral_clamp, "anti-windup cap on |error integral|, seconds");
  cmd->add_option("--rate-window", c.rate_window, "event-rate estimation window, seconds");
  cmd->add_option("--rls-forget", c.rls_forget, "cost-model forgetting factor");
}

void add_clock_options(CLI::App* cmd, RunArgs& a) {
  cmd->add_option("--clock", a.clock, "inference clock: simulated (deterministic) or wall")
      ->check(CLI::IsMember({"simulated", "wall"}));
  cmd->add_option("--clock-a", a.opt.clock_a, "simulated fixed cost, seconds");
  cmd->add_option("--clock-b", a.opt.clock_b, "simulated per-event cost, seconds");
  cmd->add_option("--clock-noise", a.opt.clock_noise, "simulated cost noise sigma, seconds");
}

double stream_mean_rate(std::span<const evs::LabeledEvent> s) {
  if (s.size() < 2) return static_cast<double>(s.size());
  const double dur =
      static_cast<double>(s.back().event.t_us - s.front().event.t_us) * 1e-6;
  return dur > 0.0 ? static_cast<double>(s.size()) / dur : static_cast<double>(s.size());
}

// Fixed-window mode is event-indexed: the window duration is converted to a
// constant per-chunk event count via the stream's mean rate.
std::uint64_t window_to_step(double window_ms, std::span<const evs::LabeledEvent> s) {
  const double events = window_ms * 1e-3 * stream_mean_rate(s);
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(events)));
}

void resolve_run_mode(RunArgs& a, std::span<const evs::LabeledEvent> stream) {
  a.opt.wall_clock = a.clock == "wall";
  a.opt.model.ssm.dim = a.opt.model.spatial.dim;  // single --dim flag feeds both
  if (a.mode == "adaptive") {
    a.opt.adaptive = true;
    return;
  }
  a.opt.adaptive = false;
  if (a.fixed_step >= 1)
    a.opt.fixed_step = a.fixed_step;
  else if (a.fixed_window_ms > 0.0)
    a.opt.fixed_step = window_to_step(a.fixed_window_ms, stream);
  else
    throw evs::ValidationError("fixed mode needs --fixed-step or --fixed-window-ms");
}

evs::ModelParams load_or_init(const RunArgs& a) {
  evs::ModelParams params = evs::init_weights(a.opt.model, a.opt.seed);
  if (!a.weights.empty()) evs::load_weights(params, a.weights);
  return params;
}

int cmd_generate(const GenerateArgs& args) {
  evs::GeneratorConfig cfg = args.cfg;
  cfg.trajectory.start_x = args.start_x < 0.0 ? cfg.geometry.width / 2.0 : args.start_x;
  cfg.trajectory.start_y = args.start_y < 0.0 ? cfg.geometry.height / 2.0 : args.start_y;
  const auto stream = evs::generate_stream(cfg);
  evs::write_events(args.output, cfg.geometry, stream);
  std::printf("wrote %zu events to %s (mean rate %.1f ev/s)\n", stream.size(),
              args.output.c_str(), stream_mean_rate(stream));
  return 0;
}

int cmd_run(RunArgs& args) {
  const auto [geometry, stream] = evs::read_events(args.input);
  resolve_run_mode(args, stream);
  const evs::ModelParams params = load_or_init(args);

  const evs::RunResult r = evs::run_stream(params, args.opt, stream, geometry);
  evs::write_logits_csv(r, stream, args.logits_path);
  evs::write_latency_csv(r.chunks, args.latency_path);

  double mean_total = 0.0;
  for (const auto& c : r.chunks) mean_total += c.record.total;
  if (!r.chunks.empty()) mean_total /= static_cast<double>(r.chunks.size());
  std::printf("%zu events in %zu chunks (%s mode); mean L %.3f ms\n", r.rows,
              r.chunks.size(), args.opt.adaptive ? "adaptive" : "fixed",
              mean_total * 1e3);
  std::printf("logits: %s\nlatency: %s\n", args.logits_path.c_str(),
              args.latency_path.c_str());
  return 0;
}

int cmd_eval(const EvalArgs& args) {
  const evs::LogitsFile lf = evs::read_logits_csv(args.logits_path);
  const auto [geometry, stream] = evs::read_events(args.labels_path);
  if (stream.size() != lf.rows)
    throw evs::ValidationError("logits rows do not match label events");
  for (std::size_t i = 0; i < stream.size(); ++i)
    if (stream[i].event.t_us != lf.t_us[i])
      throw evs::ValidationError("timestamp mismatch between logits and labels at row " +
                                 std::to_string(i));
  if (lf.classes != 2)
    throw evs::ValidationError("evaluation expects binary logits");

  std::vector<std::uint8_t> labels(stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i) labels[i] = stream[i].label;

  const evs::PointMetrics pm = evs::point_metrics(lf.pred, labels, lf.ignore);
  evs::WindowEvalConfig wc;
  wc.bin_duration = args.bin_ms * 1e-3;
  wc.tau_c = args.tau_c;
  wc.geometry = geometry;
  const evs::WindowMetrics wm = evs::window_metrics(stream, lf.pred, lf.ignore, wc);
  const evs::LossResult loss = evs::focal_loss(lf.logits, lf.classes, labels, lf.ignore,
                                               args.focal_alpha, args.focal_gamma);

  ordered_json j;
  j["rows"] = lf.rows;
  j["point"] = {{"Pd", pm.pd},       {"Fa", pm.fa},   {"IoU_pos", pm.iou_pos},
                {"Prec", pm.prec},   {"ACC", pm.acc},
                {"degenerate",
                 {{"Pd", pm.pd_degenerate},
                  {"Fa", pm.fa_degenerate},
                  {"IoU_pos", pm.iou_degenerate},
                  {"Prec", pm.prec_degenerate},
                  {"ACC", pm.acc_degenerate}}},
                {"tally",
                 {{"TP", pm.tally.tp}, {"FP", pm.tally.fp}, {"FN", pm.tally.fn},
                  {"TN", pm.tally.tn}}}};
  j["window"] = {{"Pd", wm.pd},
                 {"Fa_density", wm.fa_density},
                 {"degenerate", {{"Pd", wm.pd_degenerate}, {"Fa", wm.fa_degenerate}}},
                 {"tally",
                  {{"N_obj", wm.tally.n_obj},
                   {"N_det", wm.tally.n_det},
                   {"N_fp_comp", wm.tally.n_fp_comp},
                   {"N_bins", wm.tally.n_bins}}}};
  j["focal_loss"] = {{"value", loss.value}, {"degenerate", loss.degenerate}};
  j["config"] = {{"bin_duration_s", wc.bin_duration},
                 {"tau_c", wc.tau_c},
                 {"width", geometry.width},
                 {"height", geometry.height}};

  std::printf("         %10s %12s %10s %10s %10s\n", "Pd", "Fa", "IoU_pos", "Prec", "ACC");
  std::printf("point    %10.4f %12.3e %10.4f %10.4f %10.4f\n", pm.pd, pm.fa, pm.iou_pos,
              pm.prec, pm.acc);
  std::printf("window   %10.4f %12.3e %10s %10s %10s\n", wm.pd, wm.fa_density, "-", "-", "-");
  std::printf("focal loss %.6f%s\n", loss.value, loss.degenerate ? " (degenerate)" : "");

  if (args.output.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    std::ofstream out(args.output);
    if (!out) throw evs::ParseError("cannot open eval output: " + args.output);
    out << j.dump(2) << '\n';
    std::printf("eval json: %s\n", args.output.c_str());
  }
  return 0;
}

struct LatencySummary {
  double mean_ls = 0, mean_li = 0, mean_l = 0;
  double p50_l = 0, p95_l = 0;
  bool identity_ok = true;
};

LatencySummary summarize(const std::vector<evs::ChunkLog>& chunks) {
  LatencySummary s;
  std::vector<double> totals;
  for (const auto& c : chunks) {
    s.mean_ls += c.record.l_s;
    s.mean_li += c.record.l_i;
    s.mean_l += c.record.total;
    totals.push_back(c.record.total);
    if (c.record.total != c.record.l_e + c.record.l_s + c.record.l_i) s.identity_ok = false;
  }
  if (chunks.empty()) return s;
  const double n = static_cast<double>(chunks.size());
  s.mean_ls /= n;
  s.mean_li /= n;
  s.mean_l /= n;
  std::sort(totals.begin(), totals.end());
  s.p50_l = totals[totals.size() / 2];
  s.p95_l = totals[std::min(totals.size() - 1, totals.size() * 95 / 100)];
  return s;
}

int cmd_bench(BenchArgs& args) {
  const auto [geometry, stream] = evs::read_events(args.run.input);

  args.run.clock = "wall";  // benchmarking measures real inference time
  args.run.mode = "adaptive";
  resolve_run_mode(args.run, stream);
  const evs::ModelParams params = load_or_init(args.run);

  evs::RunOptions adaptive = args.run.opt;
  evs::RunOptions fixed = args.run.opt;
  fixed.adaptive = false;
  fixed.fixed_step = window_to_step(args.fixed_window_ms, stream);

  ordered_json reps = ordered_json::array();
  std::printf("%-4s %-10s %12s %12s %12s %12s %12s  %s\n", "rep", "mode", "mean_Ls_ms",
              "mean_Li_ms", "mean_L_ms", "p50_L_ms", "p95_L_ms", "identity");
  for (std::uint64_t rep = 0; rep < args.repetitions; ++rep) {
    for (const bool is_adaptive : {true, false}) {
      const auto& opt = is_adaptive ? adaptive : fixed;
      const evs::RunResult r = evs::run_stream(params, opt, stream, geometry);
      const LatencySummary s = summarize(r.chunks);
      const char* mode = is_adaptive ? "adaptive" : "fixed";
      std::printf("%-4llu %-10s %12.4f %12.4f %12.4f %12.4f %12.4f  %s\n",
                  static_cast<unsigned long long>(rep), mode, s.mean_ls * 1e3,
                  s.mean_li * 1e3, s.mean_l * 1e3, s.p50_l * 1e3, s.p95_l * 1e3,
                  s.identity_ok ? "ok" : "VIOLATED");
      reps.push_back({{"rep", rep},
                      {"mode", mode},
                      {"chunks", r.chunks.size()},
                      {"mean_Ls_ms", s.mean_ls * 1e3},
                      {"mean_Li_ms", s.mean_li * 1e3},
                      {"mean_L_ms", s.mean_l * 1e3},
                      {"p50_L_ms", s.p50_l * 1e3},
                      {"p95_L_ms", s.p95_l * 1e3},
                      {"identity_ok", s.identity_ok}});
    }
  }
  if (!args.output.empty()) {
    ordered_json j;
    j["fixed_window_ms"] = args.fixed_window_ms;
    j["fixed_step_events"] = fixed.fixed_step;
    j["repetitions"] = reps;
    std::ofstream out(args.output);
    if (!out) throw evs::ParseError("cannot open bench output: " + args.output);
    out << j.dump(2) << '\n';
  }
  return 0;
}

int cmd_nano_fit(NanoFitArgs& args) {
  const auto [geometry, stream] = evs::read_events(args.input);
  args.opt.run.model.ssm.dim = args.opt.run.model.spatial.dim;
  if (args.opt.run.fixed_step < 1) args.opt.run.fixed_step = 256;
  args.opt.run.adaptive = false;

  evs::ModelParams params = evs::init_weights(args.opt.run.model, args.opt.run.seed);
  const evs::FitResult fit = evs::nano_fit(params, args.opt, stream, geometry);
  evs::write_loss_curve_csv(fit, args.curve_path);
  if (!args.weights_out.empty()) evs::save_weights(params, args.weights_out);

  const double drop = fit.initial_loss > 0.0
                          ? 100.0 * (1.0 - fit.final_loss / fit.initial_loss)
                          : 0.0;
  std::printf("loss %.6f -> %.6f (%.1f%% reduction) over %llu iterations\n",
              fit.initial_loss, fit.final_loss, drop,
              static_cast<unsigned long long>(args.opt.iterations));
  std::printf("loss curve: %s\n", args.curve_path.c_str());
  if (!args.weights_out.empty()) std::printf("weights: %s\n", args.weights_out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-stream small-target detection with variable-rate inference"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "Read options from a key = value file, one [section] per subcommand");

  GenerateArgs gen;
  gen.cfg.geometry = {64, 64};
  auto* cgen = app.add_subcommand("generate", "Generate a synthetic labeled event stream");
  cgen->fallthrough();
  cgen->add_option("--output", gen.output, "output event file (.csv or binary)")->required();
  cgen->add_option("--width", gen.cfg.geometry.width, "sensor width, pixels");
  cgen->add_option("--height", gen.cfg.geometry.height, "sensor height, pixels");
  cgen->add_option("--duration", gen.cfg.duration, "stream duration, seconds");
  cgen->add_option("--background-rate", gen.cfg.background_rate, "background events/s over the sensor");
  cgen->add_option("--target-rate", gen.cfg.target_rate, "target events/s along the trajectory");
  cgen->add_option("--target-sigma", gen.cfg.target_sigma, "target spatial spread, pixels");
  cgen->add_option("--start-x", gen.start_x, "target start x (default: center)");
  cgen->add_option("--start-y", gen.start_y, "target start y (default: center)");
  cgen->add_option("--vel-x", gen.cfg.trajectory.vel_x, "target velocity x, px/s");
  cgen->add_option("--vel-y", gen.cfg.trajectory.vel_y, "target velocity y, px/s");
  cgen->add_option("--jitter-amp", gen.cfg.trajectory.jitter_amp, "trajectory jitter amplitude, px");
  cgen->add_option("--jitter-hz", gen.cfg.trajectory.jitter_hz, "trajectory jitter frequency, Hz");
  cgen->add_option("--seed", gen.cfg.seed, "generator seed");

  RunArgs run;
  auto* crun = app.add_subcommand("run", "Run the detection pipeline over an event file");
  crun->fallthrough();
  crun->add_option("--input", run.input, "event file (.csv or binary)")->required();
  crun->add_option("--mode", run.mode, "adaptive (controller on) or fixed")
      ->check(CLI::IsMember({"adaptive", "fixed"}));
  crun->add_option("--fixed-step", run.fixed_step, "fixed mode: events per chunk");
  crun->add_option("--fixed-window-ms", run.fixed_window_ms,
                   "fixed mode: window duration, converted to a constant per-chunk event "
                   "count via the stream's mean event rate");
  crun->add_option("--weights", run.weights, "weights file (absent: seeded init)");
  crun->add_option("--seed", run.opt.seed, "seed for init and simulated clock");
  crun->add_option("--logits", run.logits_path, "output logits CSV");
  crun->add_option("--latency", run.latency_path, "output latency CSV");
  add_spatial_options(crun, run.opt.model.spatial);
  add_ssm_options(crun, run.opt.model.ssm);
  add_controller_options(crun, run.opt.controller);
  add_clock_options(crun, run);

  EvalArgs eval;
  auto* ceval = app.add_subcommand("eval", "Evaluate logits against labeled events");
  ceval->fallthrough();
  ceval->add_option("--logits", eval.logits_path, "logits CSV from run")->required();
  ceval->add_option("--labels", eval.labels_path, "labeled event file")->required();
  ceval->add_option("--output", eval.output, "eval JSON path (default: stdout)");
  ceval->add_option("--bin-ms", eval.bin_ms, "window-metric bin duration, ms");
  ceval->add_option("--tau-c", eval.tau_c, "object coverage threshold (0,1]");
  ceval->add_option("--focal-alpha", eval.focal_alpha, "focal loss alpha");
  ceval->add_option("--focal-gamma", eval.focal_gamma, "focal loss gamma");

  BenchArgs bench;
  auto* cbench = app.add_subcommand("bench", "Benchmark adaptive vs fixed-window latency");
  cbench->fallthrough();
  cbench->add_option("--input", bench.run.input, "event file (.csv or binary)")->required();
  cbench->add_option("--repetitions", bench.repetitions, "sequential repetitions");
  cbench->add_option("--fixed-window-ms", bench.fixed_window_ms,
                     "baseline window duration, converted to a constant per-chunk event "
                     "count via the stream's mean event rate");
  cbench->add_option("--weights", bench.run.weights, "weights file (absent: seeded init)");
  cbench->add_option("--seed", bench.run.opt.seed, "seed for init");
  cbench->add_option("--output", bench.output, "bench summary JSON path");
  add_spatial_options(cbench, bench.run.opt.model.spatial);
  add_ssm_options(cbench, bench.run.opt.model.ssm);
  add_controller_options(cbench, bench.run.opt.controller);

  NanoFitArgs nano;
  // Nano-scale defaults keep SPSA probes fast; all remain overridable.
  nano.opt.run.model.spatial.k = 4;
  nano.opt.run.model.spatial.dim = 16;
  nano.opt.run.model.spatial.heads = 2;
  nano.opt.run.model.ssm.dim = 16;
  nano.opt.run.model.ssm.state = 4;
  nano.opt.run.model.ssm.blocks = 1;
  nano.opt.run.model.ssm.conv_kernel = 2;
  nano.opt.run.model.ssm.dt_rank = 4;
  nano.opt.run.controller.h_base = 64;
  auto* cnano = app.add_subcommand("nano-fit", "Gradient-free SPSA fit at nano scale");
  cnano->fallthrough();
  cnano->add_option("--input", nano.input, "training event file")->required();
  cnano->add_option("--iterations", nano.opt.iterations, "SPSA iterations");
  cnano->add_option("--a0", nano.opt.a0, "step-size schedule numerator");
  cnano->add_option("--c0", nano.opt.c0, "perturbation schedule numerator");
  cnano->add_option("--stability", nano.opt.stability, "step schedule offset A (0: iterations/10)");
  cnano->add_option("--warmup", nano.opt.warmup, "leading events excluded from the loss");
  cnano->add_option("--focal-alpha", nano.opt.focal_alpha, "focal loss alpha");
  cnano->add_option("--focal-gamma", nano.opt.focal_gamma, "focal loss gamma");
  cnano->add_option("--seed", nano.opt.run.seed, "weight init seed");
  cnano->add_option("--spsa-seed", nano.opt.seed, "perturbation direction seed");
  cnano->add_option("--fixed-step", nano.opt.run.fixed_step, "events per chunk during fitting");
  cnano->add_option("--weights-out", nano.weights_out, "save fitted weights here");
  cnano->add_option("--loss-curve", nano.curve_path, "output loss curve CSV");
  add_spatial_options(cnano, nano.opt.run.model.spatial);
  add_ssm_options(cnano, nano.opt.run.model.ssm);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (cgen->parsed()) return cmd_generate(gen);
    if (crun->parsed()) return cmd_run(run);
    if (ceval->parsed()) return cmd_eval(eval);
    if (cbench->parsed()) return cmd_bench(bench);
    if (cnano->parsed()) return cmd_nano_fit(nano);
  } catch (const evs::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const evs::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
