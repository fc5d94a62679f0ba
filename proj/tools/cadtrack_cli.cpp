#include <iostream>

#include <CLI11.hpp>

#include "cadtrack/check/suites.hpp"
#include "cadtrack/harness/bench.hpp"
#include "cadtrack/harness/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cadtrack;

namespace {

std::vector<std::size_t> parse_sizes(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream s(csv);
  std::string item;
  while (std::getline(s, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    const auto v = std::stoull(item, &pos);
    if (pos != item.size() || v == 0) throw std::invalid_argument("bad size '" + item + "'");
    out.push_back(v);
  }
  return out;
}

RunConfig config_or_default(const std::string& path) {
  return path.empty() ? RunConfig::for_profile("toy") : load_run_config(path);
}

template <typename T>
ModelParams<T> load_or_init(const RunConfig& cfg, const std::string& weights) {
  Rng rng(cfg.seed);
  auto p = ModelParams<T>::init(cfg.model, rng);
  if (!weights.empty()) load_params(weights, p);
  return p;
}

void print_metrics(const TrackMetrics& m) {
  std::cout << "frames " << m.frames << "  mean IoU " << m.mean_iou << "  PR@20px " << m.precision_20px << "  SR-AUC "
            << m.success_auc << "\n";
}

template <typename T>
int cmd_init_weights(const std::string& profile, std::uint64_t seed, const std::string& out) {
  const auto cfg = RunConfig::for_profile(profile);
  Rng rng(seed);
  const auto p = ModelParams<T>::init(cfg.model, rng);
  save_params(out, p);
  std::cout << "wrote " << param_count(p) << " parameters to " << out << "\n";
  return 0;
}

template <typename T>
int cmd_track(const RunConfig& cfg, const std::string& weights, const std::string& out) {
  const auto params = load_or_init<T>(cfg, weights);
  const auto seq = acquire_sequence(cfg);
  std::vector<FrameRecord<T>> records;
  const auto boxes = run_tracker(params, cfg, seq, &records);
  print_metrics(write_track_outputs(out, boxes, records, seq.gt));
  std::cout << "wrote " << (fs::path(out) / "pred.txt").string() << "\n";
  return 0;
}

template <typename T>
int cmd_overfit(const RunConfig& cfg, const std::string& out) {
  fs::create_directories(out);
  const auto seq = acquire_sequence(cfg);
  Rng rng(cfg.seed);
  auto params = ModelParams<T>::init(cfg.model, rng);
  std::ofstream loss_csv(fs::path(out) / "loss.csv");
  loss_csv << std::setprecision(9);
  const auto report = train_overfit(params, cfg, seq, &loss_csv);
  save_params((fs::path(out) / "weights.cadw").string(), params);
  std::vector<FrameRecord<T>> records;
  const auto boxes = run_tracker(params, cfg, seq, &records);
  const auto m = write_track_outputs(out, boxes, records, seq.gt);
  std::cout << cfg.steps << " steps in " << report.seconds << " s, final loss " << report.log.back().loss << "\n";
  print_metrics(m);
  std::cout << "outputs in " << out << "\n";
  return 0;
}

template <typename T>
int cmd_dump_maps(const RunConfig& cfg, const std::string& weights, std::size_t frame, const std::string& out) {
  const auto params = load_or_init<T>(cfg, weights);
  const auto seq = acquire_sequence(cfg);
  if (frame < 2 || frame > seq.size()) {
    throw std::invalid_argument("--frame must lie in [2, " + std::to_string(seq.size()) + "]");
  }
  Tracker<T> tracker(params, cfg);
  tracker.init(seq.rgb[0], seq.tir[0], seq.gt[0]);
  FrameRecord<T> rec;
  for (std::size_t i = 1; i < frame; ++i) rec = tracker.step(seq.rgb[i], seq.tir[i]);
  const auto sum = dump_maps(rec, frame, out);
  for (const auto& f : sum.files) std::cout << f << "\n";
  std::cout << "score range [" << sum.score_min << ", " << sum.score_max << "]\n";
  return 0;
}

template <typename F>
int dispatch(ElementType e, F&& f) {
  return e == ElementType::f64 ? f(double{}) : f(float{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RGB-T single-object tracker: reference implementation and harness"};
  app.require_subcommand(1);

  std::string profile = "toy", out, config, sequence, weights, dtype = "f32", suite, kernel, sizes, csv;
  std::uint64_t seed = 7;
  std::size_t frames = 20, steps = 0, frame = 2, side = 128, repeats = 3, embed_dim = 64;
  double misalignment = 2.0;
  std::string motion = "drift";

  auto* init = app.add_subcommand("init-weights", "Write freshly initialized weights");
  init->add_option("--profile", profile)->check(CLI::IsMember({"toy", "paper"}));
  init->add_option("--seed", seed);
  init->add_option("--out", out)->required();
  init->add_option("--dtype", dtype)->check(CLI::IsMember({"f32", "f64"}));

  auto* track = app.add_subcommand("track", "Track a sequence and write predictions and diagnostics");
  track->add_option("--config", config)->required()->check(CLI::ExistingFile);
  track->add_option("--sequence", sequence)->required()->check(CLI::ExistingDirectory);
  track->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
  track->add_option("--out", out)->required();

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic RGB/TIR sequence");
  gen->add_option("--seed", seed);
  gen->add_option("--frames", frames)->check(CLI::Range(2, 100000));
  gen->add_option("--out", out)->required();
  gen->add_option("--side", side, "frame side in pixels")->check(CLI::Range(16, 4096));
  gen->add_option("--misalignment", misalignment, "TIR misalignment amplitude in pixels");
  gen->add_option("--motion", motion)->check(CLI::IsMember({"drift", "random_walk"}));

  auto* overfit = app.add_subcommand("overfit", "Overfit the toy model on one sequence, then track it");
  overfit->add_option("--config", config)->required()->check(CLI::ExistingFile);
  overfit->add_option("--steps", steps);
  overfit->add_option("--sequence", sequence)->check(CLI::ExistingDirectory);
  overfit->add_option("--out", out, "output directory (default: output_dir from the config)");

  auto* bench = app.add_subcommand("bench", "Time an interaction kernel against token count");
  bench->add_option("--kernel", kernel)->required()->check(CLI::IsMember({"mfi", "attn", "linear", "quadratic"}));
  bench->add_option("--sizes", sizes)->required();
  bench->add_option("--repeats", repeats)->check(CLI::Range(1, 100));
  bench->add_option("--embed-dim", embed_dim)->check(CLI::Range(8, 4096));
  bench->add_option("--csv", csv, "write raw timings here");

  auto* check = app.add_subcommand("check", "Run a self-check suite");
  check->add_option("--suite", suite)->required()->check(CLI::IsMember({"oracles", "grads", "invariants"}));

  auto* dump = app.add_subcommand("dump-maps", "Dump score, gate and router maps for one frame");
  dump->add_option("--frame", frame)->required();
  dump->add_option("--config", config)->check(CLI::ExistingFile);
  dump->add_option("--sequence", sequence)->check(CLI::ExistingDirectory);
  dump->add_option("--weights", weights)->check(CLI::ExistingFile);
  dump->add_option("--out", out, "output directory (default: maps)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*init) {
      return dtype == "f64" ? cmd_init_weights<double>(profile, seed, out) : cmd_init_weights<float>(profile, seed, out);
    }
    if (*gen) {
      GenOptions o;
      o.seed = seed;
      o.frames = frames;
      o.frame_side = side;
      o.misalignment_px = misalignment;
      o.motion = parse_motion_model(motion);
      save_sequence(gen_sequence(o), out);
      std::cout << "wrote " << frames << " frames to " << out << "\n";
      return 0;
    }
    if (*track) {
      auto cfg = load_run_config(config);
      cfg.sequence = sequence;
      return dispatch(cfg.element_type, [&](auto t) { return cmd_track<decltype(t)>(cfg, weights, out); });
    }
    if (*overfit) {
      auto cfg = load_run_config(config);
      if (steps > 0) cfg.steps = steps;
      if (!sequence.empty()) cfg.sequence = sequence;
      const std::string dir = out.empty() ? cfg.output_dir : out;
      return dispatch(cfg.element_type, [&](auto t) { return cmd_overfit<decltype(t)>(cfg, dir); });
    }
    if (*dump) {
      auto cfg = config_or_default(config);
      if (!sequence.empty()) cfg.sequence = sequence;
      const std::string dir = out.empty() ? "maps" : out;
      return dispatch(cfg.element_type, [&](auto t) { return cmd_dump_maps<decltype(t)>(cfg, weights, frame, dir); });
    }
    if (*bench) {
      BenchOptions opt;
      opt.repeats = repeats;
      opt.embed_dim = embed_dim;
      const auto res = bench_scaling(parse_bench_kernel(kernel), parse_sizes(sizes), opt);
      if (!csv.empty()) {
        std::ofstream f(csv);
        if (!f) throw std::runtime_error("cannot write " + csv);
        write_bench_csv(f, res);
      }
      write_bench_csv(std::cout, res);
      std::cout << "exponent " << res.exponent << "\n";
      return 0;
    }
    if (*check) {
      check::Report r;
      if (suite == "oracles") r = check::oracle_suite();
      if (suite == "grads") r = check::grad_suite();
      if (suite == "invariants") r = check::invariant_suite();
      check::print_report(std::cout, r);
      return check::all_pass(r) ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
