#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "cadtrack/harness/bench.hpp"
#include "cadtrack/harness/pipeline.hpp"

using namespace cadtrack;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = fs::temp_directory_path() / "cadtrack_tests" / (std::string(info->test_suite_name()) + "_" + info->name()) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

GenOptions short_sequence(std::size_t frames = 4) {
  GenOptions o;
  o.seed = 5;
  o.frames = frames;
  return o;
}

}  // namespace

// ---------------------------------------------------------------- config

TEST(RunConfigJson, RoundTripPreservesEveryField) {
  auto c = RunConfig::for_profile("toy");
  c.seed = 99;
  c.model.cam.experts = 4;
  c.model.dam.cue_keys = CueKeys::both_modalities;
  c.element_type = ElementType::f64;
  c.jitter_shift = 0.125;
  const auto j = to_json(c);
  EXPECT_EQ(to_json(run_config_from_json(j)).dump(), j.dump());
}

TEST(RunConfigJson, UnknownKeyRejected) {
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"learning_rat", 0.1}}), ConfigError);
}

TEST(RunConfigJson, WrongTypeAndInvalidValuesRejected) {
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"steps", "many"}}), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"experts", 1}}), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"mfi_ratio", 7}}), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"profile", "huge"}}), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::array()), ConfigError);
}

TEST(RunConfigJson, FullScaleProfileSettings) {
  const auto c = RunConfig::for_profile("paper");
  EXPECT_EQ(c.model.backbone.depth, 12u);
  EXPECT_EQ(c.model.backbone.embed_dim, 768u);
  EXPECT_EQ(c.model.backbone.mfi_layers, (std::vector<std::size_t>{4, 7, 10}));
  EXPECT_EQ(c.model.mfi.ratio, 8u);
  EXPECT_EQ(c.model.mfi.state_dim, 16u);
  EXPECT_EQ(c.model.cam.experts, 6u);
  EXPECT_EQ(c.model.dam.offset_scale, 5.0);
  EXPECT_EQ(c.update_interval, 25u);
  EXPECT_EQ(c.update_threshold, 0.7);
}

TEST(RunConfigJson, LoadFromFile) {
  const auto dir = scratch_dir("cfg");
  std::ofstream(dir / "c.json") << R"({"profile": "toy", "steps": 12, "motion_model": "random_walk"})";
  const auto c = load_run_config((dir / "c.json").string());
  EXPECT_EQ(c.steps, 12u);
  EXPECT_EQ(c.motion_model, "random_walk");
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(load_run_config((dir / "bad.json").string()), ConfigError);
  EXPECT_THROW(load_run_config((dir / "missing.json").string()), ConfigError);
}

// ---------------------------------------------------------------- data

TEST(GenData, SameSeedGivesIdenticalSequence) {
  const auto a = gen_sequence(short_sequence()), b = gen_sequence(short_sequence());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.rgb[i], b.rgb[i]);
    EXPECT_EQ(a.tir[i], b.tir[i]);
    EXPECT_EQ(a.gt[i].x, b.gt[i].x);
  }
  auto o = short_sequence();
  o.seed = 6;
  EXPECT_NE(gen_sequence(o).rgb[0], a.rgb[0]);
}

TEST(GenData, FramesHaveRequestedLayout) {
  auto o = short_sequence(3);
  o.frame_side = 96;
  const auto s = gen_sequence(o);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s.rgb[0].width, 96u);
  EXPECT_EQ(s.rgb[0].channels, 3u);
  EXPECT_EQ(s.tir[0].channels, 1u);
}

TEST(GenData, MisalignmentAmplitudeIsRespected) {
  auto o = short_sequence(10);
  o.misalignment_px = 0.0;
  for (const auto& [dx, dy] : gen_sequence(o).misalignment) {
    EXPECT_EQ(dx, 0.0);
    EXPECT_EQ(dy, 0.0);
  }
  o.misalignment_px = 2.0;
  for (const auto& [dx, dy] : gen_sequence(o).misalignment) EXPECT_NEAR(std::hypot(dx, dy), 2.0, 0.25);
}

TEST(GenData, ConsecutiveBoxesOverlap) {
  for (auto motion : {MotionModel::drift, MotionModel::random_walk}) {
    auto o = short_sequence(20);
    o.motion = motion;
    const auto s = gen_sequence(o);
    for (std::size_t i = 1; i < s.size(); ++i) {
      EXPECT_GT(iou(s.gt[i - 1], s.gt[i]), 0.0);
      EXPECT_GE(s.gt[i].x, 0.0);
      EXPECT_LE(s.gt[i].x + s.gt[i].w, 128.0);
    }
  }
}

TEST(GenData, SaveLoadRoundTrip) {
  const auto dir = scratch_dir("seq");
  const auto s = gen_sequence(short_sequence(3));
  save_sequence(s, dir.string());
  EXPECT_TRUE(fs::exists(dir / "rgb" / "000001.ppm"));
  EXPECT_TRUE(fs::exists(dir / "tir" / "000003.pgm"));
  const auto r = load_sequence(dir.string());
  ASSERT_EQ(r.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r.rgb[i], s.rgb[i]);
    EXPECT_EQ(r.tir[i], s.tir[i]);
    EXPECT_EQ(r.gt[i].w, s.gt[i].w);
  }
}

TEST(ImageIo, NetpbmRoundTripAndHeaders) {
  const auto dir = scratch_dir("img");
  Image rgb(5, 3, 3), gray(4, 2, 1);
  for (std::size_t i = 0; i < rgb.pixels.size(); ++i) rgb.pixels[i] = static_cast<std::uint8_t>(i * 7);
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) gray.pixels[i] = static_cast<std::uint8_t>(255 - i);
  write_netpbm((dir / "a.ppm").string(), rgb);
  write_netpbm((dir / "b.pgm").string(), gray);
  EXPECT_EQ(slurp(dir / "a.ppm").substr(0, 2), "P6");
  EXPECT_EQ(slurp(dir / "b.pgm").substr(0, 2), "P5");
  EXPECT_EQ(read_netpbm((dir / "a.ppm").string()), rgb);
  EXPECT_EQ(read_netpbm((dir / "b.pgm").string()), gray);
}

TEST(ImageIo, MalformedFilesRejected) {
  const auto dir = scratch_dir("bad");
  std::ofstream(dir / "ascii.pgm") << "P2\n2 2\n255\n0 0 0 0\n";
  std::ofstream(dir / "short.pgm", std::ios::binary) << "P5\n4 4\n255\nab";
  std::ofstream(dir / "deep.pgm", std::ios::binary) << "P5\n1 1\n65535\nab";
  for (const char* f : {"ascii.pgm", "short.pgm", "deep.pgm", "absent.pgm"})
    EXPECT_THROW(read_netpbm((dir / f).string()), FormatError) << f;
}

TEST(Boxes, GroundTruthFileRoundTrip) {
  const auto dir = scratch_dir("gt");
  const std::vector<BBox> boxes{{1.5, 2.25, 10, 12}, {3, 4, 5.125, 6}};
  write_boxes((dir / "gt.txt").string(), boxes);
  EXPECT_EQ(slurp(dir / "gt.txt").substr(0, 17), "1 1.5 2.25 10 12\n");
  const auto back = read_boxes((dir / "gt.txt").string());
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].w, 5.125);
  std::ofstream(dir / "gap.txt") << "1 0 0 1 1\n3 0 0 1 1\n";
  EXPECT_THROW(read_boxes((dir / "gap.txt").string()), FormatError);
}

// ---------------------------------------------------------------- metrics

TEST(Metrics, PerfectTrackScoresOne) {
  const auto s = gen_sequence(short_sequence(6));
  const auto m = eval_metrics(s.gt, s.gt);
  EXPECT_DOUBLE_EQ(m.mean_iou, 1.0);
  EXPECT_DOUBLE_EQ(m.precision_20px, 1.0);
  EXPECT_DOUBLE_EQ(m.success_auc, 1.0);
}

TEST(Metrics, HandComputedIou) {
  EXPECT_DOUBLE_EQ(iou(BBox{0, 0, 2, 2}, BBox{1, 0, 2, 2}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(iou(BBox{0, 0, 1, 1}, BBox{5, 5, 1, 1}), 0.0);
}

TEST(Metrics, MatchesPerFrameComputation) {
  const std::vector<BBox> gt{{0, 0, 10, 10}, {0, 0, 10, 10}, {0, 0, 10, 10}};
  const std::vector<BBox> pred{{0, 0, 10, 10}, {5, 0, 10, 10}, {30, 0, 10, 10}};
  const auto m = eval_metrics(pred, gt);
  EXPECT_DOUBLE_EQ(m.mean_iou, (1.0 + 1.0 / 3.0 + 0.0) / 3.0);
  EXPECT_DOUBLE_EQ(m.precision_20px, 2.0 / 3.0);
  // thresholds 0..1 step 0.05: all three pass at 0, two up to 1/3, one up to 1
  double auc = 0;
  for (int k = 0; k <= 20; ++k) {
    const double t = k / 20.0;
    auc += ((t <= 0 ? 1 : 0) + (t <= 1.0 / 3.0 ? 1 : 0) + 1) / 3.0;
  }
  EXPECT_NEAR(m.success_auc, auc / 21.0, 1e-12);
  EXPECT_THROW(eval_metrics(pred, {gt[0]}), std::invalid_argument);
}

// ---------------------------------------------------------------- weights

TEST(Weights, SaveLoadSaveIsByteIdentical) {
  const auto dir = scratch_dir("w");
  Rng rng(1);
  const auto p = ModelParams<float>::init(ModelConfig::toy(), rng);
  save_params((dir / "a.cadw").string(), p);
  Rng other(2);
  auto q = ModelParams<float>::init(ModelConfig::toy(), other);
  load_params((dir / "a.cadw").string(), q);
  save_params((dir / "b.cadw").string(), q);
  EXPECT_EQ(slurp(dir / "a.cadw"), slurp(dir / "b.cadw"));
  EXPECT_EQ(weights_checksum(to_records(p)), weights_checksum(to_records(q)));
}

TEST(Weights, HeaderLayout) {
  const auto dir = scratch_dir("w");
  save_weights((dir / "t.cadw").string(), {WeightRecord{"ab", DType::f64, {2}, {1.0, -2.0}}});
  const auto bytes = slurp(dir / "t.cadw");
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 2 + 2 + 1 + 1 + 4 + 16);
  EXPECT_EQ(bytes.substr(0, 4), "CADW");
  EXPECT_EQ(bytes[4], 1);   // version
  EXPECT_EQ(bytes[8], 1);   // count
  EXPECT_EQ(bytes[12], 2);  // name length
  EXPECT_EQ(bytes.substr(14, 2), "ab");
  EXPECT_EQ(bytes[16], 1);  // f64
  EXPECT_EQ(bytes[17], 1);  // rank
  EXPECT_EQ(bytes[18], 2);  // extent
}

TEST(Weights, CorruptFilesRejected) {
  const auto dir = scratch_dir("w");
  Rng rng(3);
  const auto p = ModelParams<float>::init(ModelConfig::toy(), rng);
  save_params((dir / "ok.cadw").string(), p);
  auto bytes = slurp(dir / "ok.cadw");
  auto write = [&](const char* name, const std::string& b) {
    std::ofstream(dir / name, std::ios::binary) << b;
    return (dir / name).string();
  };
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(load_weights(write("magic.cadw", magic)), FormatError);
  EXPECT_THROW(load_weights(write("short.cadw", bytes.substr(0, bytes.size() - 3))), FormatError);
  EXPECT_THROW(load_weights(write("long.cadw", bytes + "z")), FormatError);
  Rng other(4);
  auto cfg = ModelConfig::toy();
  cfg.backbone.embed_dim = 32;
  auto q = ModelParams<float>::init(cfg, other);
  EXPECT_THROW(load_params((dir / "ok.cadw").string(), q), FormatError);
}

TEST(Weights, ChecksumTracksContent) {
  Rng rng(5);
  auto p = ModelParams<double>::init(ModelConfig::toy(), rng);
  const auto before = weights_checksum(to_records(p));
  p.head.fuse_bias[0] += 1e-9;
  EXPECT_NE(weights_checksum(to_records(p)), before);
}

TEST(Weights, FloatFileLoadsIntoDoubleModel) {
  const auto dir = scratch_dir("w");
  Rng rng(6);
  const auto p = ModelParams<float>::init(ModelConfig::toy(), rng);
  save_params((dir / "f.cadw").string(), p);
  Rng other(7);
  auto q = ModelParams<double>::init(ModelConfig::toy(), other);
  load_params((dir / "f.cadw").string(), q);
  EXPECT_EQ(q.head.fuse_kernel[3], static_cast<double>(p.head.fuse_kernel[3]));
}

// ---------------------------------------------------------------- tracker

TEST(Tracker, FirstFrameIsTheAnnotation) {
  const auto s = gen_sequence(short_sequence(3));
  auto cfg = RunConfig::for_profile("toy");
  Rng rng(cfg.seed);
  const auto p = ModelParams<float>::init(cfg.model, rng);
  std::vector<FrameRecord<float>> rec;
  const auto boxes = run_tracker(p, cfg, s, &rec);
  ASSERT_EQ(boxes.size(), 3u);
  EXPECT_EQ(boxes[0].x, s.gt[0].x);
  EXPECT_EQ(boxes[0].w, s.gt[0].w);
  EXPECT_EQ(rec[0].score_map.numel(), 0u);
  EXPECT_EQ(rec[1].score_map.shape(), (Shape{8, 8}));
  for (const auto& b : boxes) {
    EXPECT_GE(b.x, 0.0);
    EXPECT_LE(b.x + b.w, 128.0 + 1e-9);
  }
}

TEST(Tracker, UpdatesOnlyAtInterval) {
  const auto s = gen_sequence(short_sequence(5));
  auto cfg = RunConfig::for_profile("toy");
  cfg.update_interval = 0;
  Rng rng(cfg.seed);
  auto p = ModelParams<float>::init(cfg.model, rng);
  // the cue update is an identity at init; give it a non-zero output map
  p.dam.cross_attn.o.w = rng.normal_tensor<float>(p.dam.cross_attn.o.w.shape(), 0.1);
  Tracker<float> t(p, cfg);
  t.init(s.rgb[0], s.tir[0], s.gt[0]);
  const auto cue0 = t.state().cue[0];
  for (std::size_t i = 1; i < 5; ++i) EXPECT_FALSE(t.step(s.rgb[i], s.tir[i]).template_updated);
  EXPECT_EQ(t.state().zt[0], t.state().z0[0]);
  EXPECT_EQ(t.state().zt_frame, 1u);
  EXPECT_NE(t.state().cue[0], cue0);

  cfg.update_interval = 2;
  cfg.update_threshold = -1.0;
  Tracker<float> u(p, cfg);
  u.init(s.rgb[0], s.tir[0], s.gt[0]);
  EXPECT_TRUE(u.step(s.rgb[1], s.tir[1]).template_updated);
  EXPECT_FALSE(u.step(s.rgb[2], s.tir[2]).template_updated);
  EXPECT_EQ(u.state().zt_frame, 2u);
}

TEST(Tracker, StepBeforeInitRejected) {
  auto cfg = RunConfig::for_profile("toy");
  Rng rng(1);
  const auto p = ModelParams<float>::init(cfg.model, rng);
  Tracker<float> t(p, cfg);
  const auto s = gen_sequence(short_sequence(2));
  EXPECT_THROW(t.step(s.rgb[1], s.tir[1]), std::logic_error);
}

// ---------------------------------------------------------------- dumps

TEST(Diagnostics, GraymapScalesToFullRange) {
  Tensor<double> m({2, 3});
  for (std::size_t i = 0; i < 6; ++i) m[i] = 0.5 + 0.1 * static_cast<double>(i);
  const auto gm = to_graymap(m, 2, 3);
  EXPECT_EQ(gm.image.pixels.front(), 0);
  EXPECT_EQ(gm.image.pixels.back(), 255);
  EXPECT_EQ(gm.image.pixels[2], 102);  // round(255 * 0.4)
  EXPECT_DOUBLE_EQ(gm.lo, 0.5);
  const auto flat = to_graymap(Tensor<double>({2, 2}, 3.0), 2, 2);
  for (auto v : flat.image.pixels) EXPECT_EQ(v, 0);
}

TEST(Diagnostics, DumpedMapsMatchRecord) {
  const auto dir = scratch_dir("maps");
  const auto s = gen_sequence(short_sequence(3));
  auto cfg = RunConfig::for_profile("toy");
  Rng rng(cfg.seed);
  const auto p = ModelParams<float>::init(cfg.model, rng);
  std::vector<FrameRecord<float>> rec;
  run_tracker(p, cfg, s, &rec);
  EXPECT_THROW(dump_maps(rec[0], 1, dir), std::invalid_argument);
  const auto sum = dump_maps(rec[1], 2, dir);
  EXPECT_EQ(sum.files.size(), 9u);
  const auto img = read_netpbm((dir / "frame_000002_score.pgm").string());
  EXPECT_EQ(img.width, 8u);
  EXPECT_EQ(img.height, 8u);
  EXPECT_EQ(img.channels, 1u);
  const auto& map = rec[1].score_map;
  const double lo = sum.score_min, hi = sum.score_max;
  for (std::size_t i = 0; i < map.numel(); ++i) {
    EXPECT_NEAR(img.pixels[i] / 255.0, (map[i] - lo) / (hi - lo), 0.5 / 255.0 + 1e-9);
  }
  std::ifstream router(dir / "frame_000002_router.csv");
  std::string header;
  std::getline(router, header);
  EXPECT_EQ(header, "modality,layer,score,selected");
  std::size_t rows = 0, selected = 0;
  for (std::string line; std::getline(router, line); ++rows) selected += line.back() == '1';
  EXPECT_EQ(rows, 2 * cfg.model.backbone.depth);
  EXPECT_EQ(selected, 2 * cfg.model.cam.experts);
}

TEST(Diagnostics, RouterTraceListsSelectedLayers) {
  const auto dir = scratch_dir("trace");
  const auto s = gen_sequence(short_sequence(3));
  auto cfg = RunConfig::for_profile("toy");
  Rng rng(cfg.seed);
  const auto p = ModelParams<float>::init(cfg.model, rng);
  std::vector<FrameRecord<float>> rec;
  const auto boxes = run_tracker(p, cfg, s, &rec);
  write_track_outputs(dir, boxes, rec, s.gt);
  std::ifstream in(dir / "router_trace.csv");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], "frame,modality,selected_layers");
  EXPECT_EQ(lines[1].substr(0, 6), "2,rgb,");
  EXPECT_EQ(lines[1].substr(6, 2), "1;");
  EXPECT_EQ(lines[1].back(), '4');
  EXPECT_TRUE(fs::exists(dir / "metrics.json"));
  EXPECT_EQ(read_boxes((dir / "pred.txt").string()).size(), 3u);
}

// ---------------------------------------------------------------- bench

TEST(Bench, PlantedExponentsAreRecovered) {
  BenchOptions o;
  o.repeats = 5;
  const std::vector<std::size_t> sizes{512, 1024, 2048, 4096};
  EXPECT_NEAR(bench_scaling(BenchKernel::planted_linear, sizes, o).exponent, 1.0, 0.3);
  EXPECT_NEAR(bench_scaling(BenchKernel::planted_quadratic, sizes, o).exponent, 2.0, 0.3);
}

TEST(Bench, PowerLawFitIsExactOnPowerLaw) {
  EXPECT_NEAR(fit_power_law({1, 2, 4, 8}, {3, 3 * std::pow(2, 1.5), 3 * std::pow(4, 1.5), 3 * std::pow(8, 1.5)}), 1.5, 1e-12);
  EXPECT_THROW(fit_power_law({1}, {1}), std::invalid_argument);
  EXPECT_THROW(bench_scaling(BenchKernel::mfi, {4, 2, 8, 16}), std::invalid_argument);
}

TEST(Bench, AnalyticCostExponentIsOne) {
  EXPECT_NEAR(mfi_flops_exponent({512, 1024, 2048, 4096, 8192}, 768, MfiConfig{8, 2, 16, 4}), 1.0, 1e-9);
}

// ---------------------------------------------------------------- training

TEST(Train, ShortRunIsDeterministic) {
  const auto s = gen_sequence(short_sequence(3));
  auto cfg = RunConfig::for_profile("toy");
  cfg.steps = 3;
  std::uint64_t sums[2];
  std::vector<double> losses[2];
  for (int r = 0; r < 2; ++r) {
    Rng rng(cfg.seed);
    auto p = ModelParams<float>::init(cfg.model, rng);
    const auto rep = train_overfit(p, cfg, s);
    for (const auto& row : rep.log) losses[r].push_back(row.loss);
    sums[r] = weights_checksum(to_records(p));
  }
  EXPECT_EQ(sums[0], sums[1]);
  EXPECT_EQ(losses[0], losses[1]);
  ASSERT_EQ(losses[0].size(), 3u);
  for (double l : losses[0]) EXPECT_TRUE(std::isfinite(l));
}

TEST(Train, ZeroLearningRateLeavesTrainableWeightsUnchanged) {
  const auto s = gen_sequence(short_sequence(3));
  auto cfg = RunConfig::for_profile("toy");
  cfg.steps = 2;
  cfg.learning_rate = 0.0;
  Rng rng(cfg.seed);
  auto p = ModelParams<double>::init(cfg.model, rng);
  const auto before = to_records(p);
  train_overfit(p, cfg, s);
  const auto after = to_records(p);
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (before[i].name.find("running_") != std::string::npos) continue;
    EXPECT_EQ(before[i].values, after[i].values) << before[i].name;
  }
}

TEST(Train, CosineScheduleEndpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(1.0, 0, 100), 1.0);
  EXPECT_NEAR(cosine_lr(1.0, 99, 100), 0.05, 1e-15);
  EXPECT_DOUBLE_EQ(cosine_lr(2.0, 0, 1), 2.0);
}
