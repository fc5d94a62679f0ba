#include <gtest/gtest.h>

#include "cadtrack/check/gradcheck.hpp"
#include "cadtrack/check/oracles.hpp"
#include "cadtrack/dam.hpp"

using namespace cadtrack;

namespace {

DamParams<double> small_dam(Rng& rng, std::size_t dim = 4, std::size_t cue = 1) {
  return DamParams<double>::init(dim, 2, cue, 2, rng);
}

void randomize(Tensor<double>& t, Rng& rng, double sd = 0.5) { t = rng.normal_tensor<double>(t.shape(), sd); }

}  // namespace

TEST(Grid, SixtyFourTokensBecomeEightByEight) {
  Graph<float> g(false);
  const auto grid = tokens_to_grid(g.constant(Tensor<float>({64, 3})));
  EXPECT_EQ(grid.shape(), (Shape{8, 8, 3}));
  EXPECT_THROW(tokens_to_grid(g.constant(Tensor<float>({60, 3}))), DimensionError);
}

TEST(Grid, RasterConventionAndRoundTrip) {
  Rng rng(1);
  const auto tok = rng.normal_tensor<double>({16, 3}, 1.0);
  Graph<double> g(false);
  const auto grid = tokens_to_grid(g.constant(tok)).value();
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(grid.at(2, 1, c), tok.at(2 * 4 + 1, c));
  EXPECT_EQ(grid.reshaped({16, 3}), tok);
}

TEST(Grid, ReferenceGridHoldsRowThenColumn) {
  const auto r = reference_grid<double>(3, 5);
  EXPECT_EQ(r.at(2, 4, 0), 2.0);
  EXPECT_EQ(r.at(2, 4, 1), 4.0);
}

TEST(ConvMixer, ZeroWeightsGiveZero) {
  Rng rng(2);
  auto p = small_dam(rng);
  p.mix_pw.fill(0);
  Graph<double> g(false);
  const auto z = rng.normal_tensor<double>({5, 5, 4}, 1.0);
  const auto out = conv_mixer(g, g.constant(z), g.constant(z), p).value();
  EXPECT_EQ(out.shape(), (Shape{5, 5, 4}));
  for (auto v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(ConvMixer, MismatchedGridsRejected) {
  Rng rng(3);
  const auto p = small_dam(rng);
  Graph<double> g(false);
  EXPECT_THROW(conv_mixer(g, g.constant(Tensor<double>({4, 4, 4})), g.constant(Tensor<double>({5, 5, 4})), p), DimensionError);
}

TEST(Offsets, ZeroHeadsAtInitGiveZero) {
  Rng rng(4);
  const auto p = small_dam(rng);
  Graph<double> g(false);
  const auto f = g.constant(rng.normal_tensor<double>({4, 4, 4}, 1.0));
  for (auto m : {Modality::rgb, Modality::tir})
    for (auto s : {TemplateSlot::initial, TemplateSlot::dynamic}) {
      const auto o = predict_offsets(g, f, p.head(m, s), 5.0).value();
      EXPECT_EQ(o.shape(), (Shape{4, 4, 2}));
      for (auto v : o.values()) EXPECT_EQ(v, 0.0);
    }
}

TEST(Offsets, ScaleFactorIsLinear) {
  Rng rng(5);
  auto p = small_dam(rng);
  randomize(p.offset_heads[0][0].w, rng);
  randomize(p.offset_heads[0][0].b, rng);
  Graph<double> g(false);
  const auto f = g.constant(rng.normal_tensor<double>({3, 3, 4}, 1.0));
  const auto a = predict_offsets(g, f, p.offset_heads[0][0], 1.0).value();
  const auto b = predict_offsets(g, f, p.offset_heads[0][0], 5.0).value();
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(b[i], 5.0 * a[i], 1e-12);
}

TEST(DeformSample, ZeroOffsetsReturnTheGrid) {
  Rng rng(6);
  const auto grid = rng.normal_tensor<double>({6, 6, 3}, 1.0);
  Graph<double> g(false);
  const auto out = deform_sample(g, g.constant(grid), reference_grid<double>(6, 6), g.constant(Tensor<double>({6, 6, 2})));
  EXPECT_EQ(out.value(), grid.reshaped({36, 3}));
}

TEST(DeformSample, UnitHorizontalOffsetReadsRightNeighbour) {
  Rng rng(7);
  const auto grid = rng.normal_tensor<double>({5, 5, 2}, 1.0);
  Tensor<double> off({5, 5, 2});
  for (std::size_t i = 0; i < 25; ++i) off[2 * i] = 1.0;  // dx = +1
  Graph<double> g(false);
  const auto out = deform_sample(g, g.constant(grid), reference_grid<double>(5, 5), g.constant(off)).value();
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(out.at(i * 5 + j, c), grid.at(i, std::min<std::size_t>(j + 1, 4), c));
}

TEST(DeformSample, MatchesBilinearOracle) {
  Rng rng(8);
  const auto grid = rng.normal_tensor<double>({7, 7, 3}, 1.0);
  const auto off = rng.uniform_tensor<double>({7, 7, 2}, -3.0, 3.0);
  Graph<double> g(false);
  const auto got = deform_sample(g, g.constant(grid), reference_grid<double>(7, 7), g.constant(off)).value();
  Tensor<double> points({49, 2});
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) {
      points.at(i * 7 + j, 0) = static_cast<double>(i) + off.at(i, j, 1);
      points.at(i * 7 + j, 1) = static_cast<double>(j) + off.at(i, j, 0);
    }
  EXPECT_LE(max_abs_diff(got, oracle::bilinear_sample(grid, points)), 1e-12);
}

TEST(DeformSample, ShapeMismatchRejected) {
  Graph<double> g(false);
  EXPECT_THROW(deform_sample(g, g.constant(Tensor<double>({4, 4, 2})), reference_grid<double>(3, 3),
                             g.constant(Tensor<double>({3, 3, 2}))),
               DimensionError);
}

TEST(PropagateCue, ZeroOutputProjectionKeepsCue) {
  Rng rng(9);
  const auto p = small_dam(rng);
  const auto cue = rng.normal_tensor<double>({1, 4}, 1.0);
  Graph<double> g(false);
  const auto next = propagate_cue(g, g.constant(cue), g.constant(rng.normal_tensor<double>({8, 4}, 1.0)), p).value();
  EXPECT_EQ(next, cue);
}

TEST(PropagateCue, AttentionRowsSumToOne) {
  Rng rng(10);
  const auto p = small_dam(rng, 4, 3);
  std::vector<Tensor<double>> w;
  Graph<double> g(false);
  propagate_cue(g, g.constant(rng.normal_tensor<double>({3, 4}, 1.0)), g.constant(rng.normal_tensor<double>({8, 4}, 1.0)), p, &w);
  ASSERT_EQ(w.size(), 2u);
  for (const auto& a : w) {
    ASSERT_EQ(a.shape(), (Shape{3, 8}));
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 8; ++j) s += a.at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Respond, OrthogonalCueSilencesResponse) {
  Tensor<double> search({3, 4}), cue({1, 4});
  for (std::size_t i = 0; i < 3; ++i) search.at(i, 0) = static_cast<double>(i + 1);
  cue.at(0, 2) = 1.0;
  Graph<double> g(false);
  const auto r = respond(g.constant(search), g.constant(cue));
  EXPECT_EQ(r.gate.shape(), (Shape{3}));
  for (auto v : r.features.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Respond, MatchesStraightLineComputation) {
  Rng rng(11);
  const auto search = rng.normal_tensor<double>({6, 4}, 1.0), cue = rng.normal_tensor<double>({3, 4}, 1.0);
  Graph<double> g(false);
  const auto r = respond(g.constant(search), g.constant(cue));
  for (std::size_t i = 0; i < 6; ++i) {
    double gate = 0;
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t c = 0; c < 4; ++c) gate += search.at(i, c) * cue.at(k, c);
    gate /= 3.0 * 2.0;  // mean over 3 cue tokens, sqrt(4)
    EXPECT_NEAR(r.gate.value()[i], gate, 1e-12);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(r.features.value().at(i, c), gate * search.at(i, c), 1e-12);
  }
}

TEST(SampleTemplates, ZeroOffsetsPassTemplatesThrough) {
  Rng rng(12);
  const auto p = small_dam(rng);
  const auto z0 = rng.normal_tensor<double>({9, 4}, 1.0), zt = rng.normal_tensor<double>({9, 4}, 1.0);
  Graph<double> g(false);
  const auto s = sample_templates(g, g.constant(z0), g.constant(zt), Modality::tir, p, DamConfig{});
  const auto v = s.sampled.value();
  ASSERT_EQ(v.shape(), (Shape{18, 4}));
  for (std::size_t i = 0; i < 36; ++i) {
    EXPECT_EQ(v[i], z0[i]);
    EXPECT_EQ(v[36 + i], zt[i]);
  }
}

TEST(Dam, GradientsMatchFiniteDifferences) {
  Rng rng(13);
  auto p = small_dam(rng);
  p.visit([&](const std::string&, Tensor<double>& t) { randomize(t, rng, 0.3); }, "");
  auto z0 = rng.normal_tensor<double>({9, 4}, 1.0), zt = rng.normal_tensor<double>({9, 4}, 1.0);
  auto search = rng.normal_tensor<double>({4, 4}, 1.0), cue = rng.normal_tensor<double>({1, 4}, 1.0);
  // this draw keeps every sample point at least one step away from a cell edge
  const auto probe = rng.normal_tensor<double>({4, 4}, 1.0);
  DamConfig cfg;
  cfg.offset_scale = 0.05;
  auto leaves = param_leaves(p);
  for (auto* t : {&z0, &zt, &search, &cue}) leaves.push_back(t);
  auto loss = [&](Graph<double>& g) {
    auto s = sample_templates(g, g.param(z0), g.param(zt), Modality::rgb, p, cfg);
    auto next = propagate_cue(g, g.param(cue), s.sampled, p);
    return probe_loss(g, refine_and_respond(g, next, g.param(search), p).features, probe);
  };
  EXPECT_LE(gradcheck(leaves, loss, rng, {1e-4, 2}).rel_error, 1e-4);
}
