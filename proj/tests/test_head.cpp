#include <gtest/gtest.h>

#include "cadtrack/check/gradcheck.hpp"
#include "cadtrack/head.hpp"

using namespace cadtrack;

namespace {

struct DecodeMaps {
  Tensor<double> score, offset, size;
};

DecodeMaps flat_maps(std::size_t side, double off, double sz) {
  return {Tensor<double>({side, side}), Tensor<double>({2, side, side}, off), Tensor<double>({2, side, side}, sz)};
}

}  // namespace

TEST(Fuse, TwoFiftySixTokensBecomeSixteenBySixteen) {
  Rng rng(1);
  const auto p = HeadParams<float>::init(4, 4, 3, rng);
  Graph<float> g(false);
  const auto f = fuse(g, g.constant(Tensor<float>({256, 4})), g.constant(Tensor<float>({256, 4})), p);
  EXPECT_EQ(f.shape(), (Shape{4, 16, 16}));
  for (auto v : f.value().values()) EXPECT_EQ(v, 0.0f);
}

TEST(Fuse, ZeroInputsLeaveOnlyBias) {
  Rng rng(2);
  auto p = HeadParams<double>::init(3, 3, 2, rng);
  p.fuse_bias = rng.normal_tensor<double>({3}, 1.0);
  Graph<double> g(false);
  const auto f = fuse(g, g.constant(Tensor<double>({9, 3})), g.constant(Tensor<double>({9, 3})), p).value();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(f[c * 9 + i], p.fuse_bias[c]);
}

TEST(Fuse, TokenSixteenLandsAtRowOneColumnZero) {
  Rng rng(3);
  auto p = HeadParams<double>::init(2, 2, 2, rng);
  p.fuse_kernel.fill(0);
  p.fuse_kernel.at(0, 0) = 1.0;  // channel 0 copies the first rgb channel
  Tensor<double> rgb({256, 2});
  rgb.at(16, 0) = 7.0;
  Graph<double> g(false);
  const auto f = fuse(g, g.constant(rgb), g.constant(Tensor<double>({256, 2})), p).value();
  EXPECT_EQ(f.at(0, 1, 0), 7.0);
  EXPECT_EQ(f.at(0, 0, 1), 0.0);
}

TEST(Fuse, NonSquareTokenCountRejected) {
  Rng rng(4);
  const auto p = HeadParams<float>::init(2, 2, 2, rng);
  Graph<float> g(false);
  EXPECT_THROW(fuse(g, g.constant(Tensor<float>({10, 2})), g.constant(Tensor<float>({10, 2})), p), DimensionError);
}

TEST(PredictMaps, ShapesAndRanges) {
  Rng rng(5);
  const auto p = HeadParams<double>::init(4, 4, 3, rng);
  Graph<double> g(false);
  const auto m = predict_maps(g, g.constant(rng.normal_tensor<double>({4, 6, 6}, 1.0)), p);
  EXPECT_EQ(m.score.shape(), (Shape{6, 6}));
  EXPECT_EQ(m.offset.shape(), (Shape{2, 6, 6}));
  EXPECT_EQ(m.size.shape(), (Shape{2, 6, 6}));
  for (const auto* t : {&m.score.value(), &m.offset.value(), &m.size.value()})
    for (auto v : t->values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
}

TEST(PredictMaps, BatchStatisticsCollectedPerHiddenLayer) {
  Rng rng(6);
  auto p = HeadParams<double>::init(3, 3, 3, rng);
  BatchStats<double> stats;
  Graph<double> g(false);
  predict_maps(g, g.constant(rng.normal_tensor<double>({3, 5, 5}, 1.0)), p, NormMode::batch, &stats);
  EXPECT_EQ(stats.layers.size(), 6u);
  const auto before = p.towers[0].hidden[0].running_mean;
  update_running_stats(p, stats, 0.5);
  for (std::size_t i = 0; i < before.numel(); ++i)
    EXPECT_DOUBLE_EQ(p.towers[0].hidden[0].running_mean[i], 0.5 * before[i] + 0.5 * stats.layers[0].first[i]);
}

TEST(Decode, DeltaPeakGivesHandComputedBox) {
  auto m = flat_maps(16, 0.5, 0.25);
  m.score.at(3, 5) = 1.0;
  const auto b = decode(m.score, m.offset, m.size, 256.0);
  EXPECT_DOUBLE_EQ(b.cx(), 88.0);
  EXPECT_DOUBLE_EQ(b.cy(), 56.0);
  EXPECT_DOUBLE_EQ(b.w, 64.0);
  EXPECT_DOUBLE_EQ(b.h, 64.0);
  EXPECT_DOUBLE_EQ(b.score, 1.0);
}

TEST(Decode, ShiftedPeakShiftsCenterByStride) {
  auto a = flat_maps(16, 0.3, 0.1), b = flat_maps(16, 0.3, 0.1);
  a.score.at(6, 6) = 1.0;
  b.score.at(7, 8) = 1.0;
  const auto ba = decode(a.score, a.offset, a.size, 256.0), bb = decode(b.score, b.offset, b.size, 256.0);
  EXPECT_DOUBLE_EQ(bb.cx() - ba.cx(), 32.0);
  EXPECT_DOUBLE_EQ(bb.cy() - ba.cy(), 16.0);
}

TEST(Decode, UniformScoreTakesFirstCell) {
  auto m = flat_maps(8, 0.0, 0.1);
  m.score.fill(0.4);
  const auto b = decode(m.score, m.offset, m.size, 64.0);
  EXPECT_DOUBLE_EQ(b.x, 0.0);
  EXPECT_DOUBLE_EQ(b.y, 0.0);
}

TEST(Decode, BoxClampedInsideSearchRegion) {
  auto m = flat_maps(4, 0.9, 0.9);
  m.score.at(3, 3) = 1.0;
  const auto b = decode(m.score, m.offset, m.size, 32.0);
  EXPECT_GE(b.x, 0.0);
  EXPECT_GE(b.y, 0.0);
  EXPECT_LE(b.x + b.w, 32.0 + 1e-12);
  EXPECT_LE(b.y + b.h, 32.0 + 1e-12);
}

TEST(Losses, GaussianTargetPeaksAtCenterCell) {
  const auto t = gaussian_target<double>(8, 8, 3.7, 5.2, 1.0);
  EXPECT_EQ(t.at(5, 3), 1.0);
  EXPECT_NEAR(t.at(5, 4), std::exp(-0.5), 1e-15);
}

TEST(Losses, GiouIsZeroForExactBoxAndTwoForFarBox) {
  Graph<double> g(false);
  auto c = [&](double v) { return g.constant(Tensor<double>::scalar(v)); };
  const BBox t{0.2, 0.2, 0.4, 0.4};
  EXPECT_NEAR(giou_loss(g, {c(0.4), c(0.4), c(0.4), c(0.4)}, t).value().item(), 0.0, 1e-6);
  // disjoint boxes far apart approach the upper bound 2
  const double far = giou_loss(g, {c(100.0), c(100.0), c(0.01), c(0.01)}, t).value().item();
  EXPECT_GT(far, 1.99);
  EXPECT_LE(far, 2.0);
}

TEST(Losses, FocalLossPenalizesWrongPeak) {
  Graph<double> g(false);
  auto target = gaussian_target<double>(4, 4, 1.5, 1.5, 0.5);
  Tensor<double> good({4, 4}, -4.0), bad({4, 4}, -4.0);
  good.at(1, 1) = 4.0;
  bad.at(3, 3) = 4.0;
  EXPECT_LT(focal_loss(g, g.constant(good), target).value().item(), focal_loss(g, g.constant(bad), target).value().item());
}

TEST(Head, GradientsMatchFiniteDifferences) {
  Rng rng(7);
  auto p = HeadParams<double>::init(3, 3, 2, rng);
  for (auto& tw : p.towers) tw.out_kernel = rng.normal_tensor<double>(tw.out_kernel.shape(), 0.3);
  auto hr = rng.normal_tensor<double>({16, 3}, 1.0), ht = rng.normal_tensor<double>({16, 3}, 1.0);
  std::vector<Tensor<double>*> leaves;
  p.visit([&](const std::string& name, Tensor<double>& t) {
    if (name.find("running_") == std::string::npos) leaves.push_back(&t);
  }, "");
  leaves.push_back(&hr);
  leaves.push_back(&ht);
  const BBox target{5.0, 6.0, 8.0, 7.0};
  auto loss = [&](Graph<double>& g) {
    return head_loss(g, predict_maps(g, fuse(g, g.param(hr), g.param(ht), p), p), target, 16.0).total;
  };
  EXPECT_LE(gradcheck(leaves, loss, rng, {1e-4, 3}).rel_error, 1e-4);
}
