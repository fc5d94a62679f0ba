#include <gtest/gtest.h>

#include "cadtrack/backbone.hpp"
#include "cadtrack/check/oracles.hpp"

using namespace cadtrack;

namespace {

BackboneConfig small_config() {
  BackboneConfig c;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.depth = 3;
  c.heads = 2;
  c.template_side = 8;
  c.search_side = 12;
  c.mfi_layers = {2};
  c.cue_count = 1;
  c.mlp_ratio = 2;
  return c;
}

MfiConfig small_mfi() { return MfiConfig{2, 1, 4, 3}; }

template <typename T>
Tensor<T> random_tokens(Rng& rng, const BackboneConfig& c) {
  return rng.normal_tensor<T>({c.total_tokens(), c.embed_dim}, 1.0);
}

}  // namespace

TEST(PatchEmbed, FullScaleResolutionsGiveSixtyFourAndTwoFiftySixTokens) {
  BackboneConfig c;
  c.patch_size = 16;
  c.embed_dim = 4;
  c.heads = 1;
  c.depth = 1;
  c.template_side = 128;
  c.search_side = 256;
  c.mfi_layers = {};
  Rng rng(1);
  const auto p = BackboneParams<float>::init(c, MfiConfig{2, 1, 2, 2}, rng);
  Graph<float> g(false);
  EXPECT_EQ(patch_embed(g, Tensor<float>({3, 128, 128}), p, c, SegmentKind::template_image).shape(), (Shape{64, 4}));
  EXPECT_EQ(patch_embed(g, Tensor<float>({3, 256, 256}), p, c, SegmentKind::search_image).shape(), (Shape{256, 4}));
}

TEST(PatchEmbed, SinglePatchIsProjectionPlusPosition) {
  BackboneConfig c;
  c.patch_size = 16;
  c.embed_dim = 6;
  c.heads = 1;
  c.depth = 1;
  c.template_side = 16;
  c.search_side = 16;
  c.mfi_layers = {};
  Rng rng(2);
  auto p = BackboneParams<double>::init(c, MfiConfig{2, 1, 2, 2}, rng);
  p.patch.b = rng.normal_tensor<double>({6}, 1.0);
  const auto img = rng.uniform_tensor<double>({3, 16, 16}, 0, 1);
  Graph<double> g(false);
  const auto tok = patch_embed(g, img, p, c, SegmentKind::template_image).value();
  ASSERT_EQ(tok.shape(), (Shape{1, 6}));
  const auto flat = img.reshaped({1, 3 * 16 * 16});
  const auto want = oracle::matmul(flat, p.patch.w);
  for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(tok[j], want[j] + p.patch.b[j] + p.pos_template[j], 1e-12);
}

TEST(PatchEmbed, NonDivisibleSideRejected) {
  EXPECT_THROW(patchify(Tensor<float>({3, 10, 12}), 4), DimensionError);
  auto c = small_config();
  c.template_side = 10;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(PatchEmbed, RasterOrderOfPatches) {
  Tensor<double> img({3, 8, 8});
  img.at(0, 4, 0) = 1;  // first pixel of patch (1, 0) for P = 4
  const auto patches = patchify(img, 4);
  EXPECT_EQ(patches.at(2, 0), 1.0);
}

TEST(Assemble, FullScaleLayoutLengths) {
  Graph<float> g(false);
  auto mk = [&](std::size_t n) { return g.constant(Tensor<float>({n, 4})); };
  EXPECT_EQ(assemble_tokens(mk(1), mk(64), mk(64), mk(256)).second.total(), 385u);
  EXPECT_EQ(assemble_tokens(mk(4), mk(64), mk(64), mk(256)).second.total(), 388u);
}

TEST(Assemble, SplitRoundTripIsBitExact) {
  Rng rng(3);
  Graph<float> g(false);
  const auto cue = rng.normal_tensor<float>({2, 5}, 1.0), z0 = rng.normal_tensor<float>({4, 5}, 1.0);
  const auto zt = rng.normal_tensor<float>({4, 5}, 1.0), s = rng.normal_tensor<float>({9, 5}, 1.0);
  auto [tokens, layout] = assemble_tokens(g.constant(cue), g.constant(z0), g.constant(zt), g.constant(s));
  const auto seg = split_tokens(tokens, layout);
  EXPECT_EQ(seg.cue.value(), cue);
  EXPECT_EQ(seg.z0.value(), z0);
  EXPECT_EQ(seg.zt.value(), zt);
  EXPECT_EQ(seg.search.value(), s);
  EXPECT_EQ(layout.search_offset(), 10u);
}

TEST(Assemble, WidthMismatchRejected) {
  Graph<float> g(false);
  EXPECT_THROW(assemble_tokens(g.constant(Tensor<float>({1, 4})), g.constant(Tensor<float>({4, 4})),
                               g.constant(Tensor<float>({4, 5})), g.constant(Tensor<float>({9, 4}))),
               DimensionError);
}

TEST(TokenCount, ArithmeticHoldsForRandomValidConfigs) {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    BackboneConfig c;
    c.patch_size = 1 + rng.index(16);
    c.template_side = c.patch_size * (1 + rng.index(10));
    c.search_side = c.patch_size * (1 + rng.index(20));
    c.cue_count = 1 + rng.index(4);
    c.mfi_layers = {};
    c.validate();
    const std::size_t nz = (c.template_side / c.patch_size) * (c.template_side / c.patch_size);
    const std::size_t nx = (c.search_side / c.patch_size) * (c.search_side / c.patch_size);
    EXPECT_EQ(c.template_tokens(), nz);
    EXPECT_EQ(c.search_tokens(), nx);
    EXPECT_EQ(c.total_tokens(), c.cue_count + 2 * nz + nx);
  }
}

TEST(VitBlock, ZeroOutputProjectionsGiveIdentity) {
  Rng rng(5);
  auto p = VitBlockParams<float>::init(8, 2, 4, rng);
  p.attn.o.w.fill(0);
  p.mlp.fc2.w.fill(0);
  const auto x = rng.normal_tensor<float>({7, 8}, 1.0);
  Graph<float> g(false);
  EXPECT_EQ(vit_block(g, g.constant(x), p).value(), x);
}

TEST(VitBlock, AttentionRowsSumToOne) {
  Rng rng(6);
  const auto p = VitBlockParams<double>::init(8, 2, 4, rng);
  std::vector<Tensor<double>> weights;
  Graph<double> g(false);
  vit_block(g, g.constant(rng.normal_tensor<double>({5, 8}, 1.0)), p, &weights);
  ASSERT_EQ(weights.size(), 2u);
  for (const auto& w : weights)
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 5; ++j) s += w.at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(VitBlock, SingleHeadThreeTokensMatchesDenseOracle) {
  Rng rng(7);
  auto p = VitBlockParams<double>::init(4, 1, 2, rng);
  p.mlp.fc2.w.fill(0);
  const auto x = rng.normal_tensor<double>({3, 4}, 1.0);
  Graph<double> g(false);
  const auto got = vit_block(g, g.constant(x), p).value();
  const auto h = oracle::layer_norm(x, p.norm1.gain, p.norm1.bias);
  auto proj = [](const Tensor<double>& a, const LinearParams<double>& l) {
    auto y = oracle::matmul(a, l.w);
    for (std::size_t r = 0; r < y.dim(0); ++r)
      for (std::size_t c = 0; c < y.dim(1); ++c) y.at(r, c) += l.b[c];
    return y;
  };
  auto want = proj(oracle::dense_attention(proj(h, p.attn.q), proj(h, p.attn.k), proj(h, p.attn.v)), p.attn.o);
  for (std::size_t i = 0; i < want.numel(); ++i) want[i] += x[i];
  EXPECT_LE(max_abs_diff(got, want), 1e-12);
}

TEST(ForwardBackbone, RetainsOneFeatureMatrixPerLayer) {
  Rng rng(8);
  const auto c = small_config();
  const auto p = BackboneParams<float>::init(c, small_mfi(), rng);
  Graph<float> g(false);
  const auto out = forward_backbone(g, g.constant(random_tokens<float>(rng, c)), g.constant(random_tokens<float>(rng, c)), p, c);
  ASSERT_EQ(out.rgb.size(), c.depth);
  ASSERT_EQ(out.tir.size(), c.depth);
  for (std::size_t l = 0; l < c.depth; ++l) {
    EXPECT_EQ(out.rgb[l].shape(), (Shape{c.total_tokens(), c.embed_dim}));
    EXPECT_EQ(out.tir[l].shape(), (Shape{c.total_tokens(), c.embed_dim}));
  }
}

TEST(ForwardBackbone, ZeroUpProjectionMatchesNoMfi) {
  Rng rng(9);
  const auto c = small_config();
  const auto p = BackboneParams<double>::init(c, small_mfi(), rng);
  const auto tr = random_tokens<double>(rng, c), tt = random_tokens<double>(rng, c);
  auto off = c;
  off.mfi_layers.clear();
  Graph<double> g(false);
  const auto a = forward_backbone(g, g.constant(tr), g.constant(tt), p, c);
  const auto b = forward_backbone(g, g.constant(tr), g.constant(tt), p, off);
  for (std::size_t l = 0; l < c.depth; ++l) {
    EXPECT_EQ(a.rgb[l].value(), b.rgb[l].value());
    EXPECT_EQ(a.tir[l].value(), b.tir[l].value());
  }
}

TEST(ForwardBackbone, StreamsIndependentWithoutMfi) {
  Rng rng(10);
  auto c = small_config();
  c.mfi_layers.clear();
  const auto p = BackboneParams<float>::init(c, small_mfi(), rng);
  const auto tr = random_tokens<float>(rng, c);
  Graph<float> g(false);
  const auto a = forward_backbone(g, g.constant(tr), g.constant(random_tokens<float>(rng, c)), p, c);
  const auto b = forward_backbone(g, g.constant(tr), g.constant(random_tokens<float>(rng, c)), p, c);
  for (std::size_t l = 0; l < c.depth; ++l) EXPECT_EQ(a.rgb[l].value(), b.rgb[l].value());
}

TEST(ForwardBackbone, ActiveMfiCouplesStreams) {
  Rng rng(11);
  const auto c = small_config();
  auto p = BackboneParams<double>::init(c, small_mfi(), rng);
  for (auto& u : p.mfi[0].up) u = rng.normal_tensor<double>(u.shape(), 0.5);
  const auto tr = random_tokens<double>(rng, c);
  Graph<double> g(false);
  const auto a = forward_backbone(g, g.constant(tr), g.constant(random_tokens<double>(rng, c)), p, c);
  const auto b = forward_backbone(g, g.constant(tr), g.constant(random_tokens<double>(rng, c)), p, c);
  EXPECT_EQ(a.rgb[0].value(), b.rgb[0].value());  // before the MFI layer
  EXPECT_GT(max_abs_diff(a.rgb[1].value(), b.rgb[1].value()), 1e-6);
}

TEST(ForwardBackbone, TrunkIsTokenPermutationEquivariant) {
  Rng rng(12);
  auto c = small_config();
  c.mfi_layers.clear();
  const auto p = BackboneParams<double>::init(c, small_mfi(), rng);
  const auto x = random_tokens<double>(rng, c);
  // segment order only matters through the position tables added at embedding
  const std::size_t nx = c.search_tokens(), head = c.total_tokens() - nx;
  Graph<double> g(false);
  auto xv = g.constant(x);
  auto permuted = concat_rows<double>({slice_rows(xv, head, nx), slice_rows(xv, 0, head)});
  const auto a = forward_backbone(g, xv, xv, p, c);
  const auto b = forward_backbone(g, permuted, permuted, p, c);
  auto b_back = concat_rows<double>({slice_rows(b.rgb.back(), nx, head), slice_rows(b.rgb.back(), 0, nx)});
  EXPECT_LE(max_abs_diff(a.rgb.back().value(), b_back.value()), 1e-10);
}

TEST(ForwardBackbone, SegmentOrderChangesEmbeddedOutputs) {
  Rng rng(13);
  auto c = small_config();
  c.template_side = c.search_side;  // same-sized segments so they can be swapped
  c.mfi_layers.clear();
  const auto p = BackboneParams<double>::init(c, small_mfi(), rng);
  const auto z = rng.uniform_tensor<double>({3, c.template_side, c.template_side}, 0, 1);
  const auto s = rng.uniform_tensor<double>({3, c.search_side, c.search_side}, 0, 1);
  Graph<double> g(false);
  auto cue = g.constant(rng.normal_tensor<double>({1, c.embed_dim}, 1.0));
  auto ez = patch_embed(g, z, p, c, SegmentKind::template_image);
  auto es = patch_embed(g, s, p, c, SegmentKind::search_image);
  auto [t1, l1] = assemble_tokens(cue, ez, ez, es);
  auto es_as_template = patch_embed(g, s, p, c, SegmentKind::template_image);
  auto ez_as_search = patch_embed(g, z, p, c, SegmentKind::search_image);
  auto [t2, l2] = assemble_tokens(cue, es_as_template, es_as_template, ez_as_search);
  const auto a = forward_backbone(g, t1, t1, p, c);
  const auto b = forward_backbone(g, t2, t2, p, c);
  EXPECT_GT(max_abs_diff(a.rgb.back().value(), b.rgb.back().value()), 1e-6);
}

TEST(ForwardBackbone, PerModalityTrunksDiffer) {
  Rng rng(14);
  auto c = small_config();
  c.shared_trunk = false;
  c.mfi_layers.clear();
  const auto p = BackboneParams<float>::init(c, small_mfi(), rng);
  ASSERT_EQ(p.trunks.size(), 2u);
  const auto x = random_tokens<float>(rng, c);
  Graph<float> g(false);
  const auto out = forward_backbone(g, g.constant(x), g.constant(x), p, c);
  EXPECT_GT(max_abs_diff(out.rgb.back().value(), out.tir.back().value()), 1e-4f);
}
