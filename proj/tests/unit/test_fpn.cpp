#include "test_util.hpp"

#include <dsnet/fpn.hpp>

#include <gtest/gtest.h>

namespace dsnet {
namespace {

using test::rand64;

ModelConfig small_backbone() {
  ModelConfig c;
  c.variant = "custom";
  const Index channels[] = {8, 16, 16, 32};
  const Index heads[] = {1, 1, 1, 1};
  for (int s = 0; s < 4; ++s) c.stages[s] = {1, channels[s], heads[s], Index{4} << s};
  c.align = true;
  c.num_classes = 3;
  return c;
}

FpnConfig small_neck(Insertion insertion) {
  FpnConfig f;
  f.out_channels = 16;
  f.heads = 1;
  f.insertion = insertion;
  return f;
}

std::array<Var<double>, 4> stage_features(const ModelConfig& backbone, Index height, Index width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::array<Var<double>, 4> c;
  for (int i = 0; i < 4; ++i) {
    const Index s = backbone.stages[i].stride;
    c[i] = constant(rand64({2, backbone.stages[i].channels, height / s, width / s}, rng));
  }
  return c;
}

// Straight-line FPN: 1x1 laterals, nearest top-down merge, 3x3 smoothing,
// stride-2 3x3 extras off the previous output.
std::vector<Var<double>> plain_fpn(const DSFpn<double>& neck, const std::array<Var<double>, 4>& c) {
  const auto& lat = neck.lateral_convs();
  const auto& smooth = neck.smooth_convs();
  Var<double> m5 = conv1x1(c[3], lat[3].weight, lat[3].bias);
  Var<double> m4 = conv1x1(c[2], lat[2].weight, lat[2].bias);
  m4 = add(m4, upsample_nearest(m5, m4.dim(2), m4.dim(3)));
  Var<double> m3 = conv1x1(c[1], lat[1].weight, lat[1].bias);
  m3 = add(m3, upsample_nearest(m4, m3.dim(2), m3.dim(3)));
  Var<double> m2 = conv1x1(c[0], lat[0].weight, lat[0].bias);
  m2 = add(m2, upsample_nearest(m3, m2.dim(2), m2.dim(3)));
  std::vector<Var<double>> p = {
      conv2d(m2, smooth[0].weight, smooth[0].bias, 1, 1), conv2d(m3, smooth[1].weight, smooth[1].bias, 1, 1),
      conv2d(m4, smooth[2].weight, smooth[2].bias, 1, 1), conv2d(m5, smooth[3].weight, smooth[3].bias, 1, 1)};
  for (const auto& e : neck.extra_convs()) p.push_back(conv2d(p.back(), e.weight, e.bias, 2, 1));
  return p;
}

TEST(Insertion, NamesRoundTrip) {
  for (auto i : {Insertion::none, Insertion::last, Insertion::lateral, Insertion::lateral_rev, Insertion::lateral_extra})
    EXPECT_EQ(parse_insertion(to_string(i)), i);
  EXPECT_THROW(parse_insertion("middle"), ConfigError);
}

TEST(DSFpn, NoneIsBitIdenticalToPlainFpn) {
  const auto backbone = small_backbone();
  DSFpn<double> neck(small_neck(Insertion::none), backbone, 5);
  EXPECT_EQ(neck.block_count(), 0);
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto c = stage_features(backbone, 64, 96, seed);
    const auto got = neck.forward(c);
    const auto want = plain_fpn(neck, c);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t l = 0; l < got.size(); ++l)
      EXPECT_TRUE(bitwise_equal(got[l].value(), want[l].value())) << "level " << l;
  }
}

TEST(DSFpn, EveryInsertionPreservesPyramidShapes) {
  const auto backbone = small_backbone();
  const auto c = stage_features(backbone, 64, 64, 7);
  for (auto ins : {Insertion::none, Insertion::last, Insertion::lateral, Insertion::lateral_rev, Insertion::lateral_extra}) {
    DSFpn<double> neck(small_neck(ins), backbone, 5);
    NoGradGuard no_grad;
    const auto p = neck.forward(c);
    ASSERT_EQ(p.size(), 6u) << to_string(ins);
    const Index grid[] = {16, 8, 4, 2, 1, 1};
    for (std::size_t l = 0; l < p.size(); ++l)
      EXPECT_EQ(p[l].shape(), (Shape{2, 16, grid[l], grid[l]})) << to_string(ins) << " level " << l;
  }
}

TEST(DSFpn, ExtraBlocksAddOnePerExtraLevel) {
  const auto backbone = small_backbone();
  DSFpn<double> lateral(small_neck(Insertion::lateral), backbone, 5);
  DSFpn<double> extra(small_neck(Insertion::lateral_extra), backbone, 5);
  EXPECT_EQ(lateral.block_count(), 4);
  EXPECT_EQ(extra.block_count(), 4 + extra.config().extra_levels);
}

TEST(DSFpn, RejectsMismatchedStageChannels) {
  const auto backbone = small_backbone();
  DSFpn<double> neck(small_neck(Insertion::none), backbone, 5);
  auto c = stage_features(backbone, 64, 64, 7);
  std::mt19937_64 rng(1);
  c[2] = constant(rand64({2, 8, 4, 4}, rng));
  EXPECT_THROW(neck.forward(c), DimensionError);
  FpnConfig bad;
  bad.out_channels = 0;
  EXPECT_THROW(DSFpn<double>(bad, backbone, 1), ConfigError);
}

TEST(DSFpnAudit, PlainCountMatchesClosedForm) {
  const auto backbone = ModelConfig::preset("T", true);
  Model<float> model(backbone, 1);
  DSFpn<float> neck(FpnConfig{}, backbone, 2);
  const auto a = fpn_audit(neck, model, 224, 224);
  const Index oc = 256;
  Index want = 0;
  for (Index ci : {64, 128, 320, 512}) want += ci * oc + oc;
  want += 4 * (9 * oc * oc + oc) + 2 * (9 * oc * oc + oc);
  EXPECT_EQ(a.neck.parameter_count(), want);
  EXPECT_EQ(count_scalars(neck.parameters()), want);
}

TEST(DSFpnAudit, OrderingAndExtraDelta) {
  const auto backbone = ModelConfig::preset("T", true);
  Model<float> model(backbone, 1);
  auto params = [&](Insertion ins) {
    FpnConfig f;
    f.insertion = ins;
    DSFpn<float> neck(f, backbone, 2);
    const auto a = fpn_audit(neck, model, 224, 224);
    EXPECT_EQ(a.neck.parameter_count(), count_scalars(neck.parameters())) << to_string(ins);
    EXPECT_EQ(a.total.parameter_count() - a.neck.parameter_count(),
              model.audit(224, 224).parameter_count() - (512 * 1000 + 1000));
    return a.neck.parameter_count();
  };
  const Index none = params(Insertion::none);
  const Index rev = params(Insertion::lateral_rev);
  const Index lateral = params(Insertion::lateral);
  const Index extra = params(Insertion::lateral_extra);
  EXPECT_LT(none, rev);
  EXPECT_LT(rev, lateral);
  EXPECT_LT(lateral, extra);
  const double delta = static_cast<double>(extra - none) / 1e6;
  EXPECT_GE(delta, 5.60 * 0.7);
  EXPECT_LE(delta, 5.60 * 1.3);
}

TEST(DSFpnAudit, MacsMatchCounter) {
  const auto backbone = small_backbone();
  for (auto ins : {Insertion::none, Insertion::last, Insertion::lateral, Insertion::lateral_rev, Insertion::lateral_extra}) {
    DSFpn<double> neck(small_neck(ins), backbone, 5);
    const auto c = stage_features(backbone, 64, 96, 3);
    NoGradGuard no_grad;
    MacCounter counter;
    neck.forward(c);
    // Stage features are batch 2; the audit is per image.
    EXPECT_EQ(counter.count(), 2 * neck.audit(64, 96).macs()) << to_string(ins);
  }
}

}  // namespace
}  // namespace dsnet
