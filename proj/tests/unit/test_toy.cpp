#include <dsnet/verify/toy.hpp>

#include <gtest/gtest.h>

namespace dsnet::verify {
namespace {

ModelConfig toy_model(double alpha) {
  auto c = reduced_config(ModelConfig::preset("T", true), 10);
  c.alpha = alpha;
  return c;
}

TEST(ToyDataset, ReproducibleFromSeed) {
  ToyDatasetConfig c;
  c.images = 20;
  const auto a = make_toy_dataset(c);
  const auto b = make_toy_dataset(c);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_TRUE(std::equal(a.images.values().begin(), a.images.values().end(), b.images.values().begin()));
  c.seed = 2;
  const auto d = make_toy_dataset(c);
  EXPECT_FALSE(std::equal(a.images.values().begin(), a.images.values().end(), d.images.values().begin()));
  EXPECT_EQ(a.images.shape(), (Shape{20, 3, 64, 64}));
}

TEST(ToyDataset, BalancedClasses) {
  const auto data = make_toy_dataset({});
  std::vector<int> counts(10);
  for (int l : data.labels) ++counts[static_cast<std::size_t>(l)];
  for (int n : counts) EXPECT_EQ(n, 10);
  ToyDatasetConfig bad;
  bad.height = 60;
  EXPECT_THROW(make_toy_dataset(bad), ConfigError);
}

TEST(ToyDataset, ReducedConfigKeepsWidths) {
  const auto c = toy_model(0.5);
  for (const auto& s : c.stages) EXPECT_EQ(s.depth, 1);
  EXPECT_EQ(c.stages[3].channels, 512);
  EXPECT_EQ(c.num_classes, 10);
}

class ToyOverfit : public ::testing::TestWithParam<double> {};

TEST_P(ToyOverfit, ReachesTargetAccuracy) {
  const auto data = make_toy_dataset({});
  const auto result = overfit_toy(toy_model(GetParam()), data, {});
  EXPECT_FALSE(result.diverged);
  EXPECT_TRUE(result.reached_target) << "final accuracy " << result.final_accuracy;
  EXPECT_GE(result.final_accuracy, 0.99);
  ASSERT_FALSE(result.curve.empty());
  EXPECT_LE(static_cast<Index>(result.curve.size()), 200);
}

INSTANTIATE_TEST_SUITE_P(Alpha, ToyOverfit, ::testing::Values(0.0, 0.5));

TEST(ToyOverfit, SmoothedLossNeverRises) {
  const auto data = make_toy_dataset({});
  ToyRunConfig run;
  run.epochs = 30;
  run.early_stop = false;
  const auto result = overfit_toy(toy_model(0.5), data, run);
  ASSERT_EQ(result.curve.size(), 30u);
  EXPECT_TRUE(smoothed_loss_nonincreasing(result.curve, 10, 1));
  EXPECT_LT(result.curve.back().loss, 1e-3);
}

TEST(ToyOverfit, SmoothingHelper) {
  std::vector<EpochRecord> curve;
  for (int e = 0; e < 12; ++e) curve.push_back({e + 1, 1.0 / (e + 1), 0});
  EXPECT_TRUE(smoothed_loss_nonincreasing(curve, 3));
  curve[10].loss = 5;
  EXPECT_FALSE(smoothed_loss_nonincreasing(curve, 3));
  EXPECT_TRUE(smoothed_loss_nonincreasing(curve, 20));
}

TEST(ToyOverfit, ZeroLearningRateStaysAtChance) {
  const auto data = make_toy_dataset({});
  ToyRunConfig run;
  run.epochs = 3;
  run.optimizer.lr = 0;
  Model<float> before(toy_model(0.5), run.seed);
  const double initial = evaluate_accuracy(before, data, run.batch_size);
  const auto result = overfit_toy(toy_model(0.5), data, run);
  ASSERT_EQ(result.curve.size(), 3u);
  for (const auto& e : result.curve) EXPECT_EQ(e.accuracy, initial);
  EXPECT_LE(result.final_accuracy, 0.2);
  EXPECT_FALSE(result.reached_target);
}

}  // namespace
}  // namespace dsnet::verify
