#include "fracdil/train.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace fracdil;

namespace {

Tensor logits_tensor(std::initializer_list<float> values, int classes) {
  const int n = static_cast<int>(values.size()) / classes;
  Tensor t(n, classes, 1, 1);
  std::copy(values.begin(), values.end(), t.data.begin());
  return t;
}

SyntheticDataset easy_dataset(int n, int patterns, uint64_t seed) {
  DatasetConfig cfg;
  cfg.n = n;
  cfg.num_patterns = patterns;
  cfg.scale = 2.0;
  cfg.noise = 0.15;
  cfg.image = 16;
  return gen_multiscale_dataset(cfg, seed);
}

}  // namespace

TEST(SoftmaxXent, MatchesDirectFormula) {
  const Tensor logits = logits_tensor({2.f, 0.f, -1.f, 0.5f, 0.5f, 0.5f}, 3);
  const std::vector<int> labels = {1, 2};
  auto [loss, grad] = softmax_xent(logits, labels);

  double expected = 0.0;
  const double z0[3] = {2.0, 0.0, -1.0}, z1[3] = {0.5, 0.5, 0.5};
  const double lse0 = std::log(std::exp(z0[0]) + std::exp(z0[1]) + std::exp(z0[2]));
  const double lse1 = std::log(3.0) + 0.5;
  expected = 0.5 * ((lse0 - z0[1]) + (lse1 - z1[2]));
  EXPECT_NEAR(loss, expected, 1e-6);

  for (int k = 0; k < 3; ++k) {
    const double p = std::exp(z0[k] - lse0);
    EXPECT_NEAR(grad.at(0, k, 0, 0), (p - (k == 1 ? 1.0 : 0.0)) / 2.0, 1e-6);
    EXPECT_NEAR(grad.at(1, k, 0, 0), (1.0 / 3.0 - (k == 2 ? 1.0 : 0.0)) / 2.0, 1e-6);
  }
}

TEST(SoftmaxXent, GradientSumsToZeroPerSample) {
  const Tensor logits = logits_tensor({0.3f, -1.2f, 2.2f, 0.9f}, 4);
  auto [loss, grad] = softmax_xent(logits, {3});
  double sum = 0.0;
  for (int k = 0; k < 4; ++k) sum += grad.at(0, k, 0, 0);
  EXPECT_NEAR(sum, 0.0, 1e-7);
}

TEST(SoftmaxXent, RejectsBadInputs) {
  Tensor spatial(1, 2, 2, 2);
  EXPECT_THROW(softmax_xent(spatial, {0}), std::invalid_argument);
  const Tensor logits = logits_tensor({0.f, 0.f}, 2);
  EXPECT_THROW(softmax_xent(logits, {0, 1}), std::invalid_argument);
  EXPECT_THROW(softmax_xent(logits, {2}), std::invalid_argument);
  EXPECT_THROW(softmax_xent(logits, {-1}), std::invalid_argument);
}

TEST(Train, ZeroEpochsLeavesWeightsAlone) {
  ModelGraph g = make_toy_net(4, false, {4});
  init_weights(g, 3);
  const WeightStore before = g.weights;
  TrainConfig cfg;
  cfg.epochs = 0;
  const TrainResult r = train(g, easy_dataset(8, 4, 1), cfg);
  EXPECT_TRUE(r.epoch_loss.empty());
  for (const auto& [name, arr] : before) EXPECT_EQ(g.weights.at(name).data, arr.data);
}

TEST(Train, LossFallsOnAnEasyTask) {
  ModelGraph g = make_toy_net(2, false, {6});
  init_weights(g, 5);
  // Cell spacing 1 keeps whole motifs inside one 3x3 window, so a single
  // conv stage plus pooling is enough to separate two patterns.
  DatasetConfig dcfg;
  dcfg.n = 64;
  dcfg.num_patterns = 2;
  dcfg.scale = 1.0;
  dcfg.noise = 0.1;
  dcfg.image = 12;
  const SyntheticDataset ds = gen_multiscale_dataset(dcfg, 2);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch = 16;
  cfg.lr = 0.3;
  cfg.seed = 7;
  const TrainResult r = train(g, ds, cfg);
  ASSERT_EQ(r.epoch_loss.size(), 30u);
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
  const EvalResult ev = evaluate(g, ds);
  EXPECT_GE(ev.accuracy, 0.75);
  EXPECT_TRUE(std::isfinite(ev.mean_loss));
}

TEST(Train, RetracesTheSameTrajectory) {
  const SyntheticDataset ds = easy_dataset(16, 2, 4);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 8;
  auto run = [&] {
    ModelGraph g = make_toy_net(2, false, {4});
    init_weights(g, 11);
    train(g, ds, cfg);
    return g.weights;
  };
  const WeightStore a = run();
  const WeightStore b = run();
  for (const auto& [name, arr] : a) EXPECT_EQ(b.at(name).data, arr.data);
}

TEST(Train, RunawayStepSizeIsReportedAsDivergence) {
  ModelGraph g = make_toy_net(4, false, {4});
  init_weights(g, 13);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch = 8;
  cfg.lr = 1e12;
  try {
    train(g, easy_dataset(8, 4, 6), cfg);
    FAIL() << "expected runtime_error";
  } catch (const std::runtime_error& e) {
    EXPECT_EQ(std::string(e.what()).rfind("training diverged at epoch", 0), 0u);
  }
}

TEST(Train, RejectsBadConfigs) {
  ModelGraph g = make_toy_net(4, false, {4});
  init_weights(g, 1);
  TrainConfig cfg;
  cfg.batch = 0;
  EXPECT_THROW(train(g, easy_dataset(8, 4, 1), cfg), std::invalid_argument);
  cfg = {};
  cfg.epochs = -1;
  EXPECT_THROW(train(g, easy_dataset(8, 4, 1), cfg), std::invalid_argument);
  cfg = {};
  EXPECT_THROW(train(g, SyntheticDataset{}, cfg), std::invalid_argument);
}

TEST(Evaluate, IsDeterministic) {
  ModelGraph g = make_toy_net(4, false, {4});
  init_weights(g, 21);
  const SyntheticDataset ds = easy_dataset(24, 4, 8);
  const EvalResult a = evaluate(g, ds);
  const EvalResult b = evaluate(g, ds);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.mean_loss, b.mean_loss);
  EXPECT_GE(a.accuracy, 0.0);
  EXPECT_LE(a.accuracy, 1.0);
}

TEST(ScaleStats, FreshHeadPredictsUnitScaleEverywhere) {
  ModelGraph g = make_toy_net(4, true, {4});
  init_weights(g, 31);  // zero scale head
  const SyntheticDataset ds = easy_dataset(12, 4, 9);
  const std::vector<ScaleStats> stats = collect_scale_stats(g, ds, 10);
  ASSERT_EQ(stats.size(), 1u);
  EXPECT_EQ(stats[0].layer, "conv1");
  EXPECT_EQ(stats[0].n_samples, 10);
  EXPECT_DOUBLE_EQ(stats[0].mean_h, 1.0);
  EXPECT_DOUBLE_EQ(stats[0].mean_w, 1.0);
  EXPECT_DOUBLE_EQ(stats[0].std_h, 0.0);

  const auto frozen = freeze_scales(stats);
  EXPECT_DOUBLE_EQ(frozen.at("conv1").h, 1.0);
  ModelGraph g2 = g;
  apply_frozen_scales(g2, frozen);
  ASSERT_TRUE(g2.layers[0].scale.has_value());
  EXPECT_DOUBLE_EQ(g2.layers[0].scale->h, 1.0);

  try {
    apply_frozen_scales(g2, {});
    FAIL() << "expected runtime_error";
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "missing frozen scale");
  }
}

TEST(ScaleStats, SummaryNeedsTwoSamples) {
  EXPECT_THROW(summarize_scales("l", {ScalePair{1.0, 1.0}}), std::invalid_argument);
  ModelGraph g = make_toy_net(4, true, {4});
  init_weights(g, 33);
  EXPECT_THROW(collect_scale_stats(g, easy_dataset(8, 4, 10), 1), std::invalid_argument);
}

TEST(ScaleStats, CsvHasOneRowPerLayer) {
  std::vector<ScaleStats> stats;
  stats.push_back({"conv1", 1.5, 0.25, 2.0, 0.5, 64});
  stats.push_back({"conv2", 1.0, 0.0, 1.0, 0.0, 64});
  const std::string path = testing::TempDir() + "scale_stats_test.csv";
  save_scale_stats_csv(stats, path);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  EXPECT_EQ(line, "layer,mean_h,std_h,mean_w,std_w,n");
  std::getline(f, line);
  EXPECT_EQ(line, "conv1,1.5,0.25,2,0.5,64");
  std::getline(f, line);
  EXPECT_EQ(line, "conv2,1,0,1,0,64");
  EXPECT_FALSE(std::getline(f, line));
}
