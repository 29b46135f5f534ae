#include "fracdil/transfer.hpp"

#include <gtest/gtest.h>

#include <numeric>

#include "fracdil/train.hpp"
#include "test_util.hpp"

using namespace fracdil;

namespace {

// One adaptive layer with ascending weights so slices are easy to recognize.
ModelGraph counting_graph(int c_in, int c_out) {
  ModelGraph g;
  LayerSpec l;
  l.name = "g1";
  l.kind = LayerKind::gsl_conv;
  l.c_in = c_in;
  l.c_out = c_out;
  l.k_h = l.k_w = 3;
  g.layers.push_back(l);
  NamedArray w{{c_out, c_in, 3, 3},
               std::vector<float>(static_cast<size_t>(c_out) * c_in * 9)};
  std::iota(w.data.begin(), w.data.end(), 0.f);
  g.weights["g1.weight"] = std::move(w);
  NamedArray b{{c_out}, std::vector<float>(c_out)};
  std::iota(b.data.begin(), b.data.end(), 0.f);
  g.weights["g1.bias"] = std::move(b);
  return g;
}

}  // namespace

TEST(TransferWeights, SlicesOutputRowsByBranch) {
  ModelGraph src = counting_graph(1, 4);
  ModelGraph dst = decompose_graph(src, {{"g1", {1.5, 1.5}}});
  const WeightMap wm = transfer_weights(src, dst);

  const NamedArray& w0 = dst.weights.at("g1.b0.weight");
  const NamedArray& w1 = dst.weights.at("g1.b1.weight");
  EXPECT_EQ(w0.dims, (std::vector<int>{2, 1, 3, 3}));
  EXPECT_EQ(w1.dims, (std::vector<int>{2, 1, 3, 3}));
  const std::vector<float>& sw = src.weights.at("g1.weight").data;
  EXPECT_TRUE(std::equal(w0.data.begin(), w0.data.end(), sw.begin()));
  EXPECT_TRUE(std::equal(w1.data.begin(), w1.data.end(), sw.begin() + 18));
  EXPECT_EQ(dst.weights.at("g1.b0.bias").data, (std::vector<float>{0.f, 1.f}));
  EXPECT_EQ(dst.weights.at("g1.b1.bias").data, (std::vector<float>{2.f, 3.f}));

  ASSERT_EQ(wm.records.size(), 2u);
  EXPECT_EQ(wm.records[0].src_lo, 0);
  EXPECT_EQ(wm.records[0].src_hi, 2);
  EXPECT_EQ(wm.records[1].src_lo, 2);
  EXPECT_EQ(wm.records[1].src_hi, 4);
  EXPECT_EQ(wm.records[0].kernel_map.size(), 9u);
  for (const auto& m : wm.records[0].kernel_map) {
    EXPECT_EQ(m.src_i, m.dst_i);
    EXPECT_EQ(m.src_j, m.dst_j);
  }
  EXPECT_EQ(wm.dropped,
            (std::vector<std::string>{"g1.pred.weight", "g1.pred.bias"}));
}

TEST(TransferWeights, CollapsedKernelKeepsTheCentreRow) {
  ModelGraph src = counting_graph(2, 8);
  ModelGraph dst = decompose_graph(src, {{"g1", {0.6, 1.4}}});
  const WeightMap wm = transfer_weights(src, dst);

  const NamedArray& w0 = dst.weights.at("g1.b0.weight");
  EXPECT_EQ(w0.dims, (std::vector<int>{4, 2, 1, 3}));
  const NamedArray& sw = src.weights.at("g1.weight");
  for (int oc = 0; oc < 4; ++oc)
    for (int ic = 0; ic < 2; ++ic)
      for (int j = 0; j < 3; ++j) {
        const size_t si = ((static_cast<size_t>(oc) * 2 + ic) * 3 + 1) * 3 + j;
        const size_t di = (static_cast<size_t>(oc) * 2 + ic) * 3 + j;
        EXPECT_EQ(w0.data[di], sw.data[si]);
      }
  for (const auto& m : wm.records[0].kernel_map) {
    EXPECT_EQ(m.src_i, 1);  // centre row of the 3x3 source
    EXPECT_EQ(m.dst_i, 0);
  }
  // The upper branch keeps the full kernel.
  EXPECT_EQ(dst.weights.at("g1.b1.weight").dims, (std::vector<int>{4, 2, 3, 3}));
}

TEST(TransferWeights, UntouchedLayersCopyVerbatim) {
  ModelGraph src = make_toy_net(3, /*adaptive=*/true, {4, 6});
  init_weights(src, 42);
  std::map<std::string, ScalePair> frozen{{"conv1", {2.0, 2.0}}, {"conv2", {1.7, 2.9}}};
  ModelGraph dst = decompose_graph(src, frozen);
  transfer_weights(src, dst);
  EXPECT_EQ(dst.weights.at("fc.weight").data, src.weights.at("fc.weight").data);
  EXPECT_EQ(dst.weights.at("fc.bias").data, src.weights.at("fc.bias").data);
  EXPECT_EQ(dst.weights.count("conv1.pred.weight"), 0u);
  EXPECT_EQ(dst.weights.count("conv1.weight"), 0u);
  EXPECT_EQ(dst.weights.count("conv1.b0.weight"), 1u);
}

TEST(TransferWeights, MismatchedGraphsAreRejected) {
  ModelGraph src = counting_graph(1, 4);
  ModelGraph dst = decompose_graph(src, {{"g1", {1.5, 1.5}}});

  ModelGraph extra = dst;
  LayerSpec relu;
  relu.name = "r";
  relu.kind = LayerKind::relu;
  relu.c_in = relu.c_out = 4;
  extra.layers.push_back(relu);
  try {
    transfer_weights(src, extra);
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "graph/decomposition mismatch");
  }

  ModelGraph renamed = dst;
  renamed.layers[0].name = "g2";
  if (auto n = renamed.weights.extract("g1.b0.weight"); !n.empty()) {
    n.key() = "g2.b0.weight";
    renamed.weights.insert(std::move(n));
  }
  EXPECT_THROW(transfer_weights(src, renamed), std::invalid_argument);

  ModelGraph wrong_kind = dst;
  wrong_kind.layers[0].kind = LayerKind::conv;
  EXPECT_THROW(transfer_weights(src, wrong_kind), std::invalid_argument);
}

TEST(TransferWeights, MissingSourceArrayIsReported) {
  ModelGraph src = counting_graph(1, 4);
  ModelGraph dst = decompose_graph(src, {{"g1", {1.5, 1.5}}});
  src.weights.erase("g1.weight");
  try {
    transfer_weights(src, dst);
    FAIL() << "expected runtime_error";
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "missing weight array: g1.weight");
  }
}

TEST(VerifyTransfer, IntegralScalesGiveIdenticalOutputs) {
  ModelGraph src = make_toy_net(3, /*adaptive=*/true, {4, 6});
  init_weights(src, 7);
  std::map<std::string, ScalePair> frozen{{"conv1", {2.0, 2.0}}, {"conv2", {1.0, 1.0}}};
  ModelGraph dst = decompose_graph(src, frozen);
  transfer_weights(src, dst);
  apply_frozen_scales(src, frozen);

  std::vector<Tensor> probes;
  probes.push_back(testutil::random_tensor(2, 1, 10, 10, 71));
  probes.push_back(testutil::random_tensor(1, 1, 9, 9, 72));
  const TransferReport report = verify_transfer(src, dst, probes);
  ASSERT_EQ(report.checks.size(), 4u);
  for (const auto& c : report.checks) {
    EXPECT_EQ(c.check, "integral_identity");
    EXPECT_TRUE(c.pass) << c.layer << " diff " << c.max_diff;
    EXPECT_LE(c.max_diff, 1e-5);
  }
  EXPECT_TRUE(report.all_passed());
}

TEST(VerifyTransfer, NearIntegralScalesRoundAndReportTheDrift) {
  ModelGraph src = make_toy_net(3, /*adaptive=*/true, {4, 6});
  init_weights(src, 9);
  // Fractions at 0.03 fall under the rounding threshold: single branches.
  std::map<std::string, ScalePair> frozen{{"conv1", {1.03, 0.97}}, {"conv2", {2.0, 2.0}}};
  ModelGraph dst = decompose_graph(src, frozen);
  transfer_weights(src, dst);
  apply_frozen_scales(src, frozen);

  std::vector<Tensor> probes{testutil::random_tensor(1, 1, 10, 10, 73)};
  const TransferReport report = verify_transfer(src, dst, probes);
  ASSERT_EQ(report.checks.size(), 3u);
  EXPECT_EQ(report.checks[0].check, "integral_identity");
  EXPECT_LE(report.checks[0].max_diff, 1e-5);
  EXPECT_EQ(report.checks[1].check, "rounded_scale_outputs");
  EXPECT_TRUE(report.checks[1].pass);
  EXPECT_GT(report.checks[1].max_diff, 1e-5);  // real drift, reported not judged
  EXPECT_EQ(report.checks[2].check, "integral_identity");
  EXPECT_TRUE(report.all_passed());
}

TEST(VerifyTransfer, FractionalScalesPassTheMeanIdentity) {
  ModelGraph src = make_toy_net(3, /*adaptive=*/true, {10, 10});
  init_weights(src, 9);
  std::map<std::string, ScalePair> frozen{{"conv1", {1.7, 2.9}}, {"conv2", {2.02, 1.7}}};
  ModelGraph dst = decompose_graph(src, frozen);
  transfer_weights(src, dst);
  apply_frozen_scales(src, frozen);

  std::vector<Tensor> probes;
  probes.push_back(testutil::random_tensor(2, 1, 12, 12, 91));
  const TransferReport report = verify_transfer(src, dst, probes);
  ASSERT_EQ(report.checks.size(), 4u);
  int mean_checks = 0, info_checks = 0;
  for (const auto& c : report.checks) {
    if (c.check == "mean_equivalence") {
      EXPECT_TRUE(c.pass) << c.layer << " diff " << c.max_diff;
      EXPECT_LE(c.max_diff, 1e-4);
      ++mean_checks;
    } else {
      EXPECT_EQ(c.check, "transferred_outputs");
      EXPECT_TRUE(c.pass);
      EXPECT_FALSE(c.note.empty());
      ++info_checks;
    }
  }
  EXPECT_EQ(mean_checks, 2);
  EXPECT_EQ(info_checks, 2);
  EXPECT_TRUE(report.all_passed());
}

TEST(VerifyTransfer, NeedsAtLeastOneProbe) {
  ModelGraph src = counting_graph(1, 4);
  ModelGraph dst = decompose_graph(src, {{"g1", {1.5, 1.5}}});
  transfer_weights(src, dst);
  EXPECT_THROW(verify_transfer(src, dst, {}), std::invalid_argument);
}
