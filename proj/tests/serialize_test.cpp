#include "fracdil/serialize.hpp"

#include <gtest/gtest.h>

#include <cstdint>
#include <fstream>

#include "fracdil/decompose.hpp"

using namespace fracdil;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ModelGraph scaled_graph() {
  ModelGraph g = make_toy_net(4, /*adaptive=*/true, {6, 8});
  g.layers[0].scale = ScalePair{1.7, 2.9};
  g.layers[2].scale = ScalePair{0.6, 1.4};
  return g;
}

ModelGraph annotated_graph() {
  std::map<std::string, ScalePair> frozen{{"conv1", {1.7, 2.9}}, {"conv2", {0.6, 1.4}}};
  return decompose_graph(scaled_graph(), frozen);
}

void expect_same_layers(const ModelGraph& g, const ModelGraph& r) {
  ASSERT_EQ(r.layers.size(), g.layers.size());
  for (size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& a = g.layers[i];
    const LayerSpec& b = r.layers[i];
    EXPECT_EQ(a.name, b.name);
    EXPECT_EQ(a.kind, b.kind);
    EXPECT_EQ(a.c_in, b.c_in);
    EXPECT_EQ(a.c_out, b.c_out);
    EXPECT_EQ(a.k_h, b.k_h);
    EXPECT_EQ(a.k_w, b.k_w);
    EXPECT_EQ(a.stride, b.stride);
    ASSERT_EQ(a.scale.has_value(), b.scale.has_value());
    if (a.scale) {
      EXPECT_DOUBLE_EQ(a.scale->h, b.scale->h);
      EXPECT_DOUBLE_EQ(a.scale->w, b.scale->w);
    }
    ASSERT_EQ(a.decomposition.has_value(), b.decomposition.has_value());
    if (a.decomposition) {
      EXPECT_DOUBLE_EQ(a.decomposition->alpha, b.decomposition->alpha);
      EXPECT_DOUBLE_EQ(a.decomposition->source_scale.h, b.decomposition->source_scale.h);
      EXPECT_DOUBLE_EQ(a.decomposition->source_scale.w, b.decomposition->source_scale.w);
      EXPECT_DOUBLE_EQ(a.decomposition->near_integer_threshold,
                       b.decomposition->near_integer_threshold);
      ASSERT_EQ(a.decomposition->branches.size(), b.decomposition->branches.size());
      for (size_t k = 0; k < a.decomposition->branches.size(); ++k) {
        EXPECT_EQ(a.decomposition->branches[k].dilation, b.decomposition->branches[k].dilation);
        EXPECT_EQ(a.decomposition->branches[k].kernel, b.decomposition->branches[k].kernel);
        EXPECT_EQ(a.decomposition->branches[k].out_lo, b.decomposition->branches[k].out_lo);
        EXPECT_EQ(a.decomposition->branches[k].out_hi, b.decomposition->branches[k].out_hi);
      }
    }
  }
}

}  // namespace

TEST(GraphJson, RoundTripPreservesEveryField) {
  for (const ModelGraph& g : {scaled_graph(), annotated_graph()}) {
    const ordered_json j = graph_to_json(g);
    EXPECT_EQ(j["version"], 1);
    expect_same_layers(g, graph_from_json(j));
  }
}

TEST(GraphJson, FileRoundTripIsByteStable) {
  const ModelGraph g = annotated_graph();
  const std::string p1 = testing::TempDir() + "graph_a.json";
  const std::string p2 = testing::TempDir() + "graph_b.json";
  save_graph_json(g, p1);
  save_graph_json(load_graph_json(p1), p2);
  EXPECT_EQ(read_file(p1), read_file(p2));
}

TEST(GraphJson, RejectsUnknownVersion) {
  ordered_json j = graph_to_json(make_toy_net(2, false, {4}));
  j["version"] = 2;
  try {
    graph_from_json(j);
    FAIL() << "expected runtime_error";
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "unsupported graph version");
  }
  j.erase("version");
  EXPECT_THROW(graph_from_json(j), std::runtime_error);
}

TEST(WeightFile, RoundTripIsBitExact) {
  WeightStore ws;
  ws["a.weight"] = {{2, 3}, {0.f, -0.f, 1.5f, 1e-38f, 3.14159265f, -2.5e7f}};
  ws["b.bias"] = {{1}, {42.f}};
  ws["empty"] = {{0}, {}};
  const std::string path = testing::TempDir() + "roundtrip.podw";
  save_weights(ws, path);
  const WeightStore r = load_weights(path);
  ASSERT_EQ(r.size(), ws.size());
  for (const auto& [name, arr] : ws) {
    const NamedArray& got = r.at(name);
    EXPECT_EQ(got.dims, arr.dims);
    ASSERT_EQ(got.data.size(), arr.data.size());
    for (size_t i = 0; i < arr.data.size(); ++i)
      EXPECT_EQ(std::bit_cast<uint32_t>(got.data[i]), std::bit_cast<uint32_t>(arr.data[i]));
  }
}

TEST(WeightFile, SavingTwiceIsByteIdentical) {
  WeightStore ws;
  ws["w"] = {{4}, {1.f, 2.f, 3.f, 4.f}};
  const std::string p1 = testing::TempDir() + "dup_a.podw";
  const std::string p2 = testing::TempDir() + "dup_b.podw";
  save_weights(ws, p1);
  save_weights(ws, p2);
  EXPECT_EQ(read_file(p1), read_file(p2));
}

TEST(WeightFile, CorruptMagicIsADistinctError) {
  WeightStore ws;
  ws["w"] = {{1}, {1.f}};
  const std::string path = testing::TempDir() + "magic.podw";
  save_weights(ws, path);
  std::string bytes = read_file(path);
  bytes[0] = 'Q';
  write_file(path, bytes);
  try {
    load_weights(path);
    FAIL() << "expected BadMagicError";
  } catch (const BadMagicError& e) {
    EXPECT_STREQ(e.what(), "bad weight file magic");
  }
}

TEST(WeightFile, TruncatedPayloadIsRejected) {
  WeightStore ws;
  ws["w"] = {{4}, {1.f, 2.f, 3.f, 4.f}};
  const std::string path = testing::TempDir() + "short.podw";
  save_weights(ws, path);
  const std::string bytes = read_file(path);
  write_file(path, bytes.substr(0, bytes.size() - 3));
  try {
    load_weights(path);
    FAIL() << "expected runtime_error";
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "truncated weight file");
  }
}

TEST(WeightFile, UnsupportedVersionIsRejected) {
  WeightStore ws;
  ws["w"] = {{1}, {1.f}};
  const std::string path = testing::TempDir() + "version.podw";
  save_weights(ws, path);
  std::string bytes = read_file(path);
  bytes[4] = 9;  // little-endian version field follows the magic
  write_file(path, bytes);
  EXPECT_THROW(load_weights(path), std::runtime_error);
}

TEST(WeightFile, MissingFileIsReported) {
  EXPECT_THROW(load_weights(testing::TempDir() + "does_not_exist.podw"),
               std::runtime_error);
}

TEST(WeightFile, SizeMismatchIsCaughtAtSave) {
  WeightStore ws;
  ws["w"] = {{3}, {1.f, 2.f}};  // dims say 3, payload has 2
  EXPECT_THROW(save_weights(ws, testing::TempDir() + "bad.podw"), std::runtime_error);
}
