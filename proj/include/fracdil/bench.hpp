#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fracdil/decompose.hpp"
#include "fracdil/graph.hpp"
#include "fracdil/transfer.hpp"

namespace fracdil {

struct BenchVariant {
  std::string name;
  double mean_ms = 0.0;
  double std_ms = 0.0;
  double median_ms = 0.0;
  int reps = 0;
  long long flops = 0;
};

struct BenchReport {
  std::array<int, 4> input_shape{0, 0, 0, 0};
  std::vector<BenchVariant> variants;

  const BenchVariant& variant(const std::string& name) const {
    for (const auto& v : variants)
      if (v.name == name) return v;
    throw std::invalid_argument("no bench variant named " + name);
  }
};

// Times repeated forward passes. The first five runs warm caches and are
// discarded.
inline BenchVariant bench_forward(const ModelGraph& g, const Tensor& input, int reps) {
  if (reps < 30) throw std::invalid_argument("bench needs at least 30 reps");
  validate_graph(g);
  constexpr int kWarmup = 5;
  std::vector<double> times_ms;
  times_ms.reserve(reps);
  double sink = 0.0;
  for (int i = 0; i < kWarmup + reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor y = graph_forward(g, input);
    const auto t1 = std::chrono::steady_clock::now();
    sink += y.data[0];
    if (i >= kWarmup)
      times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  if (!std::isfinite(sink)) throw std::runtime_error("bench forward produced non-finite output");
  BenchVariant v;
  v.reps = reps;
  double sum = 0.0;
  for (double t : times_ms) sum += t;
  v.mean_ms = sum / reps;
  double var = 0.0;
  for (double t : times_ms) var += (t - v.mean_ms) * (t - v.mean_ms);
  v.std_ms = std::sqrt(var / reps);
  std::sort(times_ms.begin(), times_ms.end());
  v.median_ms = reps % 2 ? times_ms[reps / 2]
                         : 0.5 * (times_ms[reps / 2 - 1] + times_ms[reps / 2]);
  return v;
}

// Builds a three-stage trunk in its dense, adaptive, and branch-rewritten
// forms (the adaptive head is biased to a fractional scale so the sampler
// does real interpolation work), then times each on the same input.
inline BenchReport bench_trunk_variants(int channels = 16, int hw = 64, int reps = 30,
                                        uint64_t seed = 7, double frac_scale = 1.5) {
  auto make_trunk = [&](bool adaptive) {
    ModelGraph g;
    int c_prev = channels;
    for (int i = 0; i < 3; ++i) {
      LayerSpec l;
      l.name = "conv" + std::to_string(i + 1);
      l.kind = adaptive ? LayerKind::gsl_conv : LayerKind::conv;
      l.c_in = c_prev;
      l.c_out = channels;
      l.k_h = l.k_w = 3;
      g.layers.push_back(l);
      LayerSpec r;
      r.name = "relu" + std::to_string(i + 1);
      r.kind = LayerKind::relu;
      r.c_in = r.c_out = channels;
      g.layers.push_back(r);
      c_prev = channels;
    }
    init_weights(g, seed);
    return g;
  };

  ModelGraph plain = make_trunk(false);
  ModelGraph adaptive = make_trunk(true);
  const float bias = static_cast<float>(std::log(frac_scale));
  std::map<std::string, ScalePair> frozen;
  for (auto& l : adaptive.layers)
    if (l.kind == LayerKind::gsl_conv) {
      adaptive.weights[l.name + ".pred.bias"].data = {bias, bias};
      frozen[l.name] = ScalePair{frac_scale, frac_scale};
    }
  ModelGraph branched = decompose_graph(adaptive, frozen);
  transfer_weights(adaptive, branched);

  Tensor input(1, channels, hw, hw);
  Rng rng(seed ^ 0x5eedu);
  input.fill_normal(rng);

  BenchReport report;
  report.input_shape = {1, channels, hw, hw};
  for (auto& [name, g] : std::initializer_list<std::pair<const char*, ModelGraph*>>{
           {"plain", &plain}, {"gsl", &adaptive}, {"fd", &branched}}) {
    BenchVariant v = bench_forward(*g, input, reps);
    v.name = name;
    v.flops = count_flops(*g, hw, hw);
    report.variants.push_back(v);
  }
  return report;
}

}  // namespace fracdil
