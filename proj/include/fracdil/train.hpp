#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "fracdil/dataset.hpp"
#include "fracdil/graph.hpp"

namespace fracdil {

// Mean softmax cross-entropy over a batch of (N, P, 1, 1) logits, plus the
// gradient with respect to the logits.
inline std::pair<double, Tensor> softmax_xent(const Tensor& logits,
                                              const std::vector<int>& labels) {
  if (logits.h != 1 || logits.w != 1) throw std::invalid_argument("logits must be 1x1");
  if (static_cast<size_t>(logits.n) != labels.size())
    throw std::invalid_argument("label count mismatch");
  Tensor grad(logits.n, logits.c, 1, 1);
  double total = 0.0;
  for (int in = 0; in < logits.n; ++in) {
    const float* z = logits.plane(in, 0);
    const int y = labels[in];
    if (y < 0 || y >= logits.c) throw std::invalid_argument("label out of range");
    double zmax = z[0];
    for (int k = 1; k < logits.c; ++k) zmax = std::max(zmax, static_cast<double>(z[k]));
    double sum = 0.0;
    for (int k = 0; k < logits.c; ++k) sum += std::exp(z[k] - zmax);
    const double lse = zmax + std::log(sum);
    total += lse - z[y];
    float* gz = grad.plane(in, 0);
    for (int k = 0; k < logits.c; ++k) {
      const double p = std::exp(z[k] - lse);
      gz[k] = static_cast<float>((p - (k == y ? 1.0 : 0.0)) / logits.n);
    }
  }
  return {total / logits.n, std::move(grad)};
}

struct TrainConfig {
  int epochs = 10;
  int batch = 32;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double pred_lr_mult = 1.0;  // extra learning rate on scale-head parameters
  uint64_t seed = 1;
};

struct TrainResult {
  std::vector<double> epoch_loss;
};

namespace detail {

inline Tensor gather_batch(const SyntheticDataset& ds, const std::vector<int>& idx,
                           size_t lo, size_t hi, std::vector<int>& labels) {
  const int bs = static_cast<int>(hi - lo);
  Tensor batch(bs, ds.images.c, ds.images.h, ds.images.w);
  labels.resize(bs);
  const size_t plane = static_cast<size_t>(ds.images.c) * ds.images.h * ds.images.w;
  for (int b = 0; b < bs; ++b) {
    const int src = idx[lo + b];
    std::copy(ds.images.data.begin() + src * plane, ds.images.data.begin() + (src + 1) * plane,
              batch.data.begin() + b * plane);
    labels[b] = ds.labels[src];
  }
  return batch;
}

}  // namespace detail

// Minibatch SGD with momentum. Sample order reshuffles every epoch from the
// config seed, so a given (graph, dataset, config) triple always retraces the
// same trajectory.
inline TrainResult train(ModelGraph& g, const SyntheticDataset& ds, const TrainConfig& cfg) {
  validate_graph(g);
  if (ds.labels.empty()) throw std::invalid_argument("empty dataset");
  if (cfg.batch < 1) throw std::invalid_argument("bad batch size");
  if (cfg.epochs < 0) throw std::invalid_argument("bad epoch count");

  std::map<std::string, std::vector<float>> velocity;
  for (const auto& [name, arr] : g.weights) velocity[name].assign(arr.data.size(), 0.f);

  Rng rng(cfg.seed);
  std::vector<int> idx(ds.labels.size());
  std::iota(idx.begin(), idx.end(), 0);

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[rng.uniform_int(0, static_cast<int>(i) - 1)]);
    double epoch_loss = 0.0;
    size_t batches = 0;
    for (size_t lo = 0; lo < idx.size(); lo += cfg.batch) {
      const size_t hi = std::min(idx.size(), lo + cfg.batch);
      std::vector<int> labels;
      const Tensor batch = detail::gather_batch(ds, idx, lo, hi, labels);
      ForwardTrace trace;
      const Tensor logits = graph_forward(g, batch, &trace);
      auto [loss, grad_logits] = softmax_xent(logits, labels);
      if (!std::isfinite(loss))
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch));
      epoch_loss += loss;
      ++batches;
      GradStore gs;
      graph_backward(g, trace, grad_logits, gs);
      for (auto& [name, arr] : g.weights) {
        const auto git = gs.find(name);
        if (git == gs.end()) continue;
        const bool is_pred = name.find(".pred.") != std::string::npos;
        sgd_step(arr.data, git->second, velocity[name],
                 cfg.lr * (is_pred ? cfg.pred_lr_mult : 1.0), cfg.momentum,
                 cfg.weight_decay);
      }
    }
    result.epoch_loss.push_back(batches ? epoch_loss / batches : 0.0);
  }
  return result;
}

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

inline EvalResult evaluate(const ModelGraph& g, const SyntheticDataset& ds, int batch = 64) {
  validate_graph(g);
  if (ds.labels.empty()) throw std::invalid_argument("empty dataset");
  std::vector<int> idx(ds.labels.size());
  std::iota(idx.begin(), idx.end(), 0);
  size_t correct = 0;
  double loss_sum = 0.0;
  for (size_t lo = 0; lo < idx.size(); lo += batch) {
    const size_t hi = std::min(idx.size(), lo + static_cast<size_t>(batch));
    std::vector<int> labels;
    const Tensor b = detail::gather_batch(ds, idx, lo, hi, labels);
    const Tensor logits = graph_forward(g, b);
    auto [loss, grad] = softmax_xent(logits, labels);
    loss_sum += loss * static_cast<double>(hi - lo);
    for (int in = 0; in < logits.n; ++in) {
      const float* z = logits.plane(in, 0);
      int best = 0;
      for (int k = 1; k < logits.c; ++k)
        if (z[k] > z[best]) best = k;
      if (best == labels[in]) ++correct;
    }
  }
  return {static_cast<double>(correct) / ds.labels.size(),
          loss_sum / static_cast<double>(ds.labels.size())};
}

// Runs up to `sample_limit` dataset samples through the graph and summarizes
// the scales every adaptive layer chose.
inline std::vector<ScaleStats> collect_scale_stats(const ModelGraph& g,
                                                   const SyntheticDataset& ds,
                                                   int sample_limit) {
  validate_graph(g);
  const int n = std::min<int>(sample_limit, static_cast<int>(ds.labels.size()));
  if (n < 2) throw std::invalid_argument("scale statistics need at least 2 samples");
  std::map<std::string, std::vector<ScalePair>> per_layer;
  constexpr int kBatch = 64;
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int lo = 0; lo < n; lo += kBatch) {
    const int hi = std::min(n, lo + kBatch);
    std::vector<int> labels;
    const Tensor b = detail::gather_batch(ds, idx, lo, hi, labels);
    ForwardTrace trace;
    graph_forward(g, b, &trace);
    for (size_t li = 0; li < g.layers.size(); ++li)
      if (g.layers[li].kind == LayerKind::gsl_conv) {
        auto& dst = per_layer[g.layers[li].name];
        dst.insert(dst.end(), trace.scales[li].begin(), trace.scales[li].end());
      }
  }
  std::vector<ScaleStats> stats;
  for (const auto& l : g.layers)
    if (l.kind == LayerKind::gsl_conv) stats.push_back(summarize_scales(l.name, per_layer[l.name]));
  return stats;
}

// Stamps frozen per-layer scales onto the adaptive layers of a graph.
inline void apply_frozen_scales(ModelGraph& g, const std::map<std::string, ScalePair>& frozen) {
  for (auto& l : g.layers) {
    if (l.kind != LayerKind::gsl_conv) continue;
    auto it = frozen.find(l.name);
    if (it == frozen.end()) throw std::runtime_error("missing frozen scale");
    l.scale = it->second;
  }
}

inline void save_scale_stats_csv(const std::vector<ScaleStats>& stats,
                                 const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "layer,mean_h,std_h,mean_w,std_w,n\n";
  char line[256];
  for (const auto& st : stats) {
    std::snprintf(line, sizeof line, "%s,%.9g,%.9g,%.9g,%.9g,%d\n", st.layer.c_str(),
                  st.mean_h, st.std_h, st.mean_w, st.std_w, st.n_samples);
    f << line;
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace fracdil
