#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fracdil/gsl.hpp"

namespace fracdil {

enum class LayerKind { conv, gsl_conv, fd_branch_group, pool, linear, relu };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::gsl_conv: return "gsl_conv";
    case LayerKind::fd_branch_group: return "fd_branch_group";
    case LayerKind::pool: return "pool";
    case LayerKind::linear: return "linear";
    case LayerKind::relu: return "relu";
  }
  throw std::invalid_argument("unknown layer kind");
}

inline LayerKind layer_kind_from_name(const std::string& s) {
  if (s == "conv") return LayerKind::conv;
  if (s == "gsl_conv") return LayerKind::gsl_conv;
  if (s == "fd_branch_group") return LayerKind::fd_branch_group;
  if (s == "pool") return LayerKind::pool;
  if (s == "linear") return LayerKind::linear;
  if (s == "relu") return LayerKind::relu;
  throw std::invalid_argument("unknown layer kind: " + s);
}

// One fixed-dilation branch owning a contiguous slice of output channels.
struct BranchSpec {
  std::pair<int, int> dilation{1, 1};
  std::pair<int, int> kernel{3, 3};
  int out_lo = 0, out_hi = 0;  // half-open channel range
};

// Record of how a fractional sampling rate was rewritten into branches.
struct DecompositionResult {
  double alpha = 0.0;
  ScalePair source_scale;
  double near_integer_threshold = 0.05;
  std::vector<BranchSpec> branches;
};

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::conv;
  int c_in = 0, c_out = 0;
  int k_h = 1, k_w = 1;
  std::pair<int, int> stride{1, 1};
  std::pair<int, int> dilation{1, 1};          // conv only
  std::optional<ScalePair> scale;              // gsl_conv: frozen mean, once known
  std::optional<DecompositionResult> decomposition;  // fd_branch_group only
};

struct NamedArray {
  std::vector<int> dims;
  std::vector<float> data;

  size_t count() const {
    size_t c = 1;
    for (int d : dims) c *= static_cast<size_t>(d);
    return c;
  }
};

// std::map keeps name order stable, which keeps serialization and update
// order deterministic.
using WeightStore = std::map<std::string, NamedArray>;
using GradStore = std::map<std::string, std::vector<float>>;

struct ModelGraph {
  std::vector<LayerSpec> layers;
  WeightStore weights;
};

inline const NamedArray& fetch_array(const WeightStore& ws, const std::string& name) {
  auto it = ws.find(name);
  if (it == ws.end()) throw std::runtime_error("missing weight array: " + name);
  return it->second;
}

inline void validate_graph(const ModelGraph& g) {
  std::map<std::string, int> seen;
  int prev_c = -1;
  for (const auto& l : g.layers) {
    if (l.name.empty()) throw std::invalid_argument("unnamed layer");
    if (seen[l.name]++) throw std::invalid_argument("duplicate layer name: " + l.name);
    if (l.kind == LayerKind::relu || l.kind == LayerKind::pool) {
      if (prev_c >= 0 && l.c_in > 0 && l.c_in != prev_c)
        throw std::invalid_argument("channel mismatch at layer " + l.name);
      prev_c = l.c_in > 0 ? l.c_in : prev_c;
      continue;
    }
    if (l.c_in <= 0 || l.c_out <= 0)
      throw std::invalid_argument("bad channel counts at layer " + l.name);
    if (prev_c >= 0 && l.c_in != prev_c)
      throw std::invalid_argument("channel mismatch at layer " + l.name);
    if (l.kind == LayerKind::fd_branch_group) {
      if (!l.decomposition || l.decomposition->branches.empty())
        throw std::invalid_argument("branch group without branches: " + l.name);
      int covered = 0;
      for (const auto& b : l.decomposition->branches) {
        if (b.out_lo != covered) throw std::invalid_argument("branch ranges must tile output channels");
        if (b.out_hi <= b.out_lo) throw std::invalid_argument("empty branch range");
        covered = b.out_hi;
      }
      if (covered != l.c_out)
        throw std::invalid_argument("branch ranges must tile output channels");
    }
    prev_c = l.c_out;
  }
}

namespace detail {

inline ConvParams conv_params_for(const ModelGraph& g, const LayerSpec& l) {
  ConvParams p;
  p.c_out = l.c_out;
  p.c_in = l.c_in;
  p.k_h = l.k_h;
  p.k_w = l.k_w;
  p.stride = l.stride;
  p.weight = fetch_array(g.weights, l.name + ".weight").data;
  auto it = g.weights.find(l.name + ".bias");
  if (it != g.weights.end()) p.bias = it->second.data;
  return p;
}

inline ConvParams branch_params_for(const ModelGraph& g, const LayerSpec& l, int bi) {
  const BranchSpec& b = l.decomposition->branches[bi];
  ConvParams p;
  p.c_out = b.out_hi - b.out_lo;
  p.c_in = l.c_in;
  p.k_h = b.kernel.first;
  p.k_w = b.kernel.second;
  p.stride = l.stride;
  const std::string base = l.name + ".b" + std::to_string(bi);
  p.weight = fetch_array(g.weights, base + ".weight").data;
  auto it = g.weights.find(base + ".bias");
  if (it != g.weights.end()) p.bias = it->second.data;
  return p;
}

inline GSLBlock gsl_block_for(const ModelGraph& g, const LayerSpec& l) {
  GSLBlock b;
  b.conv = conv_params_for(g, l);
  b.predictor.in_features = l.c_in;
  b.predictor.out_features = 2;
  b.predictor.weight = fetch_array(g.weights, l.name + ".pred.weight").data;
  b.predictor.bias = fetch_array(g.weights, l.name + ".pred.bias").data;
  return b;
}

}  // namespace detail

struct ForwardTrace {
  std::vector<Tensor> acts;                    // acts[0] is the input
  std::vector<std::vector<ScalePair>> scales;  // per layer; empty if not adaptive
};

inline Tensor graph_forward(const ModelGraph& g, const Tensor& x,
                            ForwardTrace* trace = nullptr) {
  validate_graph(g);
  Tensor cur = x;
  if (trace) {
    trace->acts.clear();
    trace->scales.clear();
    trace->acts.push_back(cur);
    trace->scales.resize(g.layers.size());
  }
  for (size_t li = 0; li < g.layers.size(); ++li) {
    const LayerSpec& l = g.layers[li];
    switch (l.kind) {
      case LayerKind::conv:
        cur = integer_dilated_conv2d(cur, detail::conv_params_for(g, l), l.dilation);
        break;
      case LayerKind::gsl_conv: {
        GSLForwardResult r = gsl_forward(cur, detail::gsl_block_for(g, l));
        if (trace) (*trace).scales[li] = r.scales;
        cur = std::move(r.y);
        break;
      }
      case LayerKind::fd_branch_group: {
        const int out_h = conv_out_dim(cur.h, l.stride.first);
        const int out_w = conv_out_dim(cur.w, l.stride.second);
        Tensor y(cur.n, l.c_out, out_h, out_w);
        for (size_t bi = 0; bi < l.decomposition->branches.size(); ++bi) {
          const BranchSpec& b = l.decomposition->branches[bi];
          const Tensor yb = integer_dilated_conv2d(
              cur, detail::branch_params_for(g, l, static_cast<int>(bi)), b.dilation);
          for (int in = 0; in < cur.n; ++in)
            for (int oc = b.out_lo; oc < b.out_hi; ++oc)
              std::copy(yb.plane(in, oc - b.out_lo),
                        yb.plane(in, oc - b.out_lo) + out_h * out_w, y.plane(in, oc));
        }
        cur = std::move(y);
        break;
      }
      case LayerKind::pool:
        cur = global_avg_pool(cur);
        break;
      case LayerKind::relu:
        cur = relu(cur);
        break;
      case LayerKind::linear: {
        if (cur.h != 1 || cur.w != 1)
          throw std::invalid_argument("linear layer needs 1x1 spatial input");
        LinearParams p;
        p.in_features = l.c_in;
        p.out_features = l.c_out;
        p.weight = fetch_array(g.weights, l.name + ".weight").data;
        auto it = g.weights.find(l.name + ".bias");
        if (it != g.weights.end()) p.bias = it->second.data;
        Tensor y(cur.n, l.c_out, 1, 1);
        for (int in = 0; in < cur.n; ++in) {
          const auto out = linear({cur.plane(in, 0), static_cast<size_t>(cur.c)}, p);
          std::copy(out.begin(), out.end(), y.plane(in, 0));
        }
        cur = std::move(y);
        break;
      }
    }
    if (trace) trace->acts.push_back(cur);
  }
  return cur;
}

// Reverse pass over a recorded trace. Returns the gradient with respect to
// the graph input and fills `gs` with parameter gradients keyed like the
// weight store.
inline Tensor graph_backward(const ModelGraph& g, const ForwardTrace& trace,
                             const Tensor& grad_out, GradStore& gs) {
  if (trace.acts.size() != g.layers.size() + 1)
    throw std::invalid_argument("trace does not match graph");
  gs.clear();
  for (const auto& [name, arr] : g.weights) gs[name].assign(arr.data.size(), 0.f);
  Tensor grad = grad_out;
  for (int li = static_cast<int>(g.layers.size()) - 1; li >= 0; --li) {
    const LayerSpec& l = g.layers[li];
    const Tensor& x = trace.acts[li];
    switch (l.kind) {
      case LayerKind::conv: {
        IntConvGrads ig = integer_dilated_conv2d_backward(
            x, detail::conv_params_for(g, l), l.dilation, grad, li > 0);
        gs[l.name + ".weight"] = std::move(ig.grad_weight);
        if (g.weights.count(l.name + ".bias")) gs[l.name + ".bias"] = std::move(ig.grad_bias);
        grad = std::move(ig.grad_x);
        break;
      }
      case LayerKind::gsl_conv: {
        GSLGrads gg = gsl_backward(x, detail::gsl_block_for(g, l), grad);
        gs[l.name + ".weight"] = std::move(gg.grad_conv_weight);
        if (g.weights.count(l.name + ".bias")) gs[l.name + ".bias"] = std::move(gg.grad_conv_bias);
        gs[l.name + ".pred.weight"] = std::move(gg.grad_pred_weight);
        gs[l.name + ".pred.bias"] = std::move(gg.grad_pred_bias);
        grad = std::move(gg.grad_x);
        break;
      }
      case LayerKind::fd_branch_group: {
        Tensor gx(x.n, x.c, x.h, x.w);
        const int out_h = grad.h, out_w = grad.w;
        for (size_t bi = 0; bi < l.decomposition->branches.size(); ++bi) {
          const BranchSpec& b = l.decomposition->branches[bi];
          Tensor gslice(grad.n, b.out_hi - b.out_lo, out_h, out_w);
          for (int in = 0; in < grad.n; ++in)
            for (int oc = b.out_lo; oc < b.out_hi; ++oc)
              std::copy(grad.plane(in, oc), grad.plane(in, oc) + out_h * out_w,
                        gslice.plane(in, oc - b.out_lo));
          IntConvGrads ig = integer_dilated_conv2d_backward(
              x, detail::branch_params_for(g, l, static_cast<int>(bi)), b.dilation,
              gslice, li > 0);
          const std::string base = l.name + ".b" + std::to_string(bi);
          gs[base + ".weight"] = std::move(ig.grad_weight);
          if (g.weights.count(base + ".bias")) gs[base + ".bias"] = std::move(ig.grad_bias);
          if (li > 0)
            for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += ig.grad_x.data[i];
        }
        grad = std::move(gx);
        break;
      }
      case LayerKind::pool:
        grad = global_avg_pool_backward(x, grad);
        break;
      case LayerKind::relu:
        grad = relu_backward(x, grad);
        break;
      case LayerKind::linear: {
        LinearParams p;
        p.in_features = l.c_in;
        p.out_features = l.c_out;
        p.weight = fetch_array(g.weights, l.name + ".weight").data;
        const bool has_bias = g.weights.count(l.name + ".bias") != 0;
        std::vector<float>& gw = gs[l.name + ".weight"];
        Tensor gx(x.n, x.c, 1, 1);
        std::vector<double> gb(has_bias ? l.c_out : 0, 0.0);
        for (int in = 0; in < x.n; ++in) {
          const float* xv = x.plane(in, 0);
          const float* gv = grad.plane(in, 0);
          float* gxv = gx.plane(in, 0);
          for (int o = 0; o < l.c_out; ++o) {
            const float go = gv[o];
            const float* wrow = p.weight.data() + static_cast<size_t>(o) * l.c_in;
            float* gwrow = gw.data() + static_cast<size_t>(o) * l.c_in;
            for (int i = 0; i < l.c_in; ++i) {
              gwrow[i] += go * xv[i];
              gxv[i] += go * wrow[i];
            }
            if (has_bias) gb[o] += go;
          }
        }
        if (has_bias) {
          std::vector<float>& gbf = gs[l.name + ".bias"];
          for (int o = 0; o < l.c_out; ++o) gbf[o] = static_cast<float>(gb[o]);
        }
        grad = std::move(gx);
        break;
      }
    }
  }
  return grad;
}

// He-normal weights for conv and linear layers, zero biases, and a zeroed
// scale head so adaptive layers start out behaving densely.
inline void init_weights(ModelGraph& g, uint64_t seed) {
  validate_graph(g);
  Rng rng(seed);
  auto he_fill = [&](NamedArray& a, int fan_in) {
    const float stddev = std::sqrt(2.f / static_cast<float>(fan_in));
    for (auto& v : a.data) v = stddev * static_cast<float>(rng.normal());
  };
  g.weights.clear();
  for (const auto& l : g.layers) {
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::gsl_conv: {
        NamedArray w{{l.c_out, l.c_in, l.k_h, l.k_w},
                     std::vector<float>(static_cast<size_t>(l.c_out) * l.c_in * l.k_h * l.k_w)};
        he_fill(w, l.c_in * l.k_h * l.k_w);
        g.weights[l.name + ".weight"] = std::move(w);
        g.weights[l.name + ".bias"] = {{l.c_out}, std::vector<float>(l.c_out, 0.f)};
        if (l.kind == LayerKind::gsl_conv) {
          g.weights[l.name + ".pred.weight"] = {{2, l.c_in},
                                                std::vector<float>(2 * l.c_in, 0.f)};
          g.weights[l.name + ".pred.bias"] = {{2}, std::vector<float>(2, 0.f)};
        }
        break;
      }
      case LayerKind::fd_branch_group: {
        for (size_t bi = 0; bi < l.decomposition->branches.size(); ++bi) {
          const BranchSpec& b = l.decomposition->branches[bi];
          const int nb = b.out_hi - b.out_lo;
          NamedArray w{{nb, l.c_in, b.kernel.first, b.kernel.second},
                       std::vector<float>(static_cast<size_t>(nb) * l.c_in *
                                          b.kernel.first * b.kernel.second)};
          he_fill(w, l.c_in * b.kernel.first * b.kernel.second);
          const std::string base = l.name + ".b" + std::to_string(bi);
          g.weights[base + ".weight"] = std::move(w);
          g.weights[base + ".bias"] = {{nb}, std::vector<float>(nb, 0.f)};
        }
        break;
      }
      case LayerKind::linear: {
        NamedArray w{{l.c_out, l.c_in},
                     std::vector<float>(static_cast<size_t>(l.c_out) * l.c_in)};
        he_fill(w, l.c_in);
        g.weights[l.name + ".weight"] = std::move(w);
        g.weights[l.name + ".bias"] = {{l.c_out}, std::vector<float>(l.c_out, 0.f)};
        break;
      }
      case LayerKind::pool:
      case LayerKind::relu:
        break;
    }
  }
}

inline size_t count_params(const ModelGraph& g) {
  size_t total = 0;
  for (const auto& [name, arr] : g.weights) total += arr.data.size();
  return total;
}

// The stack used by the synthetic-pattern experiments: three 3x3 conv stages,
// then pooled features into a classifier head.
inline ModelGraph make_toy_net(int num_classes, bool adaptive,
                               const std::vector<int>& channels = {16, 32, 32}) {
  ModelGraph g;
  const LayerKind conv_kind = adaptive ? LayerKind::gsl_conv : LayerKind::conv;
  int c_prev = 1;
  for (size_t i = 0; i < channels.size(); ++i) {
    LayerSpec conv;
    conv.name = "conv" + std::to_string(i + 1);
    conv.kind = conv_kind;
    conv.c_in = c_prev;
    conv.c_out = channels[i];
    conv.k_h = conv.k_w = 3;
    g.layers.push_back(conv);
    LayerSpec act;
    act.name = "relu" + std::to_string(i + 1);
    act.kind = LayerKind::relu;
    act.c_in = act.c_out = channels[i];
    g.layers.push_back(act);
    c_prev = channels[i];
  }
  LayerSpec pool;
  pool.name = "gap";
  pool.kind = LayerKind::pool;
  pool.c_in = pool.c_out = c_prev;
  g.layers.push_back(pool);
  LayerSpec fc;
  fc.name = "fc";
  fc.kind = LayerKind::linear;
  fc.c_in = c_prev;
  fc.c_out = num_classes;
  g.layers.push_back(fc);
  return g;
}

}  // namespace fracdil
