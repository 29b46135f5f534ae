#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fracdil/conv.hpp"
#include "fracdil/tensor.hpp"

namespace fracdil {

// Convolution block whose sampling rate is chosen per input: a global average
// pool feeds a tiny linear head whose two outputs, exponentiated, become the
// (h, w) scale pair for that sample. Zero-initialized head means exp(0) = 1,
// so a fresh block behaves exactly like a dense convolution.
struct GSLBlock {
  ConvParams conv;
  LinearParams predictor;  // out_features must be 2, in_features == conv.c_in

  void validate() const {
    conv.validate();
    predictor.validate();
    if (predictor.out_features != 2)
      throw std::invalid_argument("scale predictor must have 2 outputs");
    if (predictor.in_features != conv.c_in)
      throw std::invalid_argument("scale predictor input width mismatch");
  }
};

inline ScalePair predict_scale(std::span<const float> pooled, const LinearParams& p) {
  const std::vector<float> z = linear(pooled, p);
  return {std::exp(static_cast<double>(z[0])), std::exp(static_cast<double>(z[1]))};
}

struct GSLForwardResult {
  Tensor y;
  std::vector<ScalePair> scales;  // one pair per batch sample
};

inline GSLForwardResult gsl_forward(const Tensor& x, const GSLBlock& b) {
  b.validate();
  if (x.c != b.conv.c_in) throw std::invalid_argument("conv input channel mismatch");
  const Tensor pooled = global_avg_pool(x);
  GSLForwardResult r;
  r.scales.resize(x.n);
  const int out_h = conv_out_dim(x.h, b.conv.stride.first);
  const int out_w = conv_out_dim(x.w, b.conv.stride.second);
  r.y = Tensor(x.n, b.conv.c_out, out_h, out_w);
  for (int in = 0; in < x.n; ++in) {
    const std::span<const float> pv{pooled.plane(in, 0), static_cast<size_t>(x.c)};
    r.scales[in] = predict_scale(pv, b.predictor);
    const Tensor ys = frac_conv2d(x.sample(in), b.conv, r.scales[in]);
    std::copy(ys.data.begin(), ys.data.end(),
              r.y.data.begin() + static_cast<size_t>(in) * b.conv.c_out * out_h * out_w);
  }
  return r;
}

struct GSLGrads {
  Tensor grad_x;
  std::vector<float> grad_conv_weight;
  std::vector<float> grad_conv_bias;
  std::vector<float> grad_pred_weight;
  std::vector<float> grad_pred_bias;
};

// Chains the scale gradient through exp and the predictor, and adds the
// pooled-path contribution to the input gradient.
inline GSLGrads gsl_backward(const Tensor& x, const GSLBlock& b, const Tensor& grad_y) {
  b.validate();
  const Tensor pooled = global_avg_pool(x);
  GSLGrads g;
  g.grad_x = Tensor(x.n, x.c, x.h, x.w);
  g.grad_conv_weight.assign(b.conv.weight.size(), 0.f);
  g.grad_conv_bias.assign(b.conv.c_out, 0.f);
  g.grad_pred_weight.assign(b.predictor.weight.size(), 0.f);
  g.grad_pred_bias.assign(2, 0.f);
  const float inv_hw = 1.f / (static_cast<float>(x.h) * x.w);
  for (int in = 0; in < x.n; ++in) {
    const std::span<const float> pv{pooled.plane(in, 0), static_cast<size_t>(x.c)};
    const ScalePair s = predict_scale(pv, b.predictor);
    const Tensor xs = x.sample(in);
    const Tensor gys = grad_y.sample(in);
    FracConvGrads fg = frac_conv2d_backward(xs, b.conv, s, gys);
    for (size_t i = 0; i < g.grad_conv_weight.size(); ++i)
      g.grad_conv_weight[i] += fg.grad_weight[i];
    if (!b.conv.bias.empty())
      for (int oc = 0; oc < b.conv.c_out; ++oc) g.grad_conv_bias[oc] += fg.grad_bias[oc];

    // d scale / d head output is the scale itself (exp), then the head is
    // linear in the pooled vector.
    const double dz0 = fg.grad_scale_h * s.h;
    const double dz1 = fg.grad_scale_w * s.w;
    g.grad_pred_bias[0] += static_cast<float>(dz0);
    g.grad_pred_bias[1] += static_cast<float>(dz1);
    float* gx = g.grad_x.plane(in, 0);
    const size_t plane_sz = static_cast<size_t>(x.h) * x.w;
    for (int ic = 0; ic < x.c; ++ic) {
      g.grad_pred_weight[ic] += static_cast<float>(dz0 * pv[ic]);
      g.grad_pred_weight[b.predictor.in_features + ic] += static_cast<float>(dz1 * pv[ic]);
      const double dpool = dz0 * b.predictor.weight[ic] +
                           dz1 * b.predictor.weight[b.predictor.in_features + ic];
      const float add = static_cast<float>(dpool) * inv_hw;
      float* gplane = gx + static_cast<size_t>(ic) * plane_sz;
      const float* fplane = fg.grad_x.plane(0, ic);
      for (size_t i = 0; i < plane_sz; ++i) gplane[i] = fplane[i] + add;
    }
  }
  return g;
}

// Per-layer summary of the scales a trained block predicts over a dataset.
struct ScaleStats {
  std::string layer;
  double mean_h = 0.0, std_h = 0.0;
  double mean_w = 0.0, std_w = 0.0;
  int n_samples = 0;
};

inline ScaleStats summarize_scales(const std::string& layer,
                                   const std::vector<ScalePair>& scales) {
  if (scales.size() < 2)
    throw std::invalid_argument("scale statistics need at least 2 samples");
  ScaleStats st;
  st.layer = layer;
  st.n_samples = static_cast<int>(scales.size());
  double sh = 0, sw = 0;
  for (const auto& s : scales) {
    sh += s.h;
    sw += s.w;
  }
  st.mean_h = sh / st.n_samples;
  st.mean_w = sw / st.n_samples;
  double vh = 0, vw = 0;
  for (const auto& s : scales) {
    vh += (s.h - st.mean_h) * (s.h - st.mean_h);
    vw += (s.w - st.mean_w) * (s.w - st.mean_w);
  }
  st.std_h = std::sqrt(vh / st.n_samples);
  st.std_w = std::sqrt(vw / st.n_samples);
  return st;
}

// Replaces per-sample prediction with the dataset mean, the first step of
// turning an adaptive network into a static one.
inline std::map<std::string, ScalePair> freeze_scales(const std::vector<ScaleStats>& stats) {
  std::map<std::string, ScalePair> frozen;
  for (const auto& st : stats) {
    if (st.n_samples < 2)
      throw std::invalid_argument("scale statistics need at least 2 samples");
    frozen[st.layer] = ScalePair{st.mean_h, st.mean_w};
  }
  return frozen;
}

}  // namespace fracdil
