#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "fracdil/rng.hpp"

namespace fracdil {

// Dense 4-D feature map in NCHW layout, row-major, float32 storage.
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, float fill = 0.f)
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<size_t>(n_) * c_ * h_ * w_, fill) {
    if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
      throw std::invalid_argument("negative tensor dimension");
  }

  size_t size() const { return data.size(); }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  size_t idx(int in, int ic, int ih, int iw) const {
    return ((static_cast<size_t>(in) * c + ic) * h + ih) * w + iw;
  }

  float& at(int in, int ic, int ih, int iw) { return data[idx(in, ic, ih, iw)]; }
  float at(int in, int ic, int ih, int iw) const { return data[idx(in, ic, ih, iw)]; }

  float* plane(int in, int ic) {
    return data.data() + (static_cast<size_t>(in) * c + ic) * h * w;
  }
  const float* plane(int in, int ic) const {
    return data.data() + (static_cast<size_t>(in) * c + ic) * h * w;
  }

  // Copy of sample `in` as a batch-of-one tensor.
  Tensor sample(int in) const {
    Tensor out(1, c, h, w);
    const size_t len = static_cast<size_t>(c) * h * w;
    std::copy(data.begin() + in * len, data.begin() + (in + 1) * len, out.data.begin());
    return out;
  }

  void fill_uniform(Rng& rng, float lo, float hi) {
    for (auto& v : data) v = lo + static_cast<float>(rng.uniform()) * (hi - lo);
  }
  void fill_normal(Rng& rng, float mean = 0.f, float stddev = 1.f) {
    for (auto& v : data) v = mean + stddev * static_cast<float>(rng.normal());
  }
};

// Mean over the spatial extent of every channel. Output is (N, C, 1, 1).
inline Tensor global_avg_pool(const Tensor& x) {
  if (x.h <= 0 || x.w <= 0) throw std::invalid_argument("empty pooling region");
  Tensor out(x.n, x.c, 1, 1);
  const double inv = 1.0 / (static_cast<double>(x.h) * x.w);
  for (int in = 0; in < x.n; ++in) {
    for (int ic = 0; ic < x.c; ++ic) {
      const float* p = x.plane(in, ic);
      double acc = 0.0;
      for (int i = 0; i < x.h * x.w; ++i) acc += p[i];
      out.at(in, ic, 0, 0) = static_cast<float>(acc * inv);
    }
  }
  return out;
}

// Backward of global_avg_pool: spreads each channel gradient uniformly.
inline Tensor global_avg_pool_backward(const Tensor& x, const Tensor& grad_out) {
  Tensor grad_x(x.n, x.c, x.h, x.w);
  const float inv = 1.f / (static_cast<float>(x.h) * x.w);
  for (int in = 0; in < x.n; ++in)
    for (int ic = 0; ic < x.c; ++ic) {
      const float g = grad_out.at(in, ic, 0, 0) * inv;
      float* p = grad_x.plane(in, ic);
      for (int i = 0; i < x.h * x.w; ++i) p[i] = g;
    }
  return grad_x;
}

// Fully connected layer parameters. `weight` is (out_features, in_features)
// row-major.
struct LinearParams {
  int in_features = 0, out_features = 0;
  std::vector<float> weight;
  std::vector<float> bias;

  void validate() const {
    if (in_features <= 0 || out_features <= 0)
      throw std::invalid_argument("bad linear dimensions");
    if (weight.size() != static_cast<size_t>(in_features) * out_features)
      throw std::invalid_argument("linear weight size mismatch");
    if (!bias.empty() && bias.size() != static_cast<size_t>(out_features))
      throw std::invalid_argument("linear bias size mismatch");
  }
};

inline std::vector<float> linear(std::span<const float> x, const LinearParams& p) {
  p.validate();
  if (x.size() != static_cast<size_t>(p.in_features))
    throw std::invalid_argument("linear input size mismatch");
  std::vector<float> out(p.out_features);
  for (int o = 0; o < p.out_features; ++o) {
    double acc = p.bias.empty() ? 0.0 : p.bias[o];
    const float* wrow = p.weight.data() + static_cast<size_t>(o) * p.in_features;
    for (int i = 0; i < p.in_features; ++i) acc += static_cast<double>(wrow[i]) * x[i];
    out[o] = static_cast<float>(acc);
  }
  return out;
}

// One SGD update with classic momentum and decoupled-from-nothing L2 weight
// decay folded into the gradient:
//   v <- momentum * v + g + weight_decay * p
//   p <- p - lr * v
inline void sgd_step(std::span<float> params, std::span<const float> grads,
                     std::span<float> velocity, double lr, double momentum,
                     double weight_decay) {
  if (params.size() != grads.size() || params.size() != velocity.size())
    throw std::invalid_argument("sgd buffer size mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + weight_decay * params[i];
    const double v = momentum * velocity[i] + g;
    velocity[i] = static_cast<float>(v);
    params[i] = static_cast<float>(params[i] - lr * v);
  }
}

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data) v = v > 0.f ? v : 0.f;
  return y;
}

inline Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  Tensor g = grad_out;
  for (size_t i = 0; i < g.data.size(); ++i)
    if (x.data[i] <= 0.f) g.data[i] = 0.f;
  return g;
}

}  // namespace fracdil
