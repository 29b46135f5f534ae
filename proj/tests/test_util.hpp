#pragma once

// Shared test oracles. The reference convolution below is written straight
// from the sampling definition (tent-weighted neighbor sum in double
// precision) on purpose: it shares no code with the production path.

#include <cmath>
#include <functional>
#include <vector>

#include "fracdil/conv.hpp"
#include "fracdil/rng.hpp"
#include "fracdil/tensor.hpp"

namespace testutil {

inline double tent(double a, double b) { return std::max(0.0, 1.0 - std::abs(a - b)); }

inline double ref_sample(const fracdil::Tensor& x, int n, int c, double y, double xc) {
  double acc = 0.0;
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(xc));
  for (int p = y0; p <= y0 + 1; ++p)
    for (int q = x0; q <= x0 + 1; ++q) {
      if (p < 0 || p >= x.h || q < 0 || q >= x.w) continue;
      acc += tent(p, y) * tent(q, xc) * x.at(n, c, p, q);
    }
  return acc;
}

inline fracdil::Tensor ref_frac_conv2d(const fracdil::Tensor& x,
                                       const fracdil::ConvParams& p,
                                       const fracdil::ScalePair& s) {
  const double dh = std::clamp(s.h, fracdil::kScaleMin, fracdil::kScaleMax);
  const double dw = std::clamp(s.w, fracdil::kScaleMin, fracdil::kScaleMax);
  const int out_h = fracdil::conv_out_dim(x.h, p.stride.first);
  const int out_w = fracdil::conv_out_dim(x.w, p.stride.second);
  const int ch = (p.k_h - 1) / 2, cw = (p.k_w - 1) / 2;
  fracdil::Tensor y(x.n, p.c_out, out_h, out_w);
  for (int n = 0; n < x.n; ++n)
    for (int co = 0; co < p.c_out; ++co)
      for (int oh = 0; oh < out_h; ++oh)
        for (int ow = 0; ow < out_w; ++ow) {
          double acc = p.bias.empty() ? 0.0 : p.bias[co];
          for (int ci = 0; ci < p.c_in; ++ci)
            for (int ki = 0; ki < p.k_h; ++ki)
              for (int kj = 0; kj < p.k_w; ++kj) {
                const double w =
                    p.weight[((static_cast<size_t>(co) * p.c_in + ci) * p.k_h + ki) *
                                 p.k_w + kj];
                acc += w * ref_sample(x, n, ci,
                                      oh * p.stride.first + (ki - ch) * dh,
                                      ow * p.stride.second + (kj - cw) * dw);
              }
          y.at(n, co, oh, ow) = static_cast<float>(acc);
        }
  return y;
}

inline fracdil::Tensor random_tensor(int n, int c, int h, int w, uint64_t seed,
                                     float lo = -1.f, float hi = 1.f) {
  fracdil::Tensor t(n, c, h, w);
  fracdil::Rng rng(seed);
  t.fill_uniform(rng, lo, hi);
  return t;
}

inline fracdil::ConvParams random_conv(int c_out, int c_in, int k_h, int k_w,
                                       uint64_t seed, bool bias = true,
                                       std::pair<int, int> stride = {1, 1}) {
  fracdil::ConvParams p;
  p.c_out = c_out;
  p.c_in = c_in;
  p.k_h = k_h;
  p.k_w = k_w;
  p.stride = stride;
  fracdil::Rng rng(seed);
  p.weight.resize(static_cast<size_t>(c_out) * c_in * k_h * k_w);
  for (auto& v : p.weight) v = static_cast<float>(rng.uniform() * 2.0 - 1.0);
  if (bias) {
    p.bias.resize(c_out);
    for (auto& v : p.bias) v = static_cast<float>(rng.uniform() * 0.5 - 0.25);
  }
  return p;
}

inline double max_abs_diff(const fracdil::Tensor& a, const fracdil::Tensor& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
  return m;
}

// Projection loss: dot(output, R) with fixed +/-1 entries, accumulated in
// double so finite differences are not drowned by reduction noise.
struct ProjectionLoss {
  std::vector<double> r;

  explicit ProjectionLoss(size_t size, uint64_t seed) : r(size) {
    fracdil::Rng rng(seed);
    for (auto& v : r) v = rng.uniform() < 0.5 ? -1.0 : 1.0;
  }

  double operator()(const fracdil::Tensor& y) const {
    double acc = 0.0;
    for (size_t i = 0; i < y.data.size(); ++i) acc += r[i] * y.data[i];
    return acc;
  }

  // Gradient of the loss with respect to the output.
  fracdil::Tensor grad(int n, int c, int h, int w) const {
    fracdil::Tensor g(n, c, h, w);
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] = static_cast<float>(r[i]);
    return g;
  }
};

inline double central_diff(const std::function<double()>& loss, float& param,
                           double step = 1e-3) {
  const float saved = param;
  param = static_cast<float>(saved + step);
  const double fp = loss();
  param = static_cast<float>(saved - step);
  const double fm = loss();
  param = saved;
  return (fp - fm) / (2.0 * step);
}

inline double central_diff_d(const std::function<double()>& loss, double& param,
                             double step = 1e-3) {
  const double saved = param;
  param = saved + step;
  const double fp = loss();
  param = saved - step;
  const double fm = loss();
  param = saved;
  return (fp - fm) / (2.0 * step);
}

// max_i |a_i - n_i| / max(1, |a_i|, |n_i|); 1e-3 passes for gradients of
// typical magnitude while absolute noise on near-zero entries stays harmless.
inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

}  // namespace testutil
