#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fracdil/tensor.hpp"

namespace fracdil {

// Sampling rate of a convolution in each spatial direction. A value of 1
// reproduces a dense kernel; integers reproduce ordinary dilation; anything in
// between lands between grid points and is resolved by bilinear interpolation.
struct ScalePair {
  double h = 1.0;
  double w = 1.0;
};

inline constexpr double kScaleMin = 0.1;
inline constexpr double kScaleMax = 16.0;

inline ScalePair clamp_scale(const ScalePair& s) {
  if (!(s.h > 0.0) || !(s.w > 0.0) || !std::isfinite(s.h) || !std::isfinite(s.w))
    throw std::invalid_argument("invalid scale");
  return {std::clamp(s.h, kScaleMin, kScaleMax), std::clamp(s.w, kScaleMin, kScaleMax)};
}

struct ConvParams {
  int c_out = 0, c_in = 0, k_h = 1, k_w = 1;
  std::pair<int, int> stride{1, 1};
  std::vector<float> weight;  // (c_out, c_in, k_h, k_w)
  std::vector<float> bias;    // (c_out) or empty

  void validate() const {
    if (c_out <= 0 || c_in <= 0) throw std::invalid_argument("bad conv channels");
    if (k_h <= 0 || k_w <= 0 || k_h % 2 == 0 || k_w % 2 == 0)
      throw std::invalid_argument("kernel sides must be odd");
    if (stride.first <= 0 || stride.second <= 0)
      throw std::invalid_argument("bad stride");
    if (weight.size() != static_cast<size_t>(c_out) * c_in * k_h * k_w)
      throw std::invalid_argument("conv weight size mismatch");
    if (!bias.empty() && bias.size() != static_cast<size_t>(c_out))
      throw std::invalid_argument("conv bias size mismatch");
  }
};

// Output side length for "same" padding with the given stride.
inline int conv_out_dim(int in, int stride) { return (in + stride - 1) / stride; }

// Reads map(h, w) with bilinear weights; out-of-range neighbors contribute 0.
// The interpolation support is floor(h)/floor(h)+1 in each direction, which
// at integer coordinates leaves a single unit-weight neighbor.
inline double bilinear_sample(const float* map, int height, int width, double h,
                              double w) {
  const int h0 = static_cast<int>(std::floor(h));
  const int w0 = static_cast<int>(std::floor(w));
  const double fh = h - h0, fw = w - w0;
  auto val = [&](int r, int col) -> double {
    if (r < 0 || r >= height || col < 0 || col >= width) return 0.0;
    return map[static_cast<size_t>(r) * width + col];
  };
  return (1.0 - fh) * ((1.0 - fw) * val(h0, w0) + fw * val(h0, w0 + 1)) +
         fh * ((1.0 - fw) * val(h0 + 1, w0) + fw * val(h0 + 1, w0 + 1));
}

namespace detail {

// C (M x N) += A (M x K) * B (K x N). Switches to per-element double
// accumulation when a single output element sums more than 1024 products.
inline void gemm_acc(int M, int K, int N, const float* A, const float* B, float* C) {
  if (K > 1024) {
    for (int m = 0; m < M; ++m)
      for (int n = 0; n < N; ++n) {
        double acc = 0.0;
        const float* arow = A + static_cast<size_t>(m) * K;
        for (int k = 0; k < K; ++k)
          acc += static_cast<double>(arow[k]) * B[static_cast<size_t>(k) * N + n];
        C[static_cast<size_t>(m) * N + n] += static_cast<float>(acc);
      }
    return;
  }
  for (int m = 0; m < M; ++m) {
    float* crow = C + static_cast<size_t>(m) * N;
    const float* arow = A + static_cast<size_t>(m) * K;
    for (int k = 0; k < K; ++k) {
      const float a = arow[k];
      const float* brow = B + static_cast<size_t>(k) * N;
      for (int n = 0; n < N; ++n) crow[n] += a * brow[n];
    }
  }
}

// C (K x N) += A^T (M x K) * B (M x N).
inline void gemm_tn_acc(int M, int K, int N, const float* A, const float* B, float* C) {
  for (int m = 0; m < M; ++m) {
    const float* arow = A + static_cast<size_t>(m) * K;
    const float* brow = B + static_cast<size_t>(m) * N;
    for (int k = 0; k < K; ++k) {
      const float a = arow[k];
      float* crow = C + static_cast<size_t>(k) * N;
      for (int n = 0; n < N; ++n) crow[n] += a * brow[n];
    }
  }
}

// C (M x K) += A (M x N) * B^T (K x N), accumulating each dot product in
// double since N is a full spatial extent and routinely exceeds 1024.
inline void gemm_nt_acc(int M, int K, int N, const float* A, const float* B, float* C) {
  for (int m = 0; m < M; ++m) {
    const float* arow = A + static_cast<size_t>(m) * N;
    for (int k = 0; k < K; ++k) {
      const float* brow = B + static_cast<size_t>(k) * N;
      double acc = 0.0;
      for (int n = 0; n < N; ++n) acc += static_cast<double>(arow[n]) * brow[n];
      C[static_cast<size_t>(m) * K + k] += static_cast<float>(acc);
    }
  }
}

// Gathers one input sample into a (c_in*k_h*k_w) x (out_h*out_w) patch matrix
// using fractionally spaced taps. Tap (ki, kj) of output position (oh, ow)
// reads coordinate (oh*stride_h + (ki - ch)*d_h, ow*stride_w + (kj - cw)*d_w)
// with bilinear weights and zero outside the map.
//
// For a fixed tap the fractional parts of both coordinates are constant over
// the whole output plane, so each row of the patch matrix is a weighted sum of
// four shifted input rows.
inline void frac_im2col(const float* x, int c_in, int height, int width,
                        const ConvParams& p, const ScalePair& s, int out_h,
                        int out_w, float* cols) {
  const int ch = (p.k_h - 1) / 2, cw = (p.k_w - 1) / 2;
  const int sh = p.stride.first, sw = p.stride.second;
  for (int ic = 0; ic < c_in; ++ic) {
    const float* plane = x + static_cast<size_t>(ic) * height * width;
    for (int ki = 0; ki < p.k_h; ++ki) {
      const double base_h = (ki - ch) * s.h;
      for (int kj = 0; kj < p.k_w; ++kj) {
        const double base_w = (kj - cw) * s.w;
        const int mw = static_cast<int>(std::floor(base_w));
        const float fw = static_cast<float>(base_w - mw);
        float* dst = cols + (static_cast<size_t>((ic * p.k_h + ki) * p.k_w + kj)) *
                                out_h * out_w;
        for (int oh = 0; oh < out_h; ++oh, dst += out_w) {
          const double hc = oh * sh + base_h;
          const int h0 = static_cast<int>(std::floor(hc));
          const float fh = static_cast<float>(hc - h0);
          const float* r0 = (h0 >= 0 && h0 < height) ? plane + static_cast<size_t>(h0) * width : nullptr;
          const float* r1 = (h0 + 1 >= 0 && h0 + 1 < height) ? plane + static_cast<size_t>(h0 + 1) * width : nullptr;
          if (!r0 && !r1) {
            std::fill(dst, dst + out_w, 0.f);
            continue;
          }
          const float wy0 = 1.f - fh, wy1 = fh;
          const float wx0 = 1.f - fw, wx1 = fw;
          for (int ow = 0; ow < out_w; ++ow) {
            const int x0 = ow * sw + mw;
            const bool in0 = x0 >= 0 && x0 < width;
            const bool in1 = x0 + 1 >= 0 && x0 + 1 < width;
            float v0 = 0.f, v1 = 0.f;
            if (r0) v0 = wx0 * (in0 ? r0[x0] : 0.f) + wx1 * (in1 ? r0[x0 + 1] : 0.f);
            if (r1) v1 = wx0 * (in0 ? r1[x0] : 0.f) + wx1 * (in1 ? r1[x0 + 1] : 0.f);
            dst[ow] = wy0 * v0 + wy1 * v1;
          }
        }
      }
    }
  }
}

// Integer-dilation gather; equivalent to frac_im2col at integral scales but
// touches one input element per tap.
inline void int_im2col(const float* x, int c_in, int height, int width,
                       const ConvParams& p, int dil_h, int dil_w, int out_h,
                       int out_w, float* cols) {
  const int ch = (p.k_h - 1) / 2, cw = (p.k_w - 1) / 2;
  const int sh = p.stride.first, sw = p.stride.second;
  for (int ic = 0; ic < c_in; ++ic) {
    const float* plane = x + static_cast<size_t>(ic) * height * width;
    for (int ki = 0; ki < p.k_h; ++ki) {
      const int off_h = (ki - ch) * dil_h;
      for (int kj = 0; kj < p.k_w; ++kj) {
        const int off_w = (kj - cw) * dil_w;
        float* dst = cols + (static_cast<size_t>((ic * p.k_h + ki) * p.k_w + kj)) *
                                out_h * out_w;
        for (int oh = 0; oh < out_h; ++oh, dst += out_w) {
          const int ih = oh * sh + off_h;
          if (ih < 0 || ih >= height) {
            std::fill(dst, dst + out_w, 0.f);
            continue;
          }
          const float* row = plane + static_cast<size_t>(ih) * width;
          if (sw == 1) {
            const int lo = std::clamp(-off_w, 0, out_w);
            const int hi = std::clamp(width - off_w, lo, out_w);
            std::fill(dst, dst + lo, 0.f);
            for (int ow = lo; ow < hi; ++ow) dst[ow] = row[ow + off_w];
            std::fill(dst + hi, dst + out_w, 0.f);
          } else {
            for (int ow = 0; ow < out_w; ++ow) {
              const int iw = ow * sw + off_w;
              dst[ow] = (iw >= 0 && iw < width) ? row[iw] : 0.f;
            }
          }
        }
      }
    }
  }
}

inline void add_bias(float* y, const std::vector<float>& bias, int c_out, int plane_sz) {
  if (bias.empty()) return;
  for (int oc = 0; oc < c_out; ++oc) {
    float* p = y + static_cast<size_t>(oc) * plane_sz;
    for (int i = 0; i < plane_sz; ++i) p[i] += bias[oc];
  }
}

}  // namespace detail

// Convolution whose taps sit at fractional offsets (ki - ch)*d_h,
// (kj - cw)*d_w from each output position, read bilinearly with zero padding.
// Output spatial size is ceil(in / stride).
inline Tensor frac_conv2d(const Tensor& x, const ConvParams& p, const ScalePair& s) {
  p.validate();
  if (x.c != p.c_in) throw std::invalid_argument("conv input channel mismatch");
  const ScalePair sc = clamp_scale(s);
  const int out_h = conv_out_dim(x.h, p.stride.first);
  const int out_w = conv_out_dim(x.w, p.stride.second);
  const int K = p.c_in * p.k_h * p.k_w;
  const int N = out_h * out_w;
  Tensor y(x.n, p.c_out, out_h, out_w);
  std::vector<float> cols(static_cast<size_t>(K) * N);
  for (int in = 0; in < x.n; ++in) {
    detail::frac_im2col(x.plane(in, 0), x.c, x.h, x.w, p, sc, out_h, out_w, cols.data());
    detail::gemm_acc(p.c_out, K, N, p.weight.data(), cols.data(), y.plane(in, 0));
    detail::add_bias(y.plane(in, 0), p.bias, p.c_out, N);
  }
  return y;
}

// Ordinary dilated convolution with zero "same" padding. Matches frac_conv2d
// exactly when the scale is the same integer pair.
inline Tensor integer_dilated_conv2d(const Tensor& x, const ConvParams& p,
                                     std::pair<int, int> dilation) {
  p.validate();
  if (x.c != p.c_in) throw std::invalid_argument("conv input channel mismatch");
  if (dilation.first < 1 || dilation.second < 1)
    throw std::invalid_argument("dilation must be >= 1");
  const int out_h = conv_out_dim(x.h, p.stride.first);
  const int out_w = conv_out_dim(x.w, p.stride.second);
  const int K = p.c_in * p.k_h * p.k_w;
  const int N = out_h * out_w;
  Tensor y(x.n, p.c_out, out_h, out_w);
  std::vector<float> cols(static_cast<size_t>(K) * N);
  for (int in = 0; in < x.n; ++in) {
    detail::int_im2col(x.plane(in, 0), x.c, x.h, x.w, p, dilation.first,
                       dilation.second, out_h, out_w, cols.data());
    detail::gemm_acc(p.c_out, K, N, p.weight.data(), cols.data(), y.plane(in, 0));
    detail::add_bias(y.plane(in, 0), p.bias, p.c_out, N);
  }
  return y;
}

struct FracConvGrads {
  Tensor grad_x;
  std::vector<float> grad_weight;
  std::vector<float> grad_bias;
  // Gradients of the two sampling rates. At bilinear kinks (integral scales)
  // these are one-sided derivatives from the right.
  double grad_scale_h = 0.0;
  double grad_scale_w = 0.0;
};

// Reverse-mode gradients of frac_conv2d for all inputs. Scale gradients are
// accumulated in double; parameter gradients sum over the whole batch.
inline FracConvGrads frac_conv2d_backward(const Tensor& x, const ConvParams& p,
                                          const ScalePair& s, const Tensor& grad_out,
                                          bool need_grad_x = true) {
  p.validate();
  if (x.c != p.c_in) throw std::invalid_argument("conv input channel mismatch");
  const ScalePair sc = clamp_scale(s);
  const int out_h = conv_out_dim(x.h, p.stride.first);
  const int out_w = conv_out_dim(x.w, p.stride.second);
  if (grad_out.n != x.n || grad_out.c != p.c_out || grad_out.h != out_h ||
      grad_out.w != out_w)
    throw std::invalid_argument("grad_out shape mismatch");

  const int K = p.c_in * p.k_h * p.k_w;
  const int N = out_h * out_w;
  const int ch = (p.k_h - 1) / 2, cw = (p.k_w - 1) / 2;
  const int sh = p.stride.first, sw = p.stride.second;

  FracConvGrads g;
  g.grad_x = Tensor(x.n, x.c, x.h, x.w);
  g.grad_weight.assign(p.weight.size(), 0.f);
  g.grad_bias.assign(p.c_out, 0.f);

  std::vector<float> cols(static_cast<size_t>(K) * N);
  std::vector<float> grad_cols(static_cast<size_t>(K) * N);
  double acc_dh = 0.0, acc_dw = 0.0;

  for (int in = 0; in < x.n; ++in) {
    // d loss / d patches.
    std::fill(grad_cols.begin(), grad_cols.end(), 0.f);
    detail::gemm_tn_acc(p.c_out, K, N, p.weight.data(), grad_out.plane(in, 0),
                        grad_cols.data());

    // d loss / d weight via the same patch matrix the forward used.
    detail::frac_im2col(x.plane(in, 0), x.c, x.h, x.w, p, sc, out_h, out_w,
                        cols.data());
    detail::gemm_nt_acc(p.c_out, K, N, grad_out.plane(in, 0), cols.data(),
                        g.grad_weight.data());

    for (int oc = 0; oc < p.c_out; ++oc) {
      const float* gp = grad_out.plane(in, oc);
      double acc = 0.0;
      for (int i = 0; i < N; ++i) acc += gp[i];
      g.grad_bias[oc] += static_cast<float>(acc);
    }

    // Scatter patch gradients back through the bilinear weights, picking up
    // the coordinate derivatives for the scale gradient on the way.
    for (int ic = 0; ic < x.c; ++ic) {
      const float* xplane = x.plane(in, ic);
      float* gxplane = need_grad_x ? g.grad_x.plane(in, ic) : nullptr;
      for (int ki = 0; ki < p.k_h; ++ki) {
        const double base_h = (ki - ch) * sc.h;
        const double tap_h = ki - ch;
        for (int kj = 0; kj < p.k_w; ++kj) {
          const double base_w = (kj - cw) * sc.w;
          const double tap_w = kj - cw;
          const int mw = static_cast<int>(std::floor(base_w));
          const double fw = base_w - mw;
          const float* gcol = grad_cols.data() +
                              (static_cast<size_t>((ic * p.k_h + ki) * p.k_w + kj)) * N;
          for (int oh = 0; oh < out_h; ++oh, gcol += out_w) {
            const double hc = oh * sh + base_h;
            const int h0 = static_cast<int>(std::floor(hc));
            const double fh = hc - h0;
            const bool rin0 = h0 >= 0 && h0 < x.h;
            const bool rin1 = h0 + 1 >= 0 && h0 + 1 < x.h;
            if (!rin0 && !rin1) continue;
            const float* xr0 = rin0 ? xplane + static_cast<size_t>(h0) * x.w : nullptr;
            const float* xr1 = rin1 ? xplane + static_cast<size_t>(h0 + 1) * x.w : nullptr;
            float* gr0 = (gxplane && rin0) ? gxplane + static_cast<size_t>(h0) * x.w : nullptr;
            float* gr1 = (gxplane && rin1) ? gxplane + static_cast<size_t>(h0 + 1) * x.w : nullptr;
            for (int ow = 0; ow < out_w; ++ow) {
              const float gv = gcol[ow];
              if (gv == 0.f) continue;
              const int x0 = ow * sw + mw;
              const bool cin0 = x0 >= 0 && x0 < x.w;
              const bool cin1 = x0 + 1 >= 0 && x0 + 1 < x.w;
              if (!cin0 && !cin1) continue;
              const double w00 = (1.0 - fh) * (1.0 - fw), w01 = (1.0 - fh) * fw;
              const double w10 = fh * (1.0 - fw), w11 = fh * fw;
              const double v00 = (xr0 && cin0) ? xr0[x0] : 0.0;
              const double v01 = (xr0 && cin1) ? xr0[x0 + 1] : 0.0;
              const double v10 = (xr1 && cin0) ? xr1[x0] : 0.0;
              const double v11 = (xr1 && cin1) ? xr1[x0 + 1] : 0.0;
              if (gr0) {
                if (cin0) gr0[x0] += static_cast<float>(gv * w00);
                if (cin1) gr0[x0 + 1] += static_cast<float>(gv * w01);
              }
              if (gr1) {
                if (cin0) gr1[x0] += static_cast<float>(gv * w10);
                if (cin1) gr1[x0 + 1] += static_cast<float>(gv * w11);
              }
              // d sample / d coordinate, with the interpolation cell fixed.
              const double dv_dh = (1.0 - fw) * (v10 - v00) + fw * (v11 - v01);
              const double dv_dw = (1.0 - fh) * (v01 - v00) + fh * (v11 - v10);
              acc_dh += gv * tap_h * dv_dh;
              acc_dw += gv * tap_w * dv_dw;
            }
          }
        }
      }
    }
  }
  // Clamped scales stop receiving gradient.
  g.grad_scale_h = (s.h >= kScaleMin && s.h <= kScaleMax) ? acc_dh : 0.0;
  g.grad_scale_w = (s.w >= kScaleMin && s.w <= kScaleMax) ? acc_dw : 0.0;
  return g;
}

struct IntConvGrads {
  Tensor grad_x;
  std::vector<float> grad_weight;
  std::vector<float> grad_bias;
};

inline IntConvGrads integer_dilated_conv2d_backward(const Tensor& x, const ConvParams& p,
                                                    std::pair<int, int> dilation,
                                                    const Tensor& grad_out,
                                                    bool need_grad_x = true) {
  p.validate();
  if (x.c != p.c_in) throw std::invalid_argument("conv input channel mismatch");
  if (dilation.first < 1 || dilation.second < 1)
    throw std::invalid_argument("dilation must be >= 1");
  const int out_h = conv_out_dim(x.h, p.stride.first);
  const int out_w = conv_out_dim(x.w, p.stride.second);
  if (grad_out.n != x.n || grad_out.c != p.c_out || grad_out.h != out_h ||
      grad_out.w != out_w)
    throw std::invalid_argument("grad_out shape mismatch");

  const int K = p.c_in * p.k_h * p.k_w;
  const int N = out_h * out_w;
  const int ch = (p.k_h - 1) / 2, cw = (p.k_w - 1) / 2;
  const int sh = p.stride.first, sw = p.stride.second;

  IntConvGrads g;
  g.grad_x = Tensor(x.n, x.c, x.h, x.w);
  g.grad_weight.assign(p.weight.size(), 0.f);
  g.grad_bias.assign(p.c_out, 0.f);

  std::vector<float> cols(static_cast<size_t>(K) * N);
  std::vector<float> grad_cols(static_cast<size_t>(K) * N);

  for (int in = 0; in < x.n; ++in) {
    std::fill(grad_cols.begin(), grad_cols.end(), 0.f);
    detail::gemm_tn_acc(p.c_out, K, N, p.weight.data(), grad_out.plane(in, 0),
                        grad_cols.data());
    detail::int_im2col(x.plane(in, 0), x.c, x.h, x.w, p, dilation.first,
                       dilation.second, out_h, out_w, cols.data());
    detail::gemm_nt_acc(p.c_out, K, N, grad_out.plane(in, 0), cols.data(),
                        g.grad_weight.data());
    for (int oc = 0; oc < p.c_out; ++oc) {
      const float* gp = grad_out.plane(in, oc);
      double acc = 0.0;
      for (int i = 0; i < N; ++i) acc += gp[i];
      g.grad_bias[oc] += static_cast<float>(acc);
    }
    if (!need_grad_x) continue;
    for (int ic = 0; ic < x.c; ++ic) {
      float* gxplane = g.grad_x.plane(in, ic);
      for (int ki = 0; ki < p.k_h; ++ki) {
        const int off_h = (ki - ch) * dilation.first;
        for (int kj = 0; kj < p.k_w; ++kj) {
          const int off_w = (kj - cw) * dilation.second;
          const float* gcol = grad_cols.data() +
                              (static_cast<size_t>((ic * p.k_h + ki) * p.k_w + kj)) * N;
          for (int oh = 0; oh < out_h; ++oh, gcol += out_w) {
            const int ih = oh * sh + off_h;
            if (ih < 0 || ih >= x.h) continue;
            float* grow = gxplane + static_cast<size_t>(ih) * x.w;
            for (int ow = 0; ow < out_w; ++ow) {
              const int iw = ow * sw + off_w;
              if (iw >= 0 && iw < x.w) grow[iw] += gcol[ow];
            }
          }
        }
      }
    }
  }
  return g;
}

}  // namespace fracdil
