#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fracdil/graph.hpp"

namespace fracdil {

inline constexpr double kNearIntegerThreshold = 0.05;

// Portion of output channels assigned to the rounded-up dilation, plus which
// directions actually carry a fractional part. Directions whose fractional
// part is within `threshold` of an integer are rounded and excluded from the
// blend; alpha is the mean fractional part of the remaining directions.
struct SplitFactor {
  double alpha = 0.0;
  bool h_active = false;
  bool w_active = false;
};

inline SplitFactor split_factor(const ScalePair& s, double threshold = kNearIntegerThreshold) {
  const ScalePair sc = clamp_scale(s);
  if (threshold < 0.0 || threshold >= 0.5)
    throw std::invalid_argument("near-integer threshold out of range");
  SplitFactor f;
  const double frac_h = sc.h - std::floor(sc.h);
  const double frac_w = sc.w - std::floor(sc.w);
  f.h_active = frac_h > threshold && frac_h < 1.0 - threshold;
  f.w_active = frac_w > threshold && frac_w < 1.0 - threshold;
  if (f.h_active && f.w_active)
    f.alpha = 0.5 * (frac_h + frac_w);
  else if (f.h_active)
    f.alpha = frac_h;
  else if (f.w_active)
    f.alpha = frac_w;
  return f;
}

namespace detail {

// Kernel side never stays extended in a direction whose dilation collapsed to
// zero; the taps would all land on the centre column anyway.
inline void collapse_dim(int& dil, int& kernel) {
  if (dil == 0) {
    dil = 1;
    kernel = 1;
  }
}

inline DecompositionResult decompose_for_kernel(const ScalePair& s, int c_out,
                                                double threshold, int k_h, int k_w) {
  const ScalePair sc = clamp_scale(s);
  SplitFactor f = split_factor(sc, threshold);
  // A direction without spatial extent has nothing to blend.
  if (k_h == 1) f.h_active = false;
  if (k_w == 1) f.w_active = false;
  if (f.h_active && f.w_active)
    f.alpha = 0.5 * ((sc.h - std::floor(sc.h)) + (sc.w - std::floor(sc.w)));
  else if (f.h_active)
    f.alpha = sc.h - std::floor(sc.h);
  else if (f.w_active)
    f.alpha = sc.w - std::floor(sc.w);
  else
    f.alpha = 0.0;

  DecompositionResult r;
  r.alpha = f.alpha;
  r.source_scale = sc;
  r.near_integer_threshold = threshold;

  const int round_h = static_cast<int>(std::lround(sc.h));
  const int round_w = static_cast<int>(std::lround(sc.w));
  const int floor_h = static_cast<int>(std::floor(sc.h));
  const int floor_w = static_cast<int>(std::floor(sc.w));

  if (!f.h_active && !f.w_active) {
    BranchSpec b;
    b.dilation = {round_h, round_w};
    b.kernel = {k_h, k_w};
    detail::collapse_dim(b.dilation.first, b.kernel.first);
    detail::collapse_dim(b.dilation.second, b.kernel.second);
    b.out_lo = 0;
    b.out_hi = c_out;
    r.branches.push_back(b);
    return r;
  }

  if (c_out < 2) throw std::invalid_argument("insufficient channels for split");

  BranchSpec lower, upper;
  lower.dilation = {f.h_active ? floor_h : round_h, f.w_active ? floor_w : round_w};
  upper.dilation = {f.h_active ? floor_h + 1 : round_h, f.w_active ? floor_w + 1 : round_w};
  lower.kernel = {k_h, k_w};
  upper.kernel = {k_h, k_w};
  detail::collapse_dim(lower.dilation.first, lower.kernel.first);
  detail::collapse_dim(lower.dilation.second, lower.kernel.second);
  detail::collapse_dim(upper.dilation.first, upper.kernel.first);
  detail::collapse_dim(upper.dilation.second, upper.kernel.second);

  int n_lower = static_cast<int>(std::lround((1.0 - f.alpha) * c_out));
  n_lower = std::clamp(n_lower, 1, c_out - 1);
  lower.out_lo = 0;
  lower.out_hi = n_lower;
  upper.out_lo = n_lower;
  upper.out_hi = c_out;
  r.branches = {lower, upper};
  return r;
}

}  // namespace detail

// Rewrites one fractional sampling rate as one or two integer-dilation
// branches over a 3x3 kernel, splitting output channels by the blend factor.
inline DecompositionResult decompose_scale(const ScalePair& s, int c_out,
                                           double threshold = kNearIntegerThreshold) {
  if (c_out < 1) throw std::invalid_argument("bad channel count");
  return detail::decompose_for_kernel(s, c_out, threshold, 3, 3);
}

// Rewrites every adaptive layer of a graph into fixed branch groups, using
// frozen per-layer scales. `frozen` overrides layer annotations; a layer with
// neither fails. The result has no weights; see transfer_weights.
inline ModelGraph decompose_graph(const ModelGraph& g,
                                  const std::map<std::string, ScalePair>& frozen,
                                  double threshold = kNearIntegerThreshold) {
  validate_graph(g);
  ModelGraph out;
  for (const auto& l : g.layers) {
    if (l.kind != LayerKind::gsl_conv) {
      out.layers.push_back(l);
      continue;
    }
    ScalePair s;
    if (auto it = frozen.find(l.name); it != frozen.end())
      s = it->second;
    else if (l.scale)
      s = *l.scale;
    else
      throw std::runtime_error("missing frozen scale");
    LayerSpec fd = l;
    fd.kind = LayerKind::fd_branch_group;
    fd.scale.reset();
    fd.decomposition = detail::decompose_for_kernel(s, l.c_out, threshold, l.k_h, l.k_w);
    out.layers.push_back(fd);
  }
  return out;
}

// Multiply-accumulate count of one forward pass at the given input size.
// Branch groups count each branch at its own slice width; scale prediction
// heads are not counted.
inline long long count_flops(const ModelGraph& g, int in_h, int in_w) {
  validate_graph(g);
  long long total = 0;
  int h = in_h, w = in_w;
  for (const auto& l : g.layers) {
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::gsl_conv: {
        const int oh = conv_out_dim(h, l.stride.first);
        const int ow = conv_out_dim(w, l.stride.second);
        total += static_cast<long long>(l.c_in) * l.c_out * l.k_h * l.k_w * oh * ow;
        h = oh;
        w = ow;
        break;
      }
      case LayerKind::fd_branch_group: {
        const int oh = conv_out_dim(h, l.stride.first);
        const int ow = conv_out_dim(w, l.stride.second);
        for (const auto& b : l.decomposition->branches)
          total += static_cast<long long>(l.c_in) * (b.out_hi - b.out_lo) *
                   b.kernel.first * b.kernel.second * oh * ow;
        h = oh;
        w = ow;
        break;
      }
      case LayerKind::pool:
        h = w = 1;
        break;
      case LayerKind::linear:
        total += static_cast<long long>(l.c_in) * l.c_out;
        break;
      case LayerKind::relu:
        break;
    }
  }
  return total;
}

}  // namespace fracdil
