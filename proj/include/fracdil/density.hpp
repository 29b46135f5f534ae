#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fracdil/graph.hpp"

namespace fracdil {

// Total connection mass from an output position to the input position offset
// by the key, summed over channel pairs. Zero-mass offsets are omitted.
using DensityMap = std::map<std::pair<int, int>, double>;

inline double density_total_mass(const DensityMap& m) {
  double t = 0.0;
  for (const auto& [k, v] : m) t += v;
  return t;
}

namespace detail {

inline void add_mass(DensityMap& m, int dh, int dw, double mass) {
  if (mass == 0.0) return;
  m[{dh, dw}] += mass;
}

// Spreads `mass` at a fractional offset onto the surrounding integer offsets
// with the same tent weights the sampler uses.
inline void add_mass_bilinear(DensityMap& m, double oh, double ow, double mass) {
  const int h0 = static_cast<int>(std::floor(oh));
  const int w0 = static_cast<int>(std::floor(ow));
  const double fh = oh - h0, fw = ow - w0;
  add_mass(m, h0, w0, mass * (1.0 - fh) * (1.0 - fw));
  add_mass(m, h0, w0 + 1, mass * (1.0 - fh) * fw);
  add_mass(m, h0 + 1, w0, mass * fh * (1.0 - fw));
  add_mass(m, h0 + 1, w0 + 1, mass * fh * fw);
}

}  // namespace detail

// Closed-form single-layer density. Adaptive layers need a frozen scale.
inline DensityMap layer_density(const LayerSpec& l) {
  DensityMap m;
  const int ch = (l.k_h - 1) / 2, cw = (l.k_w - 1) / 2;
  switch (l.kind) {
    case LayerKind::conv: {
      const double mass = static_cast<double>(l.c_in) * l.c_out;
      for (int ki = 0; ki < l.k_h; ++ki)
        for (int kj = 0; kj < l.k_w; ++kj)
          detail::add_mass(m, (ki - ch) * l.dilation.first, (kj - cw) * l.dilation.second,
                           mass);
      return m;
    }
    case LayerKind::gsl_conv: {
      if (!l.scale) throw std::runtime_error("missing frozen scale");
      const ScalePair s = clamp_scale(*l.scale);
      const double mass = static_cast<double>(l.c_in) * l.c_out;
      for (int ki = 0; ki < l.k_h; ++ki)
        for (int kj = 0; kj < l.k_w; ++kj)
          detail::add_mass_bilinear(m, (ki - ch) * s.h, (kj - cw) * s.w, mass);
      return m;
    }
    case LayerKind::fd_branch_group: {
      for (const auto& b : l.decomposition->branches) {
        const double mass = static_cast<double>(l.c_in) * (b.out_hi - b.out_lo);
        const int bch = (b.kernel.first - 1) / 2, bcw = (b.kernel.second - 1) / 2;
        for (int ki = 0; ki < b.kernel.first; ++ki)
          for (int kj = 0; kj < b.kernel.second; ++kj)
            detail::add_mass(m, (ki - bch) * b.dilation.first,
                             (kj - bcw) * b.dilation.second, mass);
      }
      return m;
    }
    default:
      throw std::invalid_argument("layer has no spatial taps");
  }
}

namespace detail {

// Double-precision planes for the reference propagation; deliberately not
// the production tensor path.
struct DPlanes {
  int c = 0, h = 0, w = 0;
  std::vector<double> data;

  DPlanes(int c_, int h_, int w_)
      : c(c_), h(h_), w(w_), data(static_cast<size_t>(c_) * h_ * w_, 0.0) {}

  double* plane(int ic) { return data.data() + static_cast<size_t>(ic) * h * w; }
  const double* plane(int ic) const { return data.data() + static_cast<size_t>(ic) * h * w; }

  double sample(int ic, double y, double x) const {
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const double fy = y - y0, fx = x - x0;
    auto val = [&](int r, int col) -> double {
      if (r < 0 || r >= h || col < 0 || col >= w) return 0.0;
      return plane(ic)[static_cast<size_t>(r) * w + col];
    };
    return (1.0 - fy) * ((1.0 - fx) * val(y0, x0) + fx * val(y0, x0 + 1)) +
           fy * ((1.0 - fx) * val(y0 + 1, x0) + fx * val(y0 + 1, x0 + 1));
  }
};

struct TapSet {
  std::vector<std::pair<double, double>> offsets;  // per tap, (h, w)
  int c_out = 0;       // taps apply from every input channel to this many outputs
};

// Flattens one layer into unit-weight taps per (input channel -> output
// channel slice) so the reference propagation below stays uniform.
inline std::vector<std::pair<TapSet, std::pair<int, int>>> layer_taps(const LayerSpec& l) {
  // Each entry: taps plus the output channel range they fill.
  std::vector<std::pair<TapSet, std::pair<int, int>>> groups;
  switch (l.kind) {
    case LayerKind::conv: {
      TapSet t;
      t.c_out = l.c_out;
      const int ch = (l.k_h - 1) / 2, cw = (l.k_w - 1) / 2;
      for (int ki = 0; ki < l.k_h; ++ki)
        for (int kj = 0; kj < l.k_w; ++kj)
          t.offsets.push_back({static_cast<double>((ki - ch) * l.dilation.first),
                               static_cast<double>((kj - cw) * l.dilation.second)});
      groups.push_back({t, {0, l.c_out}});
      return groups;
    }
    case LayerKind::gsl_conv: {
      if (!l.scale) throw std::runtime_error("missing frozen scale");
      const ScalePair s = clamp_scale(*l.scale);
      TapSet t;
      t.c_out = l.c_out;
      const int ch = (l.k_h - 1) / 2, cw = (l.k_w - 1) / 2;
      for (int ki = 0; ki < l.k_h; ++ki)
        for (int kj = 0; kj < l.k_w; ++kj)
          t.offsets.push_back({(ki - ch) * s.h, (kj - cw) * s.w});
      groups.push_back({t, {0, l.c_out}});
      return groups;
    }
    case LayerKind::fd_branch_group: {
      for (const auto& b : l.decomposition->branches) {
        TapSet t;
        t.c_out = b.out_hi - b.out_lo;
        const int bch = (b.kernel.first - 1) / 2, bcw = (b.kernel.second - 1) / 2;
        for (int ki = 0; ki < b.kernel.first; ++ki)
          for (int kj = 0; kj < b.kernel.second; ++kj)
            t.offsets.push_back({static_cast<double>((ki - bch) * b.dilation.first),
                                 static_cast<double>((kj - bcw) * b.dilation.second)});
        groups.push_back({t, {b.out_lo, b.out_hi}});
      }
      return groups;
    }
    default:
      throw std::invalid_argument("layer has no spatial taps");
  }
}

}  // namespace detail

// Reference density: propagates a unit impulse (in every input channel)
// through an all-ones copy of the stack in double precision and reads the
// response around the centre. Stride must be 1 throughout; relu layers pass
// through untouched, anything that breaks shift invariance is rejected.
// If `truncated` is given it reports whether the canvas had to be capped.
inline DensityMap density_bruteforce(const ModelGraph& g, int max_offset,
                                     bool* truncated = nullptr) {
  validate_graph(g);
  if (max_offset < 0) throw std::invalid_argument("negative offset range");
  if (truncated) *truncated = false;

  std::vector<const LayerSpec*> stack;
  for (const auto& l : g.layers) {
    if (l.kind == LayerKind::relu) continue;
    if (l.kind == LayerKind::pool || l.kind == LayerKind::linear)
      throw std::invalid_argument("density needs a shift-invariant stack");
    if (l.stride != std::pair<int, int>{1, 1})
      throw std::invalid_argument("density needs stride 1");
    stack.push_back(&l);
  }
  if (stack.empty()) throw std::invalid_argument("no spatial layers");

  // Reach of the whole stack: sum of per-layer maximum tap extents, plus one
  // cell per layer for interpolation spill.
  int reach_h = 0, reach_w = 0;
  for (const LayerSpec* l : stack)
    for (const auto& [taps, range] : detail::layer_taps(*l))
      for (const auto& [oh, ow] : taps.offsets) {
        reach_h = std::max(reach_h, static_cast<int>(std::ceil(std::abs(oh))) + 1);
        reach_w = std::max(reach_w, static_cast<int>(std::ceil(std::abs(ow))) + 1);
      }
  reach_h *= static_cast<int>(stack.size());
  reach_w *= static_cast<int>(stack.size());

  constexpr int kMaxCanvas = 1025;
  int half_h = max_offset + reach_h + 1;
  int half_w = max_offset + reach_w + 1;
  int usable_offset = max_offset;
  if (2 * half_h + 1 > kMaxCanvas || 2 * half_w + 1 > kMaxCanvas) {
    const int cap = (kMaxCanvas - 1) / 2;
    usable_offset = std::max(0, cap - std::max(reach_h, reach_w) - 1);
    half_h = usable_offset + reach_h + 1;
    half_w = usable_offset + reach_w + 1;
    if (truncated) *truncated = true;
    std::fprintf(stderr,
                 "density_bruteforce: offset range %d exceeds the padded field, "
                 "truncating to %d\n",
                 max_offset, usable_offset);
  }
  const int H = 2 * half_h + 1, W = 2 * half_w + 1;
  const int cy = half_h, cx = half_w;

  detail::DPlanes cur(stack.front()->c_in, H, W);
  for (int ic = 0; ic < cur.c; ++ic) cur.plane(ic)[static_cast<size_t>(cy) * W + cx] = 1.0;

  for (const LayerSpec* l : stack) {
    detail::DPlanes next(l->c_out, H, W);
    for (const auto& [taps, range] : detail::layer_taps(*l)) {
      // All channels of a slice see the same all-ones kernel, so compute the
      // channel sum once and copy it across the slice.
      std::vector<double> acc(static_cast<size_t>(H) * W, 0.0);
      for (int ic = 0; ic < cur.c; ++ic)
        for (const auto& [oh, ow] : taps.offsets) {
          const double ih0 = oh, iw0 = ow;
          for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
              const double v = cur.sample(ic, y + ih0, x + iw0);
              if (v != 0.0) acc[static_cast<size_t>(y) * W + x] += v;
            }
        }
      for (int oc = range.first; oc < range.second; ++oc) {
        double* p = next.plane(oc);
        for (size_t i = 0; i < acc.size(); ++i) p[i] = acc[i];
      }
    }
    cur = std::move(next);
  }

  DensityMap m;
  for (int dh = -usable_offset; dh <= usable_offset; ++dh)
    for (int dw = -usable_offset; dw <= usable_offset; ++dw) {
      double v = 0.0;
      for (int oc = 0; oc < cur.c; ++oc)
        v += cur.plane(oc)[static_cast<size_t>(cy - dh) * W + (cx - dw)];
      if (v != 0.0) m[{dh, dw}] = v;
    }
  return m;
}

struct DensityDiff {
  double max_abs_diff = 0.0;
  double total_mass_diff = 0.0;
};

inline DensityDiff compare_density(const DensityMap& a, const DensityMap& b) {
  DensityDiff d;
  double ta = 0.0, tb = 0.0;
  for (const auto& [k, v] : a) {
    ta += v;
    auto it = b.find(k);
    const double u = it == b.end() ? 0.0 : it->second;
    d.max_abs_diff = std::max(d.max_abs_diff, std::abs(v - u));
  }
  for (const auto& [k, v] : b) {
    tb += v;
    if (!a.count(k)) d.max_abs_diff = std::max(d.max_abs_diff, std::abs(v));
  }
  d.total_mass_diff = std::abs(ta - tb);
  return d;
}

inline void save_density_csv(const DensityMap& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "dh,dw,density\n";
  char line[128];
  for (const auto& [k, v] : m) {
    std::snprintf(line, sizeof line, "%d,%d,%.12g\n", k.first, k.second, v);
    f << line;
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace fracdil
