#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fracdil/graph.hpp"

namespace fracdil {

using ordered_json = nlohmann::ordered_json;

inline ordered_json graph_to_json(const ModelGraph& g) {
  ordered_json root;
  root["version"] = 1;
  root["layers"] = ordered_json::array();
  for (const auto& l : g.layers) {
    ordered_json j;
    j["name"] = l.name;
    j["kind"] = layer_kind_name(l.kind);
    j["c_in"] = l.c_in;
    j["c_out"] = l.c_out;
    j["kernel"] = {l.k_h, l.k_w};
    j["stride"] = {l.stride.first, l.stride.second};
    if (l.kind == LayerKind::conv)
      j["dilation"] = {l.dilation.first, l.dilation.second};
    else
      j["dilation"] = nullptr;
    if (l.scale)
      j["scale"] = {l.scale->h, l.scale->w};
    else
      j["scale"] = nullptr;
    if (l.decomposition) {
      ordered_json d;
      d["alpha"] = l.decomposition->alpha;
      d["source_scale"] = {l.decomposition->source_scale.h, l.decomposition->source_scale.w};
      d["near_integer_threshold"] = l.decomposition->near_integer_threshold;
      d["branches"] = ordered_json::array();
      for (const auto& b : l.decomposition->branches) {
        ordered_json bj;
        bj["dilation"] = {b.dilation.first, b.dilation.second};
        bj["kernel"] = {b.kernel.first, b.kernel.second};
        bj["out_range"] = {b.out_lo, b.out_hi};
        d["branches"].push_back(bj);
      }
      j["decomposition"] = d;
    } else {
      j["decomposition"] = nullptr;
    }
    root["layers"].push_back(j);
  }
  return root;
}

inline ModelGraph graph_from_json(const ordered_json& root) {
  if (!root.contains("version") || root["version"] != 1)
    throw std::runtime_error("unsupported graph version");
  ModelGraph g;
  for (const auto& j : root.at("layers")) {
    LayerSpec l;
    l.name = j.at("name").get<std::string>();
    l.kind = layer_kind_from_name(j.at("kind").get<std::string>());
    l.c_in = j.at("c_in").get<int>();
    l.c_out = j.at("c_out").get<int>();
    l.k_h = j.at("kernel")[0].get<int>();
    l.k_w = j.at("kernel")[1].get<int>();
    l.stride = {j.at("stride")[0].get<int>(), j.at("stride")[1].get<int>()};
    if (j.contains("dilation") && !j["dilation"].is_null())
      l.dilation = {j["dilation"][0].get<int>(), j["dilation"][1].get<int>()};
    if (j.contains("scale") && !j["scale"].is_null())
      l.scale = ScalePair{j["scale"][0].get<double>(), j["scale"][1].get<double>()};
    if (j.contains("decomposition") && !j["decomposition"].is_null()) {
      const auto& d = j["decomposition"];
      DecompositionResult dec;
      dec.alpha = d.at("alpha").get<double>();
      dec.source_scale = {d.at("source_scale")[0].get<double>(),
                          d.at("source_scale")[1].get<double>()};
      if (d.contains("near_integer_threshold"))
        dec.near_integer_threshold = d["near_integer_threshold"].get<double>();
      for (const auto& bj : d.at("branches")) {
        BranchSpec b;
        b.dilation = {bj.at("dilation")[0].get<int>(), bj.at("dilation")[1].get<int>()};
        b.kernel = {bj.at("kernel")[0].get<int>(), bj.at("kernel")[1].get<int>()};
        b.out_lo = bj.at("out_range")[0].get<int>();
        b.out_hi = bj.at("out_range")[1].get<int>();
        dec.branches.push_back(b);
      }
      l.decomposition = std::move(dec);
    }
    g.layers.push_back(std::move(l));
  }
  validate_graph(g);
  return g;
}

inline void save_graph_json(const ModelGraph& g, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << graph_to_json(g).dump(2) << '\n';
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline ModelGraph load_graph_json(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  ordered_json root;
  f >> root;
  return graph_from_json(root);
}

// Weight files start with the magic "PODW", then a little-endian u32 format
// version and u32 array count. Each array stores a u16 name length, the
// name, a u8 rank, u32 dims, a u8 dtype tag (0 = float32) and raw
// little-endian payload.
class BadMagicError : public std::runtime_error {
 public:
  explicit BadMagicError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void put_u16(std::string& buf, uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct ByteReader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("truncated weight file");
  }
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(buf[pos++]);
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint8_t>(buf[pos]) |
                 (static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

inline void save_weights(const WeightStore& ws, const std::string& path) {
  std::string buf;
  buf += "PODW";
  detail::put_u32(buf, 1);
  detail::put_u32(buf, static_cast<uint32_t>(ws.size()));
  for (const auto& [name, arr] : ws) {
    if (name.size() > 0xffff) throw std::runtime_error("array name too long");
    detail::put_u16(buf, static_cast<uint16_t>(name.size()));
    buf += name;
    buf.push_back(static_cast<char>(arr.dims.size()));
    size_t count = 1;
    for (int d : arr.dims) {
      if (d < 0) throw std::runtime_error("negative dimension");
      detail::put_u32(buf, static_cast<uint32_t>(d));
      count *= static_cast<size_t>(d);
    }
    if (count != arr.data.size()) throw std::runtime_error("array size mismatch: " + name);
    buf.push_back(0);  // dtype float32
    for (float v : arr.data) detail::put_u32(buf, std::bit_cast<uint32_t>(v));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline WeightStore load_weights(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  detail::ByteReader r{buf};
  if (r.bytes(4) != "PODW") throw BadMagicError("bad weight file magic");
  if (r.u32() != 1) throw std::runtime_error("unsupported weight file version");
  const uint32_t count = r.u32();
  WeightStore ws;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = r.u16();
    const std::string name = r.bytes(name_len);
    const uint8_t rank = r.u8();
    NamedArray arr;
    size_t total = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      arr.dims.push_back(static_cast<int>(r.u32()));
      total *= static_cast<size_t>(arr.dims.back());
    }
    const uint8_t dtype = r.u8();
    if (dtype != 0) throw std::runtime_error("unsupported dtype in weight file");
    arr.data.resize(total);
    for (size_t k = 0; k < total; ++k) arr.data[k] = std::bit_cast<float>(r.u32());
    if (ws.count(name)) throw std::runtime_error("duplicate array name: " + name);
    ws[name] = std::move(arr);
  }
  return ws;
}

}  // namespace fracdil
