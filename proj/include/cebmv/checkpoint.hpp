// Copyright 2026 The cebmv Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Checkpoint file layout:
//
//   bytes 0..7     magic "CEBMVCK1"
//   bytes 8..15    header length N, unsigned little-endian
//   next N bytes   UTF-8 JSON header:
//                  {"format": "cebmv-checkpoint", "version": 1, "variant": ...,
//                   "dims": {...}, "config": {...}, "config_hash": "...",
//                   "tensors": [{"name", "shape", "offset"}, ...]}
//   payload        float64 values, little-endian, tensors back to back;
//                  "offset" is the byte offset of a tensor inside the payload.
//
// Batch-standardization running statistics are stored as tensors named
// "<layer>.running_mean" and "<layer>.running_var".

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cebmv/common.hpp"
#include "cebmv/encoders.hpp"

namespace cebmv {

using Json = nlohmann::json;

inline constexpr char kCheckpointMagic[8] = {'C', 'E', 'B', 'M', 'V', 'C', 'K', '1'};

/// 64-bit FNV-1a of a string, as 16 hex digits.
inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline Json dims_to_json(const StackDims& d) {
  return Json{{"input_dim", d.input_dim}, {"trunk_hidden", d.trunk_hidden}, {"repr_dim", d.repr_dim},
              {"proj_hidden", d.proj_hidden}, {"proj_dim", d.proj_dim}};
}

inline StackDims dims_from_json(const Json& j) {
  StackDims d;
  d.input_dim = j.at("input_dim").get<std::size_t>();
  d.trunk_hidden = j.at("trunk_hidden").get<std::vector<std::size_t>>();
  d.repr_dim = j.at("repr_dim").get<std::size_t>();
  d.proj_hidden = j.at("proj_hidden").get<std::size_t>();
  d.proj_dim = j.at("proj_dim").get<std::size_t>();
  return d;
}

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

inline void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

struct BlobEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

inline std::vector<BlobEntry> collect_blobs(EncoderStack& stack) {
  std::vector<BlobEntry> out;
  stack.visit_all([&](const std::string& name, Tensor& t, bool) {
    out.push_back({name, t.shape(), {t.values().begin(), t.values().end()}});
  });
  for (const NamedStats& s : stack.stats()) {
    const std::size_t n = s.stats->running_mean.size();
    out.push_back({s.name + ".running_mean", {n}, s.stats->running_mean});
    out.push_back({s.name + ".running_var", {n}, s.stats->running_var});
  }
  return out;
}

}  // namespace detail

/// A stack together with the resolved configuration it was trained under.
struct Checkpoint {
  EncoderStack stack;
  Json config = Json::object();

  std::string config_hash() const { return fnv1a_hex(config.dump()); }
};

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  EncoderStack stack = ckpt.stack.clone();
  auto blobs = detail::collect_blobs(stack);
  Json tensors = Json::array();
  std::string payload;
  for (const auto& b : blobs) {
    tensors.push_back({{"name", b.name}, {"shape", b.shape}, {"offset", payload.size()}});
    for (double v : b.values) detail::put_f64(payload, v);
  }
  Json header = {{"format", "cebmv-checkpoint"},
                 {"version", 1},
                 {"variant", to_string(stack.variant())},
                 {"dims", dims_to_json(stack.dims())},
                 {"config", ckpt.config},
                 {"config_hash", ckpt.config_hash()},
                 {"tensors", tensors}};
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u64(out, text.size());
  out += text;
  out += payload;
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw Error("checkpoint: bad magic");
  }
  const std::uint64_t header_len = detail::get_u64(bytes.data() + 8);
  if (16 + header_len > bytes.size()) throw Error("checkpoint: truncated header");
  const Json header = Json::parse(bytes.substr(16, header_len));
  const char* payload = bytes.data() + 16 + header_len;
  const std::size_t payload_len = bytes.size() - 16 - header_len;

  Checkpoint ckpt;
  ckpt.config = header.at("config");
  // Seed is irrelevant: every value is overwritten below.
  ckpt.stack = EncoderStack(dims_from_json(header.at("dims")), parse_variant(header.at("variant")), 0);

  std::map<std::string, std::vector<double>> values;
  for (const Json& t : header.at("tensors")) {
    const auto shape = t.at("shape").get<Shape>();
    const std::size_t n = shape_size(shape);
    const std::size_t off = t.at("offset").get<std::size_t>();
    if (off + 8 * n > payload_len) throw Error("checkpoint: tensor extends past payload");
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<double>(detail::get_u64(payload + off + 8 * i));
    values[t.at("name").get<std::string>()] = std::move(v);
  }
  auto take = [&](const std::string& name, std::size_t expected) {
    auto it = values.find(name);
    if (it == values.end()) throw Error("checkpoint: missing tensor " + name);
    if (it->second.size() != expected) throw ShapeError("checkpoint: wrong size for " + name);
    return it->second;
  };
  ckpt.stack.visit_all([&](const std::string& name, Tensor& t, bool) { t.assign(take(name, t.size())); });
  for (const NamedStats& s : ckpt.stack.stats()) {
    s.stats->running_mean = take(s.name + ".running_mean", s.stats->running_mean.size());
    s.stats->running_var = take(s.name + ".running_var", s.stats->running_var.size());
  }
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path);
  const std::string bytes = serialize_checkpoint(ckpt);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace cebmv
