// Copyright 2026 The fastaudio Authors. All Rights Reserved.
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

// Checkpoint files:
//   "FSTC" | u32 version | u32 tensor count |
//   per tensor: u16 name length | UTF-8 name | u8 rank | u32 extents[rank] | f32 data
// All integers and floats little-endian.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "fast/model.hpp"

namespace fast {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename U>
  void le(U v) {
    static_assert(std::is_unsigned_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  const std::vector<unsigned char>& buffer() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> data) : data_(std::move(data)) {}

  template <typename U>
  U le(const char* field) {
    need(sizeof(U), field);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(data_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  float f32(const char* field) { return std::bit_cast<float>(le<std::uint32_t>(field)); }
  std::string str(std::size_t n, const char* field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  void need(std::size_t n, const char* field) const {
    if (pos_ + n > data_.size()) throw ParseError("unexpected end of data", pos_, field);
  }

 private:
  std::vector<unsigned char> data_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path + "'");
}

}  // namespace detail

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

inline std::vector<unsigned char> encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  detail::ByteWriter w;
  w.bytes("FSTC", 4);
  w.le(kCheckpointVersion);
  w.le(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xFFFF) throw UsageError("parameter name too long: " + e.name);
    if (e.shape.size() > 0xFF) throw UsageError("tensor rank too large for " + e.name);
    w.le(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.le(static_cast<std::uint8_t>(e.shape.size()));
    for (auto x : e.shape) w.le(static_cast<std::uint32_t>(x));
    for (float v : e.data) w.f32(v);
  }
  return w.buffer();
}

inline std::vector<CheckpointEntry> decode_checkpoint(std::vector<unsigned char> bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.str(4, "magic") != "FSTC") throw ParseError("bad checkpoint magic", 0, "magic");
  const std::size_t version_at = r.offset();
  if (auto v = r.le<std::uint32_t>("version"); v != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(v), version_at, "version");
  }
  const auto count = r.le<std::uint32_t>("tensor_count");
  std::vector<CheckpointEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto len = r.le<std::uint16_t>("name_length");
    e.name = r.str(len, "name");
    const auto rank = r.le<std::uint8_t>("rank");
    for (std::uint8_t k = 0; k < rank; ++k) {
      const std::size_t at = r.offset();
      const auto extent = r.le<std::uint32_t>("extent");
      if (extent == 0) throw ParseError("zero extent in tensor '" + e.name + "'", at, "extent");
      e.shape.push_back(extent);
    }
    const std::size_t n = numel(e.shape);
    r.need(n * 4, "data");
    e.data.resize(n);
    for (auto& v : e.data) v = r.f32("data");
    entries.push_back(std::move(e));
  }
  if (!r.at_end()) throw ParseError("trailing bytes after last tensor", r.offset(), "tensor_count");
  return entries;
}

template <typename T>
void save_checkpoint(const FastModel<T>& model, const std::string& path) {
  std::vector<CheckpointEntry> entries;
  for (const auto& p : model.parameters()) {
    const auto d = p.tensor.data();
    entries.push_back({p.name, p.tensor.shape(), std::vector<float>(d.begin(), d.end())});
  }
  detail::write_file(path, encode_checkpoint(entries));
}

/// Overwrites every parameter of `model` from `path`. The checkpoint must hold
/// exactly the model's parameter names and shapes.
template <typename T>
void load_checkpoint(FastModel<T>& model, const std::string& path) {
  const auto entries = decode_checkpoint(detail::read_file(path));
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  auto params = model.parameters();
  if (params.size() != entries.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(entries.size()) + " tensors, model expects " + std::to_string(params.size()));
  }
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ConfigError("checkpoint is missing parameter '" + p.name + "'");
    if (it->second->shape != p.tensor.shape()) {
      throw ConfigError("checkpoint shape " + to_string(it->second->shape) + " for '" + p.name + "' does not match model shape " +
                        to_string(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    std::copy(it->second->data.begin(), it->second->data.end(), dst.begin());
  }
}

template <typename T>
FastModel<T> load_model(const ModelConfig& cfg, const std::string& path, const BuildOptions& opts = {}) {
  auto model = FastModel<T>::build(cfg, opts);
  load_checkpoint(model, path);
  return model;
}

}  // namespace fast
