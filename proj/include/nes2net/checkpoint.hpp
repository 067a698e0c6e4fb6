// Copyright 2026 the nes2net authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container and its binary format.
//
//   magic "N2NCKPT1"
//   u32   entry count
//   per entry:
//     u16  name length, name bytes
//     u8   dtype (0 = f32, 1 = f64)
//     u8   rank
//     u32  extent per axis
//     raw  little-endian element data
//   u32   metadata byte length
//   text  "key=value\n" lines
//
// All integers little-endian. Values are held as doubles in memory; f32
// payloads survive the round trip bit-exactly because every f32 is exactly
// representable.
#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "nes2net/model.hpp"

namespace n2n {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'N', '2', 'N', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr std::uint8_t kDtypeF64 = 1;

struct CheckpointEntry {
  std::string name;
  std::uint8_t dtype = kDtypeF32;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::vector<CheckpointEntry> entries;
  std::vector<std::pair<std::string, std::string>> metadata;  // ordered

  const CheckpointEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
  std::string meta(const std::string& key) const {
    for (const auto& [k, v] : metadata)
      if (k == key) return v;
    return "";
  }
  void set_meta(const std::string& key, const std::string& value) {
    for (auto& [k, v] : metadata)
      if (k == key) {
        v = value;
        return;
      }
    metadata.emplace_back(key, value);
  }
};

template <std::floating_point T>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<T, float> ? kDtypeF32 : kDtypeF64;
}

// Parameters first, then running buffers, in model enumeration order.
template <std::floating_point T>
Checkpoint checkpoint_from_model(Model<T>& m) {
  Checkpoint ck;
  auto grab = [&](const std::string& name, Tensor<T>& t) {
    CheckpointEntry e;
    e.name = name;
    e.dtype = dtype_code<T>();
    e.shape = t.shape();
    e.values.resize(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i) e.values[i] = static_cast<double>(t[i]);
    ck.entries.push_back(std::move(e));
  };
  m.for_each_param(grab);
  m.for_each_buffer(grab);
  ck.set_meta("variant", variant_name(m.cfg.variant));
  return ck;
}

// Strict: entry order, names, dtypes and shapes must all match the model.
template <std::floating_point T>
void checkpoint_to_model(const Checkpoint& ck, Model<T>& m) {
  std::size_t next = 0;
  auto put = [&](const std::string& name, Tensor<T>& t) {
    if (next >= ck.entries.size())
      throw std::runtime_error("checkpoint: missing entry for " + name);
    const CheckpointEntry& e = ck.entries[next++];
    if (e.name != name)
      throw std::runtime_error("checkpoint: expected entry '" + name + "', found '" + e.name +
                               "'");
    if (e.dtype != dtype_code<T>())
      throw std::runtime_error("checkpoint: dtype mismatch for " + name);
    if (e.shape != t.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name + ": stored " +
                               shape_str(e.shape) + ", model wants " + shape_str(t.shape()));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(e.values[i]);
  };
  m.for_each_param(put);
  m.for_each_buffer(put);
  if (next != ck.entries.size())
    throw std::runtime_error("checkpoint: " + std::to_string(ck.entries.size() - next) +
                             " extra entries beyond the model schema");
}

namespace detail {

template <class I>
void write_le(std::ostream& os, I v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(I));
}

template <class I>
I read_le(std::istream& is, const std::string& what) {
  I v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(I)))
    throw std::runtime_error("checkpoint: truncated while reading " + what);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ck.entries.size()));
  for (const auto& e : ck.entries) {
    if (e.name.size() > 0xffff)
      throw std::runtime_error("checkpoint: entry name too long: " + e.name);
    if (e.shape.size() > 0xff)
      throw std::runtime_error("checkpoint: rank too large for " + e.name);
    if (e.values.size() != shape_numel(e.shape))
      throw std::runtime_error("checkpoint: value count does not match shape for " + e.name);
    detail::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::write_le<std::uint8_t>(os, e.dtype);
    detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(e.shape.size()));
    for (std::size_t ext : e.shape)
      detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ext));
    if (e.dtype == kDtypeF32) {
      for (double v : e.values) {
        float f = static_cast<float>(v);
        os.write(reinterpret_cast<const char*>(&f), sizeof(f));
      }
    } else if (e.dtype == kDtypeF64) {
      os.write(reinterpret_cast<const char*>(e.values.data()),
               static_cast<std::streamsize>(e.values.size() * sizeof(double)));
    } else {
      throw std::runtime_error("checkpoint: unknown dtype code for " + e.name);
    }
  }
  std::string meta;
  for (const auto& [k, v] : ck.metadata) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos ||
        v.find('\n') != std::string::npos)
      throw std::runtime_error("checkpoint: metadata key/value must not contain '=' or newline");
    meta += k;
    meta += '=';
    meta += v;
    meta += '\n';
  }
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(meta.size()));
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[sizeof(kCheckpointMagic)];
  if (!is.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  Checkpoint ck;
  auto count = detail::read_le<std::uint32_t>(is, "entry count");
  ck.entries.reserve(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    CheckpointEntry e;
    auto name_len = detail::read_le<std::uint16_t>(is, "name length");
    e.name.resize(name_len);
    if (!is.read(e.name.data(), name_len))
      throw std::runtime_error("checkpoint: truncated entry name in " + path);
    e.dtype = detail::read_le<std::uint8_t>(is, "dtype");
    if (e.dtype != kDtypeF32 && e.dtype != kDtypeF64)
      throw std::runtime_error("checkpoint: unknown dtype for " + e.name + " in " + path);
    auto rank = detail::read_le<std::uint8_t>(is, "rank");
    e.shape.resize(rank);
    for (auto& ext : e.shape) ext = detail::read_le<std::uint32_t>(is, "extent");
    std::size_t numel = shape_numel(e.shape);
    e.values.resize(numel);
    if (e.dtype == kDtypeF32) {
      for (auto& v : e.values) {
        float f;
        if (!is.read(reinterpret_cast<char*>(&f), sizeof(f)))
          throw std::runtime_error("checkpoint: truncated data for " + e.name + " in " + path);
        v = static_cast<double>(f);
      }
    } else {
      if (!is.read(reinterpret_cast<char*>(e.values.data()),
                   static_cast<std::streamsize>(numel * sizeof(double))))
        throw std::runtime_error("checkpoint: truncated data for " + e.name + " in " + path);
    }
    ck.entries.push_back(std::move(e));
  }
  auto meta_len = detail::read_le<std::uint32_t>(is, "metadata length");
  std::string meta(meta_len, '\0');
  if (!is.read(meta.data(), meta_len))
    throw std::runtime_error("checkpoint: truncated metadata in " + path);
  std::size_t pos = 0;
  while (pos < meta.size()) {
    std::size_t nl = meta.find('\n', pos);
    if (nl == std::string::npos)
      throw std::runtime_error("checkpoint: metadata not newline-terminated in " + path);
    std::string line = meta.substr(pos, nl - pos);
    pos = nl + 1;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("checkpoint: metadata line without '=' in " + path);
    ck.metadata.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw std::runtime_error("checkpoint: trailing bytes in " + path);
  return ck;
}

// Elementwise mean over checkpoints with identical schemas (same entry order,
// names, dtypes and shapes). Metadata records the sources.
inline Checkpoint average_checkpoints(const std::vector<Checkpoint>& cks) {
  if (cks.empty()) throw std::invalid_argument("average_checkpoints: no inputs");
  const Checkpoint& first = cks.front();
  for (const Checkpoint& c : cks) {
    if (c.entries.size() != first.entries.size())
      throw std::runtime_error("average_checkpoints: entry count mismatch");
    for (std::size_t i = 0; i < c.entries.size(); ++i) {
      const auto &a = first.entries[i], &b = c.entries[i];
      if (a.name != b.name || a.shape != b.shape)
        throw std::runtime_error("average_checkpoints: schema mismatch at entry " + a.name);
      if (a.dtype != b.dtype)
        throw std::runtime_error("average_checkpoints: mixed dtypes at entry " + a.name);
    }
  }
  Checkpoint out;
  out.entries = first.entries;
  double k = static_cast<double>(cks.size());
  std::vector<double> addends(cks.size());
  for (std::size_t i = 0; i < out.entries.size(); ++i) {
    auto& vals = out.entries[i].values;
    for (std::size_t j = 0; j < vals.size(); ++j) {
      for (std::size_t c = 0; c < cks.size(); ++c) addends[c] = cks[c].entries[i].values[j];
      // Value-sorted summation makes the mean independent of input order.
      std::sort(addends.begin(), addends.end());
      double sum = 0.0;
      for (double a : addends) sum += a;
      vals[j] = sum / k;
    }
  }
  std::string sources;
  for (const Checkpoint& c : cks) {
    if (!sources.empty()) sources += ",";
    std::string ep = c.meta("epoch");
    sources += ep.empty() ? "?" : ep;
  }
  out.set_meta("variant", first.meta("variant"));
  out.set_meta("averaged_from", std::to_string(cks.size()));
  out.set_meta("source_epochs", sources);
  return out;
}

}  // namespace n2n
