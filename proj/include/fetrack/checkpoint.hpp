#pragma once

// Binary checkpoint container: named arrays with shape headers and a format
// version. Write/read round-trips are bit-exact (payload bytes preserved).
// Layout (little-endian):
//   u32 magic 'FETK' | u32 version | u32 entry count
//   per entry: u16 name_len | name | u8 dtype (4=f32, 8=f64) | u8 0 |
//              u32 ndim | i64 dims[ndim] | payload
//
// Scalars (model hyperparameters needed to rebuild the network) ride along
// as 1-element f64 arrays under "cfg." names.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fetrack/array.hpp"
#include "fetrack/common.hpp"

namespace fetrack {

constexpr std::uint32_t kCheckpointMagic = 0x4645544Bu;  // "FETK"
constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  Shape shape;
  int dtype = 4;  // bytes per element: 4 = float, 8 = double
  std::vector<unsigned char> raw;

  std::int64_t numel() const { return numel_of(shape); }
};

class Checkpoint {
 public:
  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  const std::map<std::string, CheckpointEntry>& entries() const { return entries_; }

  template <typename T>
  void set(const std::string& name, const DenseArray<T>& a) {
    CheckpointEntry e;
    e.shape = a.shape();
    e.dtype = static_cast<int>(sizeof(T));
    e.raw.resize(static_cast<std::size_t>(a.numel()) * sizeof(T));
    std::memcpy(e.raw.data(), a.data(), e.raw.size());
    entries_[name] = std::move(e);
  }

  void set_scalar(const std::string& name, double v) {
    DenseArray<double> a({1});
    a[0] = v;
    set(name, a);
  }

  double scalar(const std::string& name) const {
    const auto& e = entry(name);
    FETRACK_CHECK_DIM(e.numel() == 1, "checkpoint: '" + name + "' is not a scalar");
    return e.dtype == 8 ? read_as<double>(e, 0) : static_cast<double>(read_as<float>(e, 0));
  }

  // Converts between precisions when the stored dtype differs from T.
  template <typename T>
  DenseArray<T> get(const std::string& name) const {
    const auto& e = entry(name);
    DenseArray<T> a(e.shape);
    if (e.dtype == static_cast<int>(sizeof(T))) {
      std::memcpy(a.data(), e.raw.data(), e.raw.size());
    } else if (e.dtype == 4) {
      for (std::int64_t i = 0; i < a.numel(); ++i) a[i] = static_cast<T>(read_as<float>(e, i));
    } else {
      for (std::int64_t i = 0; i < a.numel(); ++i) a[i] = static_cast<T>(read_as<double>(e, i));
    }
    return a;
  }

  void write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    put_u32(f, kCheckpointMagic);
    put_u32(f, kCheckpointVersion);
    put_u32(f, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, e] : entries_) {
      if (name.size() > 0xFFFF) throw IoError("checkpoint: name too long");
      put_u16(f, static_cast<std::uint16_t>(name.size()));
      f.write(name.data(), static_cast<std::streamsize>(name.size()));
      f.put(static_cast<char>(e.dtype));
      f.put(0);
      put_u32(f, static_cast<std::uint32_t>(e.shape.size()));
      for (auto d : e.shape) put_i64(f, d);
      f.write(reinterpret_cast<const char*>(e.raw.data()),
              static_cast<std::streamsize>(e.raw.size()));
    }
    if (!f) throw IoError("checkpoint write failed: " + path);
  }

  static Checkpoint read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    Checkpoint c;
    if (get_u32(f) != kCheckpointMagic) throw IoError("not a checkpoint file: " + path);
    const std::uint32_t version = get_u32(f);
    if (version != kCheckpointVersion)
      throw IoError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = get_u32(f);
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint16_t name_len = get_u16(f);
      std::string name(name_len, '\0');
      f.read(name.data(), name_len);
      CheckpointEntry e;
      e.dtype = f.get();
      f.get();  // pad
      if (e.dtype != 4 && e.dtype != 8) throw IoError("checkpoint: bad dtype in " + path);
      const std::uint32_t ndim = get_u32(f);
      e.shape.resize(ndim);
      for (std::uint32_t d = 0; d < ndim; ++d) e.shape[d] = get_i64(f);
      e.raw.resize(static_cast<std::size_t>(e.numel()) * static_cast<std::size_t>(e.dtype));
      f.read(reinterpret_cast<char*>(e.raw.data()), static_cast<std::streamsize>(e.raw.size()));
      if (!f) throw IoError("truncated checkpoint: " + path);
      c.entries_[name] = std::move(e);
    }
    return c;
  }

 private:
  std::map<std::string, CheckpointEntry> entries_;

  const CheckpointEntry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IoError("checkpoint: missing array '" + name + "'");
    return it->second;
  }

  template <typename U>
  static U read_as(const CheckpointEntry& e, std::int64_t i) {
    U v;
    std::memcpy(&v, e.raw.data() + static_cast<std::size_t>(i) * sizeof(U), sizeof(U));
    return v;
  }

  static void put_u16(std::ofstream& f, std::uint16_t v) {
    f.write(reinterpret_cast<const char*>(&v), 2);
  }
  static void put_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  static void put_i64(std::ofstream& f, std::int64_t v) {
    f.write(reinterpret_cast<const char*>(&v), 8);
  }
  static std::uint16_t get_u16(std::ifstream& f) {
    std::uint16_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 2);
    return v;
  }
  static std::uint32_t get_u32(std::ifstream& f) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  }
  static std::int64_t get_i64(std::ifstream& f) {
    std::int64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
  }
};

}  // namespace fetrack
