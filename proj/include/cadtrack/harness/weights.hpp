#pragma once

// CADW weight files:
//   "CADW" | version u32 | count u32 | per tensor:
//   name_len u16 | name | dtype u8 (0 f32, 1 f64) | rank u8 | extents u32 x rank | payload
// All integers and payloads little-endian, payload row-major.

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "cadtrack/harness/image_io.hpp"
#include "cadtrack/nn.hpp"

namespace cadtrack {

inline constexpr std::uint32_t weight_format_version = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

/// One stored tensor. Values are widened to double, which is exact for f32.
struct WeightRecord {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<double> values;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "weight IO assumes a little-endian host");

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& in, const std::string& path) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(U))) throw FormatError(path + ": truncated weight file");
  return v;
}

}  // namespace detail

inline void save_weights(const std::string& path, const std::vector<WeightRecord>& records) {
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.name).second) throw FormatError("save_weights: duplicate tensor name '" + r.name + "'");
    if (r.name.size() > 0xFFFF) throw FormatError("save_weights: name too long");
    if (r.shape.empty() || r.shape.size() > 255 || numel_of(r.shape) != r.values.size()) {
      throw FormatError("save_weights: bad shape for '" + r.name + "'");
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out.write("CADW", 4);
  detail::put<std::uint32_t>(out, weight_format_version);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(r.name.size()));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(r.dtype));
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(r.shape.size()));
    for (auto e : r.shape) detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    for (double v : r.values) {
      if (r.dtype == DType::f32) detail::put<float>(out, static_cast<float>(v));
      else detail::put<double>(out, v);
    }
  }
  if (!out) throw FormatError("write failed for " + path);
}

inline std::vector<WeightRecord> load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "CADW", 4) != 0) throw FormatError(path + ": bad magic, not a CADW file");
  const auto version = detail::get<std::uint32_t>(in, path);
  if (version != weight_format_version) {
    throw FormatError(path + ": unsupported version " + std::to_string(version));
  }
  const auto count = detail::get<std::uint32_t>(in, path);
  std::vector<WeightRecord> records;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    WeightRecord r;
    const auto len = detail::get<std::uint16_t>(in, path);
    r.name.resize(len);
    in.read(r.name.data(), len);
    if (in.gcount() != len) throw FormatError(path + ": truncated weight file");
    if (!seen.insert(r.name).second) throw FormatError(path + ": duplicate tensor name '" + r.name + "'");
    const auto dt = detail::get<std::uint8_t>(in, path);
    if (dt > 1) throw FormatError(path + ": unknown dtype " + std::to_string(dt));
    r.dtype = static_cast<DType>(dt);
    const auto rank = detail::get<std::uint8_t>(in, path);
    if (rank == 0) throw FormatError(path + ": rank-0 tensor '" + r.name + "'");
    for (std::uint8_t k = 0; k < rank; ++k) r.shape.push_back(detail::get<std::uint32_t>(in, path));
    const std::size_t n = numel_of(r.shape);
    r.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      r.values[k] = r.dtype == DType::f32 ? static_cast<double>(detail::get<float>(in, path)) : detail::get<double>(in, path);
    }
    records.push_back(std::move(r));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path + ": trailing bytes after last tensor");
  return records;
}

template <typename P>
std::vector<WeightRecord> to_records(const P& params) {
  using T = typename P::value_type;
  std::vector<WeightRecord> out;
  for_each_param(params, [&](const std::string& name, const Tensor<T>& t) {
    WeightRecord r{name, dtype_of<T>(), t.shape(), {}};
    r.values.assign(t.values().begin(), t.values().end());
    out.push_back(std::move(r));
  });
  return out;
}

/// Copies every stored tensor into the matching parameter. Names and shapes
/// must match exactly; the stored dtype may differ from T.
template <typename P>
void from_records(P& params, const std::vector<WeightRecord>& records) {
  using T = typename P::value_type;
  std::map<std::string, const WeightRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  std::size_t used = 0;
  params.visit(
      [&](const std::string& name, Tensor<T>& t) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("weights: missing tensor '" + name + "'");
        if (it->second->shape != t.shape()) {
          throw FormatError("weights: shape mismatch for '" + name + "': file " + shape_str(it->second->shape) +
                            ", model " + shape_str(t.shape()));
        }
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(it->second->values[i]);
        ++used;
      },
      "");
  if (used != records.size()) throw FormatError("weights: file holds tensors the model does not know");
}

template <typename P>
void save_params(const std::string& path, const P& params) {
  save_weights(path, to_records(params));
}

template <typename P>
void load_params(const std::string& path, P& params) {
  from_records(params, load_weights(path));
}

/// FNV-1a over names, dtype tags, shapes and payload bytes in file order.
inline std::uint64_t weights_checksum(const std::vector<WeightRecord>& records) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& r : records) {
    mix(r.name.data(), r.name.size());
    mix(&r.dtype, 1);
    for (auto e : r.shape) {
      const auto e32 = static_cast<std::uint32_t>(e);
      mix(&e32, 4);
    }
    for (double v : r.values) {
      if (r.dtype == DType::f32) {
        const float f = static_cast<float>(v);
        mix(&f, 4);
      } else {
        mix(&v, 8);
      }
    }
  }
  return h;
}

}  // namespace cadtrack
