#pragma once

// Versioned binary container: an 8-byte magic, a little-endian u32 format
// version, a u64 header length, a JSON header, then raw little-endian arrays.
// The header lists each array's name, dtype, shape, byte offset and size,
// plus an FNV-1a digest of the payload.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ctrlns::io {

enum class DType { f32, f64, i32 };

struct Array {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> bytes;

  std::int64_t element_count() const;

  static Array from_f32(std::string name, std::vector<std::int64_t> shape, std::span<const float> v);
  static Array from_f64(std::string name, std::vector<std::int64_t> shape, std::span<const double> v);
  static Array from_i32(std::string name, std::vector<std::int64_t> shape, std::span<const std::int32_t> v);

  std::vector<float> to_f32() const;
  std::vector<double> to_f64() const;
  std::vector<std::int32_t> to_i32() const;
};

struct Container {
  std::uint32_t version = 0;
  nlohmann::json header;
  std::vector<Array> arrays;

  const Array& array(std::string_view name) const;
  bool has_array(std::string_view name) const;
};

/// 64-bit FNV-1a over raw bytes, continuing from `seed`.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

std::string_view dtype_name(DType d);
DType parse_dtype(std::string_view s);

/// Writes atomically (temp file + rename).
void write_container(const std::filesystem::path& path, std::string_view magic, const Container& c);
/// Throws FormatError on bad magic, version mismatch, truncation or payload corruption.
Container read_container(const std::filesystem::path& path, std::string_view magic, std::uint32_t expected_version);

}  // namespace ctrlns::io
