#include "ctrlns/container.hpp"

#include "ctrlns/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace ctrlns::io {

namespace {

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::f32:
    case DType::i32:
      return 4;
    case DType::f64:
      return 8;
  }
  return 0;
}

template <typename T>
Array make_array(std::string name, DType dtype, std::vector<std::int64_t> shape, std::span<const T> v) {
  Array a;
  a.name = std::move(name);
  a.dtype = dtype;
  a.shape = std::move(shape);
  if (a.element_count() != static_cast<std::int64_t>(v.size())) {
    throw std::invalid_argument("io::Array: shape does not match element count for " + a.name);
  }
  a.bytes.resize(v.size() * sizeof(T));
  if (!v.empty()) std::memcpy(a.bytes.data(), v.data(), a.bytes.size());
  return a;
}

template <typename T>
std::vector<T> read_as(const Array& a, DType expected) {
  if (a.dtype != expected) {
    throw FormatError("array " + a.name + " has dtype " + std::string(dtype_name(a.dtype)) + ", expected " +
                      std::string(dtype_name(expected)));
  }
  std::vector<T> out(a.bytes.size() / sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), a.bytes.data(), a.bytes.size());
  return out;
}

template <typename T>
void put_le(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("container truncated");
  return v;
}

}  // namespace

std::int64_t Array::element_count() const {
  std::int64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

Array Array::from_f32(std::string name, std::vector<std::int64_t> shape, std::span<const float> v) {
  return make_array(std::move(name), DType::f32, std::move(shape), v);
}
Array Array::from_f64(std::string name, std::vector<std::int64_t> shape, std::span<const double> v) {
  return make_array(std::move(name), DType::f64, std::move(shape), v);
}
Array Array::from_i32(std::string name, std::vector<std::int64_t> shape, std::span<const std::int32_t> v) {
  return make_array(std::move(name), DType::i32, std::move(shape), v);
}

std::vector<float> Array::to_f32() const { return read_as<float>(*this, DType::f32); }
std::vector<double> Array::to_f64() const { return read_as<double>(*this, DType::f64); }
std::vector<std::int32_t> Array::to_i32() const { return read_as<std::int32_t>(*this, DType::i32); }

const Array& Container::array(std::string_view name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw FormatError("container has no array named " + std::string(name));
}

bool Container::has_array(std::string_view name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return true;
  }
  return false;
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
  return fnv1a(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()), seed);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string_view dtype_name(DType d) {
  switch (d) {
    case DType::f32:
      return "float32";
    case DType::f64:
      return "float64";
    case DType::i32:
      return "int32";
  }
  return "?";
}

DType parse_dtype(std::string_view s) {
  if (s == "float32") return DType::f32;
  if (s == "float64") return DType::f64;
  if (s == "int32") return DType::i32;
  throw FormatError("unknown dtype " + std::string(s));
}

void write_container(const std::filesystem::path& path, std::string_view magic, const Container& c) {
  if (magic.size() != 8) throw std::invalid_argument("container magic must be 8 bytes");
  nlohmann::json header = c.header;
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  std::uint64_t digest = 0xcbf29ce484222325ULL;
  for (const auto& a : c.arrays) {
    if (static_cast<std::int64_t>(a.bytes.size()) != a.element_count() * static_cast<std::int64_t>(dtype_size(a.dtype))) {
      throw std::invalid_argument("io::write_container: byte size mismatch for " + a.name);
    }
    entries.push_back({{"name", a.name},
                       {"dtype", dtype_name(a.dtype)},
                       {"shape", a.shape},
                       {"offset", offset},
                       {"nbytes", a.bytes.size()}});
    offset += a.bytes.size();
    digest = fnv1a(a.bytes, digest);
  }
  header["arrays"] = entries;
  header["payload_digest"] = hex64(digest);
  const std::string text = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + tmp.string() + " for writing");
    os.write(magic.data(), 8);
    put_le<std::uint32_t>(os, c.version);
    put_le<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& a : c.arrays) os.write(reinterpret_cast<const char*>(a.bytes.data()), static_cast<std::streamsize>(a.bytes.size()));
    if (!os) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Container read_container(const std::filesystem::path& path, std::string_view magic, std::uint32_t expected_version) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  char m[8];
  is.read(m, 8);
  if (!is || std::string_view(m, 8) != magic) throw FormatError(path.string() + ": bad magic");
  Container c;
  c.version = get_le<std::uint32_t>(is);
  if (c.version != expected_version) {
    throw FormatError(path.string() + ": format version " + std::to_string(c.version) + ", expected " +
                      std::to_string(expected_version));
  }
  const auto hlen = get_le<std::uint64_t>(is);
  if (hlen > (1ULL << 32)) throw FormatError(path.string() + ": implausible header length");
  std::string text(hlen, '\0');
  is.read(text.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw FormatError(path.string() + ": truncated header");
  try {
    c.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": corrupt header: " + e.what());
  }

  std::uint64_t digest = 0xcbf29ce484222325ULL;
  try {
    for (const auto& e : c.header.at("arrays")) {
      Array a;
      a.name = e.at("name").get<std::string>();
      a.dtype = parse_dtype(e.at("dtype").get<std::string>());
      a.shape = e.at("shape").get<std::vector<std::int64_t>>();
      const auto nbytes = e.at("nbytes").get<std::uint64_t>();
      if (static_cast<std::int64_t>(nbytes) != a.element_count() * static_cast<std::int64_t>(dtype_size(a.dtype))) {
        throw FormatError(path.string() + ": inconsistent size for array " + a.name);
      }
      a.bytes.resize(nbytes);
      is.read(reinterpret_cast<char*>(a.bytes.data()), static_cast<std::streamsize>(nbytes));
      if (!is) throw FormatError(path.string() + ": truncated payload in array " + a.name);
      digest = fnv1a(a.bytes, digest);
      c.arrays.push_back(std::move(a));
    }
    if (c.header.at("payload_digest").get<std::string>() != hex64(digest)) {
      throw FormatError(path.string() + ": payload digest mismatch (corrupt file)");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed header: " + e.what());
  }
  c.header.erase("arrays");
  c.header.erase("payload_digest");
  return c;
}

}  // namespace ctrlns::io
