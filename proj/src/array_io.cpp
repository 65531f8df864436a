#include "veil/array_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace veil {
namespace {

static_assert(std::endian::native == std::endian::little,
              "array container I/O assumes a little-endian host");

constexpr char kMagic[8] = {'V', 'E', 'I', 'L', 'A', 'R', 'R', '\0'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kFloat32 = 1;
constexpr std::uint8_t kFloat64 = 2;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated array container: " + path.string());
  return v;
}

std::string get_bytes(std::istream& in, std::size_t n,
                      const std::filesystem::path& path) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw IoError("truncated array container: " + path.string());
  return s;
}

template <typename T>
void put_tensor(std::ostream& out, const Tensor<T>& t, std::uint8_t dtype) {
  put(out, dtype);
  put(out, static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) put(out, static_cast<std::uint64_t>(d));
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(T)));
}

template <typename T>
Tensor<T> get_tensor(std::istream& in, const Shape& shape,
                     const std::filesystem::path& path) {
  std::vector<T> data(shape_size(shape));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!in) throw IoError("truncated array data in " + path.string());
  return Tensor<T>(shape, std::move(data));
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

const NamedArray* ArrayContainer::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

void write_container(const std::filesystem::path& path,
                     const ArrayContainer& container) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put(out, kVersion);
  put(out, static_cast<std::uint32_t>(container.arrays.size()));
  put(out, static_cast<std::uint32_t>(container.metadata.size()));
  out.write(container.metadata.data(),
            static_cast<std::streamsize>(container.metadata.size()));
  for (const auto& entry : container.arrays) {
    put(out, static_cast<std::uint32_t>(entry.name.size()));
    out.write(entry.name.data(), static_cast<std::streamsize>(entry.name.size()));
    if (const auto* f = std::get_if<TensorF>(&entry.value)) {
      put_tensor(out, *f, kFloat32);
    } else {
      put_tensor(out, std::get<TensorD>(entry.value), kFloat64);
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

ArrayContainer read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open array container: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not an array container (bad magic): " + path.string());
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion) {
    throw IoError("unsupported container version " + std::to_string(version) +
                  ": " + path.string());
  }
  const auto count = get<std::uint32_t>(in, path);
  const auto meta_len = get<std::uint32_t>(in, path);
  ArrayContainer c;
  c.metadata = get_bytes(in, meta_len, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray entry;
    entry.name = get_bytes(in, get<std::uint32_t>(in, path), path);
    const auto dtype = get<std::uint8_t>(in, path);
    const auto rank = get<std::uint8_t>(in, path);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in, path));
    if (dtype == kFloat32) {
      entry.value = get_tensor<float>(in, shape, path);
    } else if (dtype == kFloat64) {
      entry.value = get_tensor<double>(in, shape, path);
    } else {
      throw IoError("unknown dtype code " + std::to_string(dtype) + " in " +
                    path.string());
    }
    c.arrays.push_back(std::move(entry));
  }
  return c;
}

void save_array(const std::filesystem::path& path, const TensorF& array) {
  ArrayContainer c;
  c.arrays.push_back({"array", array});
  write_container(path, c);
}

TensorF load_array(const std::filesystem::path& path) {
  auto c = read_container(path);
  if (c.arrays.size() != 1) {
    throw IoError("expected a single array in " + path.string());
  }
  if (auto* f = std::get_if<TensorF>(&c.arrays.front().value)) {
    return std::move(*f);
  }
  throw IoError("expected float32 array in " + path.string());
}

}  // namespace veil
