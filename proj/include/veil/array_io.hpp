#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "veil/tensor.hpp"

namespace veil {

// Binary array container shared by dataset clips, coefficient dumps and
// model checkpoints.
//
// Layout (little-endian):
//   char[8]  magic "VEILARR\0"
//   u32      version (1)
//   u32      entry count
//   u32      metadata length, followed by that many bytes (UTF-8 JSON)
//   per entry:
//     u32 name length, name bytes
//     u8  dtype (1 = float32, 2 = float64)
//     u8  rank, then rank x u64 extents
//     raw element data
struct NamedArray {
  std::string name;
  std::variant<TensorF, TensorD> value;
};

struct ArrayContainer {
  std::string metadata;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

void write_container(const std::filesystem::path& path,
                     const ArrayContainer& container);
ArrayContainer read_container(const std::filesystem::path& path);

// Single float32 array files (one clip per file in a dataset directory).
void save_array(const std::filesystem::path& path, const TensorF& array);
TensorF load_array(const std::filesystem::path& path);

}  // namespace veil
