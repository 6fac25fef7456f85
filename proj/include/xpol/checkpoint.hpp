#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "xpol/tensor.hpp"

namespace xpol {

inline constexpr std::uint32_t kArchiveVersion = 1;

// Named-tensor archive with a free-form JSON manifest. The on-disk layout
// is fixed little-endian f64, so a load/save round trip is bit-exact.
struct Archive {
  std::string manifest_json = "{}";
  std::map<std::string, Tensor> tensors;
};

// Throws IoError on filesystem/format problems and VersionMismatch when
// the file was written by an incompatible version.
void save_archive(const std::filesystem::path& path, const Archive& archive);
Archive load_archive(const std::filesystem::path& path);

}  // namespace xpol
