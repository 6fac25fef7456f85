#include "xpol/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "xpol/common.hpp"

namespace xpol {

static_assert(std::endian::native == std::endian::little,
              "archive layout assumes a little-endian host");
static_assert(sizeof(double) == 8 && std::numeric_limits<double>::is_iec559,
              "archive layout assumes IEEE-754 binary64");

namespace {

constexpr char kMagic[8] = {'X', 'P', 'O', 'L', 'C', 'K', 'P', 'T'};

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw IoError("archive: truncated file");
  return v;
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw IoError("archive: truncated file");
  return v;
}

std::string read_bytes(std::istream& is, std::uint64_t n) {
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw IoError("archive: truncated file");
  return s;
}

}  // namespace

void save_archive(const std::filesystem::path& path, const Archive& archive) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("archive: cannot open for writing: " + path.string());
  os.write(kMagic, sizeof kMagic);
  write_u32(os, kArchiveVersion);
  write_u64(os, archive.manifest_json.size());
  os.write(archive.manifest_json.data(),
           static_cast<std::streamsize>(archive.manifest_json.size()));
  write_u64(os, archive.tensors.size());
  for (const auto& [name, t] : archive.tensors) {
    write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, t.shape.size());
    for (std::size_t d : t.shape) write_u64(os, d);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!os) throw IoError("archive: write failed: " + path.string());
}

Archive load_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("archive: cannot open: " + path.string());
  char magic[sizeof kMagic];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw IoError("archive: bad magic: " + path.string());
  }
  const std::uint32_t version = read_u32(is);
  if (version != kArchiveVersion) {
    throw VersionMismatch("archive: version " + std::to_string(version) +
                          ", expected " + std::to_string(kArchiveVersion));
  }
  Archive out;
  out.manifest_json = read_bytes(is, read_u64(is));
  const std::uint64_t count = read_u64(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = read_bytes(is, read_u64(is));
    const std::uint64_t ndim = read_u64(is);
    if (ndim != 2) throw IoError("archive: only rank-2 tensors supported");
    const std::uint64_t rows = read_u64(is);
    const std::uint64_t cols = read_u64(is);
    Tensor t = Tensor::zeros(rows, cols);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!is) throw IoError("archive: truncated tensor payload");
    out.tensors.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace xpol
