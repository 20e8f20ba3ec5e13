#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ddm/matrix.hpp"

namespace ddm {

/// Binary container shared by checkpoints and representation files:
///   magic[4] | version u32 | json length u32 | json bytes |
///   repeated { name length u32 | name bytes | rows u64 | cols u64 | rows*cols f64 }
/// All integers and doubles little-endian. Entries run to end of file.
struct Bundle {
  std::uint32_t version = 1;
  nlohmann::json meta;
  std::vector<std::pair<std::string, DenseMatrix>> entries;
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b;
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> b;
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), 8);
}

class BundleReader {
 public:
  BundleReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw CheckpointError("cannot open " + path.string());
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

  void read(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw CheckpointError(path_.string() + ": truncated while reading " + what);
  }

  std::uint32_t u32(const char* what) {
    std::array<unsigned char, 4> b;
    read(reinterpret_cast<char*>(b.data()), 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }

  std::uint64_t u64(const char* what) {
    std::array<unsigned char, 8> b;
    read(reinterpret_cast<char*>(b.data()), 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  std::uintmax_t remaining() {
    const auto pos = in_.tellg();
    in_.seekg(0, std::ios::end);
    const auto end = in_.tellg();
    in_.seekg(pos);
    return static_cast<std::uintmax_t>(end - pos);
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace detail

inline void write_bundle(const std::filesystem::path& path, const std::array<char, 4>& magic, const Bundle& b) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(magic.data(), 4);
  detail::put_u32(out, b.version);
  const std::string meta = b.meta.dump();
  detail::put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  for (const auto& [name, m] : b.entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u64(out, m.rows());
    detail::put_u64(out, m.cols());
    for (double v : m.values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

/// Reads a bundle; any malformed or truncated content raises CheckpointError.
inline Bundle read_bundle(const std::filesystem::path& path, const std::array<char, 4>& magic,
                          std::uint32_t expected_version) {
  detail::BundleReader r(path);
  std::array<char, 4> got{};
  r.read(got.data(), 4, "magic");
  if (got != magic)
    throw CheckpointError(path.string() + ": bad magic, expected '" + std::string(magic.data(), 4) + "'");
  Bundle b;
  b.version = r.u32("version");
  if (b.version != expected_version)
    throw CheckpointError(path.string() + ": version " + std::to_string(b.version) + " unsupported (expected " +
                          std::to_string(expected_version) + ")");
  const std::uint32_t meta_len = r.u32("config length");
  if (meta_len > r.remaining()) throw CheckpointError(path.string() + ": truncated while reading config");
  std::string meta(meta_len, '\0');
  r.read(meta.data(), meta_len, "config");
  try {
    b.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": malformed config JSON: " + e.what());
  }
  while (!r.at_end()) {
    const std::uint32_t name_len = r.u32("slot name length");
    if (name_len > r.remaining()) throw CheckpointError(path.string() + ": truncated while reading slot name");
    std::string name(name_len, '\0');
    r.read(name.data(), name_len, "slot name");
    const std::uint64_t rows = r.u64("rows");
    const std::uint64_t cols = r.u64("cols");
    if (cols != 0 && rows > r.remaining() / 8 / cols)
      throw CheckpointError(path.string() + ": truncated while reading values of '" + name + "'");
    DenseMatrix m(rows, cols);
    for (double& v : m.values()) v = std::bit_cast<double>(r.u64("values"));
    b.entries.emplace_back(std::move(name), std::move(m));
  }
  return b;
}

}  // namespace ddm
