#pragma once

// Binary latent store file:
//   "GPLS" | version u32 | N u64 | M u64 | N*M f64 row-major | N x (u32 len, bytes) source ids
// All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <fstream>

#include "gpderain/binary_io.hpp"
#include "gpderain/gp.hpp"

namespace gpderain::gp {

inline constexpr std::uint32_t kLatentStoreVersion = 1;

inline void write_latent_store(std::ostream& out, const LatentStore& store) {
  store.validate();
  out.write("GPLS", 4);
  binio::put<std::uint32_t>(out, kLatentStoreVersion);
  binio::put<std::uint64_t>(out, store.size());
  binio::put<std::uint64_t>(out, store.dim());
  for (const auto& row : store.rows) binio::put_doubles(out, row.values);
  for (const auto& row : store.rows) binio::put_string(out, row.source_id);
}

inline LatentStore read_latent_store(std::istream& in) {
  binio::expect_magic(in, "GPLS", "latent store");
  const auto version = binio::get<std::uint32_t>(in, "latent store version");
  if (version != kLatentStoreVersion)
    fail(ErrorKind::Format, "unsupported latent store version " + std::to_string(version));
  const auto n = binio::get<std::uint64_t>(in, "latent store row count");
  const auto m = binio::get<std::uint64_t>(in, "latent store dimension");
  if (n == 0 || m == 0 || n > (1u << 24) || m > (1u << 24) || n * m > (1ull << 31))
    fail(ErrorKind::Format, "implausible latent store shape " + std::to_string(n) + "x" + std::to_string(m));
  LatentStore store;
  store.rows.resize(n);
  for (auto& row : store.rows) row.values = binio::get_doubles(in, m, "latent store rows");
  for (auto& row : store.rows) row.source_id = binio::get_string(in, "latent store source id");
  return store;
}

inline void save_latent_store(const std::filesystem::path& path, const LatentStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  write_latent_store(out, store);
  if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

inline LatentStore load_latent_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  return read_latent_store(in);
}

}  // namespace gpderain::gp
