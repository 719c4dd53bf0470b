// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsir/container.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

namespace lsir {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_u32(std::FILE* f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  if (std::fwrite(b, 1, 4, f) != 4) throw ValidationError("container write failed");
}

bool read_u32(std::FILE* f, uint32_t* v) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4) return false;
  *v = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
       (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  return true;
}

// Floats are written as their little-endian bit pattern.
void write_f32(std::FILE* f, const float* data, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    uint32_t bits;
    std::memcpy(&bits, &data[i], 4);
    write_u32(f, bits);
  }
}

}  // namespace

void write_container(
    const std::string& path,
    const std::vector<std::pair<std::string, ArrayChunk>>& chunks) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw ValidationError("cannot open for write: " + path);
  if (std::fwrite("LSIR", 1, 4, f.get()) != 4)
    throw ValidationError("container write failed: " + path);
  write_u32(f.get(), kContainerVersion);
  for (const auto& [name, chunk] : chunks) {
    if (chunk.data.size() != chunk.count())
      throw ValidationError("chunk '" + name + "' dims do not match data size");
    write_u32(f.get(), static_cast<uint32_t>(name.size()));
    if (std::fwrite(name.data(), 1, name.size(), f.get()) != name.size())
      throw ValidationError("container write failed: " + path);
    write_u32(f.get(), static_cast<uint32_t>(chunk.dims.size()));
    for (uint32_t d : chunk.dims) write_u32(f.get(), d);
    write_f32(f.get(), chunk.data.data(), chunk.data.size());
  }
}

std::vector<std::pair<std::string, ArrayChunk>> read_container(
    const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw ValidationError("cannot open: " + path);
  char magic[4];
  if (std::fread(magic, 1, 4, f.get()) != 4 ||
      std::memcmp(magic, "LSIR", 4) != 0)
    throw ValidationError("not a model container (bad magic): " + path);
  uint32_t version;
  if (!read_u32(f.get(), &version) || version != kContainerVersion)
    throw ValidationError("unsupported container version in " + path);

  std::vector<std::pair<std::string, ArrayChunk>> out;
  uint32_t name_len;
  while (read_u32(f.get(), &name_len)) {
    if (name_len > (1u << 20))
      throw ValidationError("corrupt chunk name length in " + path);
    std::string name(name_len, '\0');
    if (std::fread(name.data(), 1, name_len, f.get()) != name_len)
      throw ValidationError("truncated chunk name in " + path);
    uint32_t rank;
    if (!read_u32(f.get(), &rank) || rank > 8)
      throw ValidationError("truncated or corrupt chunk '" + name + "' in " +
                            path);
    ArrayChunk chunk;
    chunk.dims.resize(rank);
    for (uint32_t i = 0; i < rank; ++i)
      if (!read_u32(f.get(), &chunk.dims[i]))
        throw ValidationError("truncated dims for chunk '" + name + "' in " +
                              path);
    size_t n = chunk.count();
    chunk.data.resize(n);
    for (size_t i = 0; i < n; ++i) {
      uint32_t bits;
      if (!read_u32(f.get(), &bits))
        throw ValidationError("truncated data for chunk '" + name + "' in " +
                              path);
      std::memcpy(&chunk.data[i], &bits, 4);
    }
    out.emplace_back(std::move(name), std::move(chunk));
  }
  return out;
}

std::map<std::string, ArrayChunk> chunk_map(
    const std::vector<std::pair<std::string, ArrayChunk>>& chunks) {
  std::map<std::string, ArrayChunk> m;
  for (const auto& [name, chunk] : chunks) m[name] = chunk;
  return m;
}

}  // namespace lsir
