// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lsir/core.hpp"

namespace lsir {

// Little-endian chunked array container.
//
//   magic   "LSIR" (4 bytes)
//   version u32 (currently 1)
//   chunks  repeated until EOF:
//             name_len u32, name bytes,
//             rank u32, dims u32[rank],
//             data f32[prod(dims)]
struct ArrayChunk {
  std::vector<uint32_t> dims;
  std::vector<float> data;

  size_t count() const {
    size_t n = 1;
    for (uint32_t d : dims) n *= d;
    return n;
  }
};

inline constexpr uint32_t kContainerVersion = 1;

void write_container(const std::string& path,
                     const std::vector<std::pair<std::string, ArrayChunk>>&
                         chunks);

// Chunk order in the file is preserved via the returned vector; the map view
// is for name lookup.
std::vector<std::pair<std::string, ArrayChunk>> read_container(
    const std::string& path);

std::map<std::string, ArrayChunk> chunk_map(
    const std::vector<std::pair<std::string, ArrayChunk>>& chunks);

}  // namespace lsir
