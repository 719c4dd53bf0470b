// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "lsir/core.hpp"

namespace lsir {

// PFM: float32 scanlines, bottom row first, little-endian (negative scale).
// 3-channel maps to "PF", 1-channel to "Pf". Round-trips exactly at float32
// precision, so it is the interchange format for losses and tests.
void write_pfm(const std::string& path, const Image& img);
Image read_pfm(const std::string& path);

// 16-bit PNG, 1 or 3 channels. With gamma_encode the linear values are
// clamped to [0,1] and encoded with exponent 1/2.2 (display tone map);
// without it values are stored linearly (texture maps).
void write_png16(const std::string& path, const Image& img, bool gamma_encode);

// Reads 8- or 16-bit PNG into [0,1]; gamma_decode applies exponent 2.2 to
// recover linear radiance from display-encoded files.
Image read_png16(const std::string& path, bool gamma_decode);

// Dispatches on extension: .pfm passes through linearly, .png decodes with
// gamma 2.2.
Image load_image(const std::string& path);

}  // namespace lsir
