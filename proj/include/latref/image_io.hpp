#pragma once

#include <filesystem>
#include <string>

#include "latref/common.hpp"

namespace latref {

/// Images live in [-1, 1] as float (C, H, W); PNG files are 8-bit.
Tensor to_unit_range(const Tensor& u8_hwc);
Tensor to_u8_hwc(const Tensor& chw);

/// Reads an RGB PNG into (3, H, W) in [-1, 1].
Tensor read_png(const std::filesystem::path& path);
Tensor decode_png(const std::string& bytes);
/// Reads a single-channel PNG as a {0, 1} mask (H, W); nonzero pixels are 1.
Tensor read_mask_png(const std::filesystem::path& path);

/// Writes (3, H, W) in [-1, 1] (values are clamped) as an RGB PNG.
void write_png(const std::filesystem::path& path, const Tensor& chw);
std::string encode_png(const Tensor& chw);
void write_mask_png(const std::filesystem::path& path, const Tensor& mask);

}  // namespace latref
