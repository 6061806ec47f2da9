#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bedexit/imaging.hpp"

namespace bedexit::png {

/// 8-bit RGB bytes of a 3-channel image (value -> round(v * 255)).
std::vector<std::uint8_t> to_rgb8(const imaging::ImageTensor& image);

/// Encodes an 8-bit RGB PNG in memory; output depends only on the pixels.
std::vector<std::uint8_t> encode_rgb8(const imaging::ImageTensor& image);

/// Writes atomically (temp file + rename).
void write_rgb8(const std::filesystem::path& path, const imaging::ImageTensor& image);

/// Reads an 8-bit RGB PNG into [0, 1] floats (byte / 255).
imaging::ImageTensor read_rgb8(const std::filesystem::path& path);

}  // namespace bedexit::png
