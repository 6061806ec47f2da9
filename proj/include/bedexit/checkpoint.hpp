#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "bedexit/fusion_model.hpp"

namespace bedexit::checkpoint {

// Layout (all integers little-endian):
//   magic "BXFC" | u32 version | u32 n_config | n_config x (str key, str value)
//   | u32 n_tensors | n_tensors x (str name, u32 rank, rank x u32 dim, prod(dims) x f32)
// where str = u32 byte length followed by the bytes.
inline constexpr char kMagic[4] = {'B', 'X', 'F', 'C'};
inline constexpr std::uint32_t kVersion = 1;

std::string serialize(const model::ModelParams<float>& params);

/// Parses and validates a checkpoint; every tensor must match the layout implied by the
/// stored config. Throws Error(checkpoint) naming the offending tensor.
model::ModelParams<float> deserialize(std::string_view bytes);

void save(const std::filesystem::path& path, const model::ModelParams<float>& params);
model::ModelParams<float> load(const std::filesystem::path& path);

/// Throws Error(checkpoint) when `params` cannot serve `expected`: a tensor name or shape
/// differs, or any config field other than dropout differs.
void check_compatible(const model::ModelParams<float>& params, const model::ModelConfig& expected);

}  // namespace bedexit::checkpoint
