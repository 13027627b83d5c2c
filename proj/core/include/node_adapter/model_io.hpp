#pragma once

// NAPM model files (little-endian):
//   "NAPM", u8 version = 1, u32 tensor_count,
//   per tensor: u32 name length + UTF-8 name, u32 rows, u32 cols, rows*cols f64 row-major,
//   then u32 length + UTF-8 JSON with the field/training configuration and class names.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "node_adapter/trainer.hpp"

namespace node_adapter::io {

std::vector<std::uint8_t> encode_model(const train::TrainedModel& model);
/// Throws FormatError (with byte offset) on any structural problem.
train::TrainedModel decode_model(std::span<const std::uint8_t> bytes);

void write_model(const train::TrainedModel& model, const std::filesystem::path& path);
train::TrainedModel read_model(const std::filesystem::path& path);

/// The JSON configuration blob stored in the file.
std::string model_config_json(const train::TrainedModel& model);

}  // namespace node_adapter::io
