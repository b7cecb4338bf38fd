#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "smk/toy_model.hpp"

namespace smk {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "SMK1" magic, u32 version, u32 n k C H P K layers, then every parameter
/// block as little-endian f64 in for_each_parameter order. lambda_bc is a
/// training setting and is not stored.
std::string encode_checkpoint(const ToyModel<double>& model);
ToyModel<double> decode_checkpoint(const std::string& bytes, double lambda_bc = 0.005,
                                   const std::string& origin = "checkpoint");

void save_checkpoint(const ToyModel<double>& model, const std::filesystem::path& path);
ToyModel<double> load_checkpoint(const std::filesystem::path& path, double lambda_bc = 0.005);

}  // namespace smk
