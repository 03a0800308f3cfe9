#pragma once

// Sample tensor file:
//   bytes 0..3   magic "MATE"
//   bytes 4..5   format version, uint16 little-endian (1)
//   bytes 6..7   rank, uint16 little-endian (always 4)
//   bytes 8..15  dims T, H, W, d as uint16 little-endian
//   then T*H*W*d float64 little-endian values, t-major then y, x, channel.
//
// Checkpoint file:
//   "MATECKPT", uint32 version, uint32 reserved, uint64 config length, config text,
//   uint64 parameter count, float64 little-endian parameters in DenoiserWeights::pack order.

#include "mate/config.hpp"
#include "mate/mate.hpp"

#include <string>

namespace mate {

inline constexpr std::uint16_t kTensorFormatVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_tensor(const Tensor& tensor);
Tensor decode_tensor(const std::string& bytes);

void write_tensor_file(const std::string& path, const Tensor& tensor);
Tensor read_tensor_file(const std::string& path);

struct Checkpoint {
  RunConfig config;
  DenoiserWeights weights;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mate
