#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "winnorm/tensor.hpp"

namespace winnorm {

// "WT4 v1": magic "WT4\0", four little-endian uint32 dims N, C, H, W, then
// N*C*H*W little-endian IEEE-754 float32 values in row-major order.

void write_wt4(std::ostream& os, const Tensor4<float>& t);
Tensor4<float> read_wt4(std::istream& is);

void save_wt4(const std::filesystem::path& path, const Tensor4<float>& t);
Tensor4<float> load_wt4(const std::filesystem::path& path);

/// Byte size of a serialized tensor with the given dims.
constexpr std::size_t wt4_size(const Dims& d) { return 4 + 16 + 4 * d.numel(); }

}  // namespace winnorm
