#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "consim/types.hpp"

namespace consim {

using Bytes = std::vector<std::uint8_t>;

enum class NpyDtype { kFloat32, kFloat64 };

struct NpyArray {
  Matrix data;
  NpyDtype dtype = NpyDtype::kFloat64;
  bool fortran_order = false;
};

// Decodes a rank-2 little-endian f4/f8 NPY v1.0/2.0 buffer. Fortran-order
// payloads are accepted; `data` is always a regular matrix in row/column
// index terms, so callers never see the on-disk ordering.
NpyArray read_npy(std::span<const std::uint8_t> bytes);

// Encodes as NPY v1.0, '<f8', C-order, header padded to a 64-byte boundary.
Bytes write_npy(const Matrix& matrix);

Matrix read_npy_file(const std::string& path);
void write_npy_file(const std::string& path, const Matrix& matrix);

}  // namespace consim
