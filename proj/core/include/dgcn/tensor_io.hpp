#pragma once

// Tensor dump format, shared by checkpoints and the dataset cache:
//   "TNSR <dtype> <ndim> <d0> <d1> ...\n" followed by the scalars, row-major,
//   little-endian IEEE-754 (4 bytes for f32, 8 for f64).

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "dgcn/tensor.hpp"

namespace dgcn {

/// A tensor record as stored on disk, before any dtype conversion.
struct TensorRecord {
  DType dtype = DType::f32;
  Shape shape;
  std::vector<std::byte> payload;

  /// Decodes the payload as T. `converted` is set when the stored dtype differs from T.
  template <typename T>
  Tensor<T> to_tensor(bool* converted = nullptr) const;
};

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t);

/// Throws FormatError on a bad tag, malformed header or truncated payload.
TensorRecord read_tensor_record(std::istream& is);

template <typename T>
Tensor<T> read_tensor(std::istream& is, bool* converted = nullptr) {
  return read_tensor_record(is).to_tensor<T>(converted);
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t);

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path);

}  // namespace dgcn
