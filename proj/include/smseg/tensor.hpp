#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "smseg/error.hpp"

namespace smseg {

enum class DType : std::uint8_t { f32 = 0, u8 = 1 };

using Dims = std::vector<std::size_t>;

std::size_t product(const Dims& dims);

/// Dense row-major array of f32 or u8 values, rank 1..4.
///
/// Zero extents are allowed so that empty sets (U = 0 candidates) have a
/// representation; such tensors carry an empty payload.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(DType dtype, Dims dims);
  static Tensor from_f32(Dims dims, std::vector<float> data);
  static Tensor from_u8(Dims dims, std::vector<std::uint8_t> data);

  DType dtype() const noexcept { return dtype_; }
  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return product(dims_); }
  bool empty() const noexcept { return numel() == 0; }

  std::span<const float> f32() const;
  std::span<float> f32();
  std::span<const std::uint8_t> u8() const;
  std::span<std::uint8_t> u8();

  /// Same payload, new extents. Throws shape_mismatch on element-count change.
  Tensor reshaped(Dims dims) const;

  /// Bitwise equality of dtype, dims and payload.
  bool operator==(const Tensor& other) const;

 private:
  Tensor(DType dtype, Dims dims) : dtype_(dtype), dims_(std::move(dims)) {}

  DType dtype_ = DType::f32;
  Dims dims_{0};
  std::vector<float> f32_;
  std::vector<std::uint8_t> u8_;
};

Tensor reshape_view(const Tensor& t, Dims dims);

/// Writes the SMTF container:
///   "SMTF" | u32 version (=1) | u8 dtype | u8 rank | rank x u64 dims | payload
/// All integers and floats little-endian, payload row-major.
void save_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

inline constexpr std::uint32_t kSmtfVersion = 1;
inline constexpr std::size_t header_size(std::size_t rank) { return 10 + 8 * rank; }

}  // namespace smseg
