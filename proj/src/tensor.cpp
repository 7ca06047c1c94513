#include "smseg/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace smseg {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::io: return "io";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::bad_version: return "bad_version";
    case ErrorCode::bad_dtype: return "bad_dtype";
    case ErrorCode::bad_rank: return "bad_rank";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::trailing_data: return "trailing_data";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::capacity: return "capacity";
    case ErrorCode::group_violation: return "group_violation";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::unsupported: return "unsupported";
    case ErrorCode::config: return "config";
  }
  return "unknown";
}

std::size_t product(const Dims& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

namespace {

void check_rank(const Dims& dims) {
  if (dims.empty() || dims.size() > 4)
    throw Error(ErrorCode::bad_rank, "rank must be in [1,4], got " + std::to_string(dims.size()));
}

std::string dims_str(const Dims& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> b, std::size_t off, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[off + i]) << (8 * i);
  return v;
}

}  // namespace

Tensor Tensor::zeros(DType dtype, Dims dims) {
  check_rank(dims);
  Tensor t(dtype, std::move(dims));
  if (dtype == DType::f32)
    t.f32_.assign(t.numel(), 0.0f);
  else
    t.u8_.assign(t.numel(), 0);
  return t;
}

Tensor Tensor::from_f32(Dims dims, std::vector<float> data) {
  check_rank(dims);
  if (product(dims) != data.size())
    throw Error(ErrorCode::shape_mismatch, "payload of " + std::to_string(data.size()) +
                                               " floats does not fill " + dims_str(dims));
  Tensor t(DType::f32, std::move(dims));
  t.f32_ = std::move(data);
  return t;
}

Tensor Tensor::from_u8(Dims dims, std::vector<std::uint8_t> data) {
  check_rank(dims);
  if (product(dims) != data.size())
    throw Error(ErrorCode::shape_mismatch, "payload of " + std::to_string(data.size()) +
                                               " bytes does not fill " + dims_str(dims));
  Tensor t(DType::u8, std::move(dims));
  t.u8_ = std::move(data);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= dims_.size())
    throw Error(ErrorCode::out_of_range, "axis " + std::to_string(axis) + " of rank-" +
                                             std::to_string(dims_.size()) + " tensor");
  return dims_[axis];
}

std::span<const float> Tensor::f32() const {
  if (dtype_ != DType::f32) throw Error(ErrorCode::bad_dtype, "tensor is not f32");
  return f32_;
}

std::span<float> Tensor::f32() {
  if (dtype_ != DType::f32) throw Error(ErrorCode::bad_dtype, "tensor is not f32");
  return f32_;
}

std::span<const std::uint8_t> Tensor::u8() const {
  if (dtype_ != DType::u8) throw Error(ErrorCode::bad_dtype, "tensor is not u8");
  return u8_;
}

std::span<std::uint8_t> Tensor::u8() {
  if (dtype_ != DType::u8) throw Error(ErrorCode::bad_dtype, "tensor is not u8");
  return u8_;
}

Tensor Tensor::reshaped(Dims dims) const {
  check_rank(dims);
  if (product(dims) != numel())
    throw Error(ErrorCode::shape_mismatch,
                "cannot reshape " + dims_str(dims_) + " to " + dims_str(dims));
  Tensor t = *this;
  t.dims_ = std::move(dims);
  return t;
}

bool Tensor::operator==(const Tensor& other) const {
  if (dtype_ != other.dtype_ || dims_ != other.dims_) return false;
  if (dtype_ == DType::u8) return u8_ == other.u8_;
  return f32_.size() == other.f32_.size() &&
         (f32_.empty() ||
          std::memcmp(f32_.data(), other.f32_.data(), f32_.size() * sizeof(float)) == 0);
}

Tensor reshape_view(const Tensor& t, Dims dims) { return t.reshaped(std::move(dims)); }

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::vector<std::uint8_t> out;
  const std::size_t elem = t.dtype() == DType::f32 ? 4 : 1;
  out.reserve(header_size(t.rank()) + elem * t.numel());
  for (char c : {'S', 'M', 'T', 'F'}) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, kSmtfVersion);
  out.push_back(static_cast<std::uint8_t>(t.dtype()));
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.dims()) put_u64(out, d);
  if (t.dtype() == DType::f32) {
    for (float v : t.f32()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  } else {
    auto p = t.u8();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  if (std::memcmp(bytes.data(), "SMTF", std::min<std::size_t>(bytes.size(), 4)) != 0)
    throw Error(ErrorCode::bad_magic, "missing SMTF magic");
  if (bytes.size() < 4) throw Error(ErrorCode::truncated, "file shorter than the magic");
  if (bytes.size() < 10) throw Error(ErrorCode::truncated, "header shorter than 10 bytes");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (version != kSmtfVersion)
    throw Error(ErrorCode::bad_version, "unsupported version " + std::to_string(version));
  const std::uint8_t code = bytes[8];
  if (code > 1) throw Error(ErrorCode::bad_dtype, "unknown dtype code " + std::to_string(code));
  const auto dtype = static_cast<DType>(code);
  const std::size_t rank = bytes[9];
  if (rank < 1 || rank > 4) throw Error(ErrorCode::bad_rank, "rank " + std::to_string(rank));
  if (bytes.size() < header_size(rank)) throw Error(ErrorCode::truncated, "dims truncated");
  Dims dims(rank);
  for (std::size_t i = 0; i < rank; ++i) dims[i] = get_le(bytes, 10 + 8 * i, 8);

  const std::size_t n = product(dims);
  const std::size_t elem = dtype == DType::f32 ? 4 : 1;
  const std::size_t body = bytes.size() - header_size(rank);
  if (body < n * elem)
    throw Error(ErrorCode::truncated, "payload has " + std::to_string(body) + " bytes, need " +
                                          std::to_string(n * elem));
  if (body > n * elem) throw Error(ErrorCode::trailing_data, "bytes after payload");

  const std::size_t off = header_size(rank);
  if (dtype == DType::u8)
    return Tensor::from_u8(std::move(dims),
                           std::vector<std::uint8_t>(bytes.begin() + off, bytes.end()));
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, off + 4 * i, 4)));
    if (!std::isfinite(data[i]))
      throw Error(ErrorCode::non_finite, "element " + std::to_string(i) + " is NaN or Inf");
  }
  return Tensor::from_f32(std::move(dims), std::move(data));
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
  const auto bytes = encode_tensor(t);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::io, "cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error(ErrorCode::io, "write failed for " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

}  // namespace smseg
