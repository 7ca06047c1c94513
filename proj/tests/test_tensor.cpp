#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "smseg/tensor.hpp"

using namespace smseg;

namespace {

std::filesystem::path tmp_file(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "smseg_unit";
  std::filesystem::create_directories(dir);
  return dir / name;
}

ErrorCode decode_error(std::vector<std::uint8_t> bytes) {
  try {
    decode_tensor(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("decode succeeded");
  return ErrorCode::io;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("2x2 f32 file is 42 bytes with the documented header") {
    const auto t = Tensor::from_f32({2, 2}, {1, 2, 3, 4});
    const auto bytes = encode_tensor(t);
    REQUIRE(bytes.size() == 42);
    CHECK(std::memcmp(bytes.data(), "SMTF", 4) == 0);
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
    CHECK(bytes[8] == 0);  // dtype f32
    CHECK(bytes[9] == 2);  // rank
    CHECK(bytes[10] == 2);
    CHECK(bytes[18] == 2);
    float v;
    std::memcpy(&v, bytes.data() + 26, 4);
    CHECK(v == 1.0f);
    // 1.0f little-endian
    CHECK(bytes[26] == 0x00);
    CHECK(bytes[29] == 0x3f);
    CHECK(header_size(2) == 26);
  }

  TEST_CASE("u8 ones payload") {
    const auto t = Tensor::from_u8({3, 3}, std::vector<std::uint8_t>(9, 1));
    const auto bytes = encode_tensor(t);
    REQUIRE(bytes.size() == header_size(2) + 9);
    CHECK(bytes[8] == 1);
    for (std::size_t i = header_size(2); i < bytes.size(); ++i) CHECK(bytes[i] == 0x01);
  }

  TEST_CASE("file round trip is bit exact") {
    std::vector<float> data{0.0f, -0.0f, 1e-38f, 3.4e38f, -1.5f, 0.1f};
    const auto t = Tensor::from_f32({1, 2, 3}, data);
    const auto path = tmp_file("rt.smtf");
    save_tensor(t, path);
    const auto u = load_tensor(path);
    CHECK(u == t);
    CHECK(std::memcmp(u.f32().data(), data.data(), data.size() * 4) == 0);
    CHECK(std::filesystem::file_size(path) == header_size(3) + 24);
  }

  TEST_CASE("rank 4 u8 round trip") {
    std::vector<std::uint8_t> d(2 * 3 * 1 * 2);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<std::uint8_t>(i * 17);
    const auto t = Tensor::from_u8({2, 3, 1, 2}, d);
    CHECK(decode_tensor(encode_tensor(t)) == t);
  }

  TEST_CASE("zero extent is representable") {
    const auto t = Tensor::zeros(DType::f32, {0, 16});
    const auto u = decode_tensor(encode_tensor(t));
    CHECK(u.dims() == Dims{0, 16});
    CHECK(u.numel() == 0);
  }

  TEST_CASE("distinct load errors") {
    auto good = encode_tensor(Tensor::from_f32({2}, {1, 2}));
    auto bad = good;
    std::memcpy(bad.data(), "XXXX", 4);
    CHECK(decode_error(bad) == ErrorCode::bad_magic);
    bad = good;
    bad[4] = 2;
    CHECK(decode_error(bad) == ErrorCode::bad_version);
    bad = good;
    bad[8] = 7;
    CHECK(decode_error(bad) == ErrorCode::bad_dtype);
    bad = good;
    bad[9] = 5;
    CHECK(decode_error(bad) == ErrorCode::bad_rank);
    bad = good;
    bad[9] = 0;
    CHECK(decode_error(bad) == ErrorCode::bad_rank);
    bad = good;
    bad.pop_back();
    CHECK(decode_error(bad) == ErrorCode::truncated);
    CHECK(decode_error({'S', 'M', 'T'}) == ErrorCode::truncated);
    bad = good;
    bad.push_back(0);
    CHECK(decode_error(bad) == ErrorCode::trailing_data);
    for (float f : {std::numeric_limits<float>::quiet_NaN(), std::numeric_limits<float>::infinity()}) {
      bad = good;
      std::memcpy(bad.data() + header_size(1), &f, 4);
      CHECK(decode_error(bad) == ErrorCode::non_finite);
    }
  }

  TEST_CASE("load of a missing file is an io error carrying the path") {
    try {
      load_tensor(tmp_file("does_not_exist.smtf"));
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::io);
      CHECK(std::string(e.what()).find("does_not_exist") != std::string::npos);
    }
  }

  TEST_CASE("reshape") {
    const auto t = Tensor::from_f32({1, 6}, {0, 1, 2, 3, 4, 5});
    const auto r = reshape_view(t, {2, 3});
    CHECK(r.dims() == Dims{2, 3});
    CHECK(r.f32()[4] == 4.0f);
    CHECK_THROWS_AS(reshape_view(r, {4, 2}), Error);
    const auto chw = Tensor::zeros(DType::f32, {3, 4, 5});
    CHECK(reshape_view(chw, {3, 20}).dims() == Dims{3, 20});
  }

  TEST_CASE("construction validates") {
    CHECK_THROWS_AS(Tensor::from_f32({2, 2}, {1, 2, 3}), Error);
    CHECK_THROWS_AS(Tensor::zeros(DType::u8, {}), Error);
    CHECK_THROWS_AS(Tensor::zeros(DType::u8, {1, 1, 1, 1, 1}), Error);
    const auto t = Tensor::zeros(DType::u8, {2});
    CHECK_THROWS_AS((void)t.f32(), Error);
  }
}
