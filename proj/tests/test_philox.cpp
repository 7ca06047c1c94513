#include <doctest.h>

#include <cmath>
#include <cstring>

#include "smseg/decoder.hpp"
#include "smseg/philox.hpp"

using namespace smseg;

TEST_SUITE("philox") {
  TEST_CASE("known answers") {
    CHECK(philox4x32_10({0, 0, 0, 0}, {0, 0}) ==
          PhiloxCounter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    CHECK(philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}) ==
          PhiloxCounter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    CHECK(philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
          PhiloxCounter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
  }

  TEST_CASE("stream layout") {
    const PhiloxStream s(0x0000000500000003ull);
    CHECK(s.block(7) == philox4x32_10({7, 0, 0, 0}, {3, 5}));
    CHECK(s.block(1ull << 33) == philox4x32_10({0, 2, 0, 0}, {3, 5}));
    const auto b = s.block(2);
    const double u1 = (double((std::uint64_t(b[1]) << 32 | b[0]) >> 11) + 0.5) * 0x1p-53;
    const double u2 = (double((std::uint64_t(b[3]) << 32 | b[2]) >> 11) + 0.5) * 0x1p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    CHECK(s.normal(4) == r * std::cos(2.0 * M_PI * u2));
    CHECK(s.normal(5) == r * std::sin(2.0 * M_PI * u2));
    for (std::uint64_t i = 0; i < 1000; ++i) {
      const double u = s.uniform(i);
      CHECK(u > 0.0);
      CHECK(u < 1.0);
    }
  }

  TEST_CASE("normal moments") {
    const PhiloxStream s(42);
    double m = 0, v = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      const double x = s.normal(std::uint64_t(i));
      m += x;
      v += x * x;
    }
    m /= n;
    v = v / n - m * m;
    CHECK(std::abs(m) < 0.05);
    CHECK(std::abs(v - 1.0) < 0.05);
  }

  TEST_CASE("random query block for seed 0") {
    const auto q = make_query_set(Tensor::zeros(DType::f32, {0, 8}), Tensor::zeros(DType::f32, {0, 8}));
    const auto r = inject_random_queries(q, 1, 0, 0.02f);
    const std::uint32_t want[8] = {0xbc024ec5u, 0xbbcb6bb8u, 0x3ce33878u, 0x3bd7c0cfu,
                                   0xbb86dd36u, 0x3cf5366bu, 0xbcc2abb6u, 0x3c40ef6au};
    REQUIRE(r.kr() == 1);
    for (int i = 0; i < 8; ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, &r.random.f32()[std::size_t(i)], 4);
      CHECK(bits == want[i]);
    }
    CHECK(r.random.f32()[0] == doctest::Approx(-0.00795335043));
  }
}
