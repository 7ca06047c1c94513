#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "smseg/embeddings.hpp"

using namespace smseg;

namespace {

CandidateMaskSet masks_of(std::size_t h, std::size_t w, std::vector<std::vector<std::size_t>> sets) {
  CandidateMaskSet m;
  m.count = sets.size();
  std::vector<std::uint8_t> d(sets.size() * h * w, 0);
  for (std::size_t u = 0; u < sets.size(); ++u)
    for (auto p : sets[u]) d[u * h * w + p] = 1;
  m.masks = Tensor::from_u8({sets.size(), h, w}, d);
  m.centroids = Tensor::zeros(DType::f32, {sets.size(), 1});
  return m;
}

}  // namespace

TEST_SUITE("embeddings") {
  TEST_CASE("pooling") {
    // 2 x 1 x 3 features: pixel p has (p+1, 2-p)
    const auto O = Tensor::from_f32({2, 1, 3}, {1, 2, 3, 2, 1, 0});
    const auto cu = pool_region_embeddings(O, masks_of(1, 3, {{0}, {0, 1}, {2}}));
    REQUIRE(cu.dim(0) == 3);
    REQUIRE(cu.dim(1) == 2);
    const auto v = cu.f32();
    CHECK(v[0] == doctest::Approx(1 / std::sqrt(5.0)));
    CHECK(v[1] == doctest::Approx(2 / std::sqrt(5.0)));
    CHECK(v[2] == doctest::Approx(std::sqrt(0.5)));  // mean (1.5, 1.5)
    CHECK(v[3] == doctest::Approx(std::sqrt(0.5)));
    CHECK(v[4] == doctest::Approx(1.0));
    CHECK(v[5] == doctest::Approx(0.0));
    const auto constant = pool_region_embeddings(Tensor::from_f32({2, 2, 2}, {3, 3, 3, 3, 4, 4, 4, 4}),
                                                 masks_of(2, 2, {{0, 1, 3}}));
    CHECK(constant.f32()[0] == doctest::Approx(0.6));
    CHECK(constant.f32()[1] == doctest::Approx(0.8));
    CHECK_THROWS_AS(pool_region_embeddings(O, masks_of(2, 2, {{0}})), Error);
  }

  TEST_CASE("candidate import") {
    const auto dir = std::filesystem::temp_directory_path() / "smseg_test_embeddings";
    std::filesystem::create_directories(dir);
    const auto path = dir / "cu.smtf";
    save_tensor(Tensor::zeros(DType::f32, {0, 4}), path);
    CHECK(load_candidate_embeddings(path, 0, 4).dim(0) == 0);
    const auto unit = Tensor::from_f32({2, 2}, {0.6f, 0.8f, 1.0f, 0.0f});
    save_tensor(unit, path);
    const auto back = load_candidate_embeddings(path, 2, 2);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(back.f32()[i] - unit.f32()[i]) <= 1e-6f);
    CHECK_THROWS_AS(load_candidate_embeddings(path, 2, 3), Error);
    CHECK_THROWS_AS(load_candidate_embeddings(path, 3, 2), Error);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("joint embedding") {
    const auto As = Tensor::from_f32({2, 2}, {1, 0, 0, 1});
    const auto E0 = build_joint_embedding(As, Tensor::zeros(DType::f32, {0, 2}));
    CHECK(E0.rows() == 2);
    CHECK(E0.matrix == As);
    const auto E = build_joint_embedding(As, Tensor::from_f32({1, 2}, {0.6f, 0.8f}));
    CHECK(E.rows() == 3);
    CHECK(E.seen_count == 2);
    CHECK(E.is_seen(1));
    CHECK_FALSE(E.is_seen(2));
    CHECK(E.matrix.f32()[4] == 0.6f);
    CHECK(E.matrix.f32()[5] == 0.8f);
    CHECK_THROWS_AS(build_joint_embedding(As, Tensor::zeros(DType::f32, {1, 3})), Error);
  }

  TEST_CASE("normalisation and id sets") {
    const auto n = normalize_rows(Tensor::from_f32({2, 2}, {3, 4, 0, 0}));
    CHECK(n.f32()[0] == doctest::Approx(0.6));
    CHECK(n.f32()[2] == 0.0f);
    const auto s = make_class_embeddings(Tensor::from_f32({2, 2}, {1, 0, 0, 1}), {0, 1});
    const auto u = make_class_embeddings(Tensor::from_f32({1, 2}, {1, 0}), {1});
    CHECK_THROWS_AS(check_disjoint(s, u), Error);
    CHECK_NOTHROW(check_disjoint(s, make_class_embeddings(Tensor::from_f32({1, 2}, {1, 0}), {2})));
    CHECK_THROWS_AS(make_class_embeddings(Tensor::from_f32({2, 2}, {1, 0, 0, 1}), {0}), Error);
  }
}
