#include <doctest.h>

#include <cmath>
#include <random>

#include "smseg/losses.hpp"

using namespace smseg;

namespace {

template <class T>
std::span<const T> sp(const std::vector<T>& v) {
  return {v.data(), v.size()};
}

double ref_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double ref_focal(const std::vector<float>& p, long target, double a, double g) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::min(std::max(double(p[i]), 1e-7), 1 - 1e-7);
    s += long(i) == target ? -a * std::pow(1 - q, g) * std::log(q)
                           : -(1 - a) * std::pow(q, g) * std::log(1 - q);
  }
  return s;
}

double ref_bce(const std::vector<float>& x, const std::vector<std::uint8_t>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = ref_sigmoid(x[i]);
    s += y[i] ? -std::log(p) : -std::log(1 - p);
  }
  return s / double(x.size());
}

double ref_dice(const std::vector<float>& x, const std::vector<std::uint8_t>& y) {
  double i = 0, a = 0, b = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double p = ref_sigmoid(x[k]);
    i += p * y[k];
    a += p;
    b += y[k];
  }
  return 1 - (2 * i + 1) / (a + b + 1);
}

double ref_iou(const std::vector<float>& x, const std::vector<std::uint8_t>& y) {
  double lo = 0, hi = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double p = ref_sigmoid(x[k]);
    lo += std::min(p, double(y[k]));
    hi += std::max(p, double(y[k]));
  }
  return 1 - (lo + 1) / (hi + 1);
}

JointEmbedding eye_embedding(std::size_t ns, std::size_t nu, std::size_t c) {
  std::vector<float> e((ns + nu) * c, 0.0f);
  for (std::size_t n = 0; n < ns + nu; ++n) e[n * c + n] = 1.0f;
  JointEmbedding E;
  E.matrix = Tensor::from_f32({ns + nu, c}, e);
  E.seen_count = ns;
  E.candidate_count = nu;
  return E;
}

// K=2, T=2 fixture on a 2x2 image.
struct Toy {
  Tensor S = Tensor::from_f32({2, 3}, {0.8f, 0.3f, 0.1f, 0.2f, 0.6f, 0.4f});
  Tensor M = Tensor::from_f32({2, 2, 2}, {2.0f, -1.0f, 0.5f, -3.0f, -2.0f, 1.5f, 0.0f, 2.5f});
  TargetSet T = make_targets({0, 1}, Tensor::from_u8({2, 2, 2}, {1, 0, 1, 0, 0, 1, 0, 1}));

  std::vector<float> s(std::size_t k) const {
    return {S.f32().begin() + long(k * 3), S.f32().begin() + long(k * 3 + 3)};
  }
  std::vector<float> m(std::size_t k) const {
    return {M.f32().begin() + long(k * 4), M.f32().begin() + long(k * 4 + 4)};
  }
  std::vector<std::uint8_t> y(std::size_t t) const {
    return {T.masks.u8().begin() + long(t * 4), T.masks.u8().begin() + long(t * 4 + 4)};
  }
};

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("class similarity") {
    const auto E = eye_embedding(2, 1, 3);
    const auto zero = class_similarity(Tensor::zeros(DType::f32, {2, 3}), E);
    for (float v : zero.f32()) CHECK(v == 0.5f);
    const auto s = class_similarity(E.matrix, E);
    CHECK(s.f32()[0] == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(s.f32()[4] == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(s.f32()[1] == 0.5f);
    CHECK_THROWS_AS(class_similarity(Tensor::zeros(DType::f32, {2, 4}), E), Error);
  }

  TEST_CASE("dice") {
    const std::vector<float> m{1, 1, 0, 0};
    const std::vector<float> y{0, 1, 1, 0};
    CHECK(dice_loss(sp(m), sp(m)) == doctest::Approx(0.0));
    CHECK(dice_loss(sp(m), sp(y)) == doctest::Approx(0.4));
    const std::vector<float> a{1, 0}, b{0, 1};
    CHECK(dice_loss(sp(a), sp(b)) == doctest::Approx(2.0 / 3.0));
    CHECK(dice_loss(sp(m), sp(y)) == dice_loss(sp(y), sp(m)));
  }

  TEST_CASE("iou") {
    const std::vector<float> a{1, 0}, b{0, 1}, z{0, 0};
    CHECK(iou_loss(sp(a), sp(a)) == doctest::Approx(0.0));
    CHECK(iou_loss(sp(a), sp(b)) == doctest::Approx(2.0 / 3.0));
    CHECK(iou_loss(sp(z), sp(z)) == 0.0f);
    CHECK(iou_loss(sp(a), sp(b)) == iou_loss(sp(b), sp(a)));
  }

  TEST_CASE("bce") {
    const std::vector<float> zero(9, 0.0f);
    const std::vector<std::uint8_t> y9{1, 0, 1, 0, 1, 0, 1, 0, 1};
    CHECK(bce_mask(sp(zero), sp(y9)) == doctest::Approx(std::log(2.0)));
    const std::vector<float> x{2.0f, -2.0f};
    const std::vector<std::uint8_t> y{1, 0};
    CHECK(bce_mask(sp(x), sp(y)) == doctest::Approx(0.1269).epsilon(1e-3));
    CHECK(bce_mask(sp(x), sp(y)) == doctest::Approx(std::log1p(std::exp(-2.0))));
    const std::vector<float> big{40.0f};
    const std::vector<std::uint8_t> one{1};
    CHECK(bce_mask(sp(big), sp(one)) < 1e-12f);
  }

  TEST_CASE("focal") {
    const std::vector<float> perfect{1.0f, 0.0f, 0.0f};
    CHECK(focal_loss<float>(sp(perfect), 0, 0.25, 2.0) == doctest::Approx(0.0).epsilon(1e-6));
    const std::vector<float> half{0.5f};
    CHECK(focal_loss<float>(sp(half), 0, 0.25, 2.0) == doctest::Approx(0.25 * 0.25 * std::log(2.0)));
    CHECK(focal_loss<float>(sp(half), 0, 0.25, 2.0) == doctest::Approx(0.04333).epsilon(1e-3));
    std::mt19937 rng(2);
    std::uniform_real_distribution<float> u(0.01f, 0.99f);
    for (int it = 0; it < 50; ++it) {
      std::vector<float> p(5);
      for (auto& v : p) v = u(rng);
      const long target = long(rng() % 6) - 1;
      double bce = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i)
        bce += long(i) == target ? -std::log(double(p[i])) : -std::log(1.0 - p[i]);
      const auto t = target < 0 ? std::nullopt : std::optional<std::size_t>(std::size_t(target));
      CHECK(std::abs(focal_loss<float>(sp(p), t, 0.5, 0.0) - 0.5 * bce) < 1e-6 * std::max(1.0, bce));
      CHECK(focal_loss<float>(sp(p), t, 0.25, 2.0) == doctest::Approx(ref_focal(p, target, 0.25, 2.0)).epsilon(1e-5));
      CHECK(focal_loss<float>(sp(p), t, 0.25, 2.0) >= 0.0f);
    }
  }

  TEST_CASE("cross entropy map") {
    const std::vector<float> uniform(4 * 6, 0.3f);
    const std::vector<std::int32_t> labels{0, 1, 2, 3, 0, 1};
    CHECK(cross_entropy_map<float>(sp(uniform), 4, sp(labels), 255) == doctest::Approx(std::log(4.0)));
    std::vector<float> onehot(4 * 6, 0.0f);
    for (std::size_t p = 0; p < 6; ++p) onehot[std::size_t(labels[p]) * 6 + p] = 50.0f;
    CHECK(cross_entropy_map<float>(sp(onehot), 4, sp(labels), 255) < 1e-12f);
    const std::vector<std::int32_t> ignored(6, 255);
    CHECK(cross_entropy_map<float>(sp(uniform), 4, sp(ignored), 255) == 0.0f);
    CHECK(focal_map<float>(sp(uniform), 4, sp(ignored), 255, 0.25, 2.0) == 0.0f);
    const std::vector<std::int32_t> bad{0, 1, 2, 4, 0, 1};
    CHECK_THROWS_AS(cross_entropy_map<float>(sp(uniform), 4, sp(bad), 255), Error);
  }

  TEST_CASE("combiners") {
    CHECK(sm_loss(0.3, 0.2) == doctest::Approx(0.5));
    CHECK(mfe_loss(0.4, 0.1) == doctest::Approx(0.5));
    CHECK(mfe_loss(0.4, 0.1, 0.25) == doctest::Approx(0.75));
    CHECK(total_loss(sm_loss(0.3, 0.2), mfe_loss(0.4, 0.1)) == doctest::Approx(1.0));
  }

  TEST_CASE("cost matrix recomposes from kernel oracles") {
    Toy toy;
    const CostWeights w;
    const auto cm = match_cost_matrix(toy.S, toy.M, toy.T, Group::seen, 3, w);
    REQUIRE(cm.queries == 2);
    REQUIRE(cm.targets == 2);
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t t = 0; t < 2; ++t) {
        const double want = ref_focal(toy.s(k), long(t), 0.25, 2.0) + ref_bce(toy.m(k), toy.y(t)) +
                            ref_dice(toy.m(k), toy.y(t));
        CHECK(cm.at(k, t) == doctest::Approx(want).epsilon(1e-5));
      }
    CostWeights w3 = w;
    w3.w_cls = w3.w_bce = w3.w_dice = 3.0f;
    const auto scaled = match_cost_matrix(toy.S, toy.M, toy.T, Group::seen, 3, w3);
    for (std::size_t i = 0; i < 4; ++i) CHECK(scaled.values[i] == doctest::Approx(3.0 * cm.values[i]).epsilon(1e-6));
    // permuted targets give permuted columns
    const auto swapped = make_targets({1, 0}, Tensor::from_u8({2, 2, 2}, {0, 1, 0, 1, 1, 0, 1, 0}));
    const auto cp = match_cost_matrix(toy.S, toy.M, swapped, Group::seen, 3, w);
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(cp.at(k, 0) == cm.at(k, 1));
      CHECK(cp.at(k, 1) == cm.at(k, 0));
    }
    CHECK_THROWS_AS(match_cost_matrix(toy.S, toy.M, toy.T, Group::candidate, 3, w), Error);
    CHECK_THROWS_AS(match_cost_matrix(toy.S, toy.M, toy.T, Group::seen, 1, w), Error);
  }

  TEST_CASE("perfect single query costs zero") {
    const auto S = Tensor::from_f32({1, 2}, {1.0f, 0.0f});
    const auto M = Tensor::from_f32({1, 1, 3}, {30.0f, -30.0f, 30.0f});
    const auto T = make_targets({0}, Tensor::from_u8({1, 1, 3}, {1, 0, 1}));
    const auto cm = match_cost_matrix(S, M, T, Group::seen, 2, CostWeights{});
    CHECK(cm.values[0] == doctest::Approx(0.0).epsilon(1e-6));
    Assignment a;
    a.pairs = {{0, 0, cm.values[0], Group::seen}};
    CHECK(matched_loss(a, S, M, T, CostWeights{}).total() == doctest::Approx(0.0).epsilon(1e-6));
  }

  TEST_CASE("matched loss recomposes") {
    Toy toy;
    Assignment a;
    a.pairs = {{1, 0, 0.0f, Group::seen}};
    a.unmatched_queries = {0};
    const auto r = matched_loss(a, toy.S, toy.M, toy.T, CostWeights{});
    CHECK(r.matched == 1);
    CHECK(r.unmatched == 1);
    CHECK(r.cls == doctest::Approx(ref_focal(toy.s(1), 0, 0.25, 2.0)).epsilon(1e-5));
    CHECK(r.bce == doctest::Approx(ref_bce(toy.m(1), toy.y(0))).epsilon(1e-5));
    CHECK(r.dice == doctest::Approx(ref_dice(toy.m(1), toy.y(0))).epsilon(1e-5));
    CHECK(r.iou == doctest::Approx(ref_iou(toy.m(1), toy.y(0))).epsilon(1e-5));
    CHECK(r.no_object == doctest::Approx(ref_focal(toy.s(0), -1, 0.25, 2.0)).epsilon(1e-5));

    // no pairs and V = 0: every query scores 0.5 on every class
    const auto S = Tensor::from_f32({2, 3}, std::vector<float>(6, 0.5f));
    Assignment none;
    const auto z = matched_loss(none, S, toy.M, toy.T, CostWeights{});
    CHECK(z.matched == 0);
    CHECK(z.total() == doctest::Approx(ref_focal({0.5f, 0.5f, 0.5f}, -1, 0.25, 2.0)).epsilon(1e-6));
  }

  TEST_CASE("cosine loss") {
    const auto E = eye_embedding(1, 1, 2);
    const auto T = make_targets({1}, Tensor::from_u8({1, 1, 1}, {1}));
    Assignment a;
    a.pairs = {{0, 0, 0.0f, Group::candidate}};
    CHECK(cosine_loss(Tensor::from_f32({1, 2}, {0, 3}), E, T, a) == doctest::Approx(0.0));
    CHECK(cosine_loss(Tensor::from_f32({1, 2}, {2, 0}), E, T, a) == doctest::Approx(1.0));
    CHECK(cosine_loss(Tensor::from_f32({1, 2}, {0, -1}), E, T, a) == doctest::Approx(2.0));
    Assignment seen_only;
    seen_only.pairs = {{0, 0, 0.0f, Group::seen}};
    CHECK(cosine_loss(Tensor::from_f32({1, 2}, {2, 0}), E, T, seen_only) == 0.0);
  }

  TEST_CASE("weights validation") {
    CostWeights w;
    w.w_bce = -1.0f;
    CHECK_THROWS_AS(w.validate(), Error);
    w = CostWeights{};
    w.focal_alpha = 1.0f;
    CHECK_THROWS_AS(w.validate(), Error);
  }
}
