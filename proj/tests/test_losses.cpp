#include <doctest.h>

#include <cmath>

#include "faa/losses.hpp"
#include "support/gradient_suite.hpp"

using namespace faa;
using faa::testkit::random_matrix;

TEST_CASE("uniform similarity gives contrastive loss ln B") {
  for (std::size_t b : {1u, 2u, 4u, 32u}) {
    for (double value : {0.0, 0.3, -1.0}) {
      const auto r = contrastive_loss(Matrix(b, b, value), Temperature{});
      CHECK(std::abs(r.loss - std::log(static_cast<double>(b))) <= 1e-9);
    }
  }
}

TEST_CASE("contrastive loss basics") {
  // strongly diagonal similarities drive the loss toward zero
  Matrix s(4, 4, -1.0);
  for (std::size_t i = 0; i < 4; ++i) s(i, i) = 1.0;
  CHECK(contrastive_loss(s, Temperature{}).loss < 1e-60);
  CHECK_THROWS_AS(contrastive_loss(Matrix(3, 2), Temperature{}), DimensionError);
  CHECK_THROWS(contrastive_loss(Matrix(2, 2), Temperature{0.0}));

  // adding a constant to every similarity changes nothing, so the gradient
  // sums to zero
  const auto r = contrastive_loss(random_matrix(5, 5, 1), Temperature::from_logit_scale(10.0));
  double total = 0;
  for (double g : r.grad.values()) total += g;
  CHECK(std::abs(total) < 1e-12);
}

TEST_CASE("two-sample contrastive loss by hand") {
  const Matrix s{{0.9, 0.1}, {0.2, 0.5}};
  const double scale = 10.0;
  auto lse = [](double a, double b) { return std::log(std::exp(a) + std::exp(b)); };
  const double rows = (lse(9, 1) - 9) + (lse(2, 5) - 5);
  const double cols = (lse(9, 2) - 9) + (lse(1, 5) - 5);
  const double expected = 0.5 * (rows / 2 + cols / 2);
  CHECK(contrastive_loss(s, Temperature::from_logit_scale(scale)).loss == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("all-0.5 domain predictions give ln 2") {
  for (std::size_t n : {2u, 8u, 64u}) {
    std::vector<double> z(n, 0.0);
    for (std::size_t i = 0; i < n / 2; ++i) z[i] = 1.0;
    CHECK(std::abs(da_loss(Matrix(n, 1, 0.5), z).loss - std::log(2.0)) <= 1e-9);
  }
}

TEST_CASE("domain loss clamps saturated predictions") {
  const std::vector<double> z{1, 0};
  const auto r = da_loss(Matrix{{0.0}, {1.0}}, z);
  CHECK(std::isfinite(r.loss));
  CHECK(r.loss == doctest::Approx(-std::log(kProbabilityClamp)).epsilon(1e-9));
  for (double g : r.grad.values()) CHECK(std::isfinite(g));
  CHECK_THROWS_AS(da_loss(Matrix(2, 2), z), DimensionError);
}

TEST_CASE("cosine similarity") {
  const Matrix q{{1, 0}, {1, 1}};
  const Matrix t{{2, 0}, {0, 3}};
  const Matrix s = cosine_similarity(q, t);
  CHECK(s(0, 0) == doctest::Approx(1.0));
  CHECK(s(0, 1) == doctest::Approx(0.0));
  CHECK(s(1, 0) == doctest::Approx(std::sqrt(0.5)));
  CHECK_THROWS_AS(cosine_similarity(Matrix{{0, 0}}, t), DegenerateVectorError);
  CHECK_THROWS_AS(cosine_similarity(q, Matrix{{0, 0}}), DegenerateVectorError);
  CHECK_THROWS_AS(cosine_similarity(q, Matrix(2, 3, 1.0)), DimensionError);
  // scale invariance
  Matrix q2 = q;
  scale_in_place(q2, 7.5);
  CHECK(cosine_similarity(q2, t) == s);
}

TEST_CASE("class probabilities") {
  const std::vector<double> row{0.2, 0.1, -0.3};
  const auto p = class_probabilities(row, Temperature{});
  CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(p[0] > p[1]);
  CHECK(p[0] / p[1] == doctest::Approx(std::exp(10.0)));
  const std::vector<double> equal{0.4, 0.4};
  CHECK(class_probabilities(equal, Temperature{})[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(Temperature::from_logit_scale(100.0).tau == doctest::Approx(0.01));
}
