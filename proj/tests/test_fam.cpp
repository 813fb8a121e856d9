#include <doctest.h>

#include <cmath>
#include <numeric>

#include "faa/fam.hpp"
#include "support/gradient_suite.hpp"

using namespace faa;
using faa::testkit::random_matrix;

TEST_CASE("parameter counts") {
  const FamConfig full_size{512, 512, FamVariant::standard};
  CHECK(fam_param_count(full_size) == 527360);
  CHECK(fam_learnable_count(full_size) == 526336);
  const FamConfig deep{512, 512, FamVariant::deep};
  CHECK(fam_param_count(deep) == 792064);
  const double ratio = static_cast<double>(fam_param_count(deep)) / fam_param_count(full_size);
  CHECK(ratio == doctest::Approx(1.5).epsilon(0.1));
  CHECK(fam_param_count(FamConfig{4, 2, FamVariant::standard}) == 30);

  // independent count straight from the layer shapes
  FeatureAdaptationModule fam(FamConfig{7, 5, FamVariant::deep}, 1);
  CHECK(fam.to_vector().size() == fam_param_count(fam.config()));
  std::size_t learnable = 0;
  for (auto* p : fam.parameters()) learnable += p->value.size();
  CHECK(learnable == fam_learnable_count(fam.config()));
}

TEST_CASE("invalid configurations are rejected") {
  CHECK_THROWS(FeatureAdaptationModule(FamConfig{0, 4, FamVariant::standard}, 0));
  CHECK_THROWS(FeatureAdaptationModule(FamConfig{4, 0, FamVariant::standard}, 0));
}

TEST_CASE("all-zero module gives the uniform mask, so masked features are I / D") {
  const auto fam = FeatureAdaptationModule::zeros(FamConfig{8, 4, FamVariant::standard});
  const Matrix x = random_matrix(3, 8, 2);
  const auto out = fam.forward_eval(x);
  for (double a : out.mask.values()) CHECK(a == doctest::Approx(1.0 / 8.0).epsilon(1e-15));
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(out.masked.values()[i] == doctest::Approx(x.values()[i] / 8.0).epsilon(1e-14));
  }
}

TEST_CASE("mask rows are probability vectors") {
  for (auto variant : {FamVariant::standard, FamVariant::deep}) {
    FeatureAdaptationModule fam(FamConfig{16, 8, variant}, 5);
    const auto out = fam.forward(random_matrix(8, 16, 6), Mode::train);
    for (std::size_t r = 0; r < out.mask.rows(); ++r) {
      double sum = 0;
      for (double a : out.mask.row(r)) {
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
        sum += a;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("forward errors") {
  FeatureAdaptationModule fam(FamConfig{6, 4, FamVariant::standard}, 1);
  CHECK_THROWS_AS(fam.forward(Matrix(4, 5), Mode::eval), DimensionError);
  CHECK_THROWS_AS(fam.forward(Matrix(1, 6, 1.0), Mode::train), DegenerateBatchError);
  CHECK_NOTHROW(fam.forward(Matrix(1, 6, 1.0), Mode::eval));
}

TEST_CASE("flat vector round trip and layout") {
  for (auto variant : {FamVariant::standard, FamVariant::deep}) {
    const FamConfig cfg{6, 4, variant};
    FeatureAdaptationModule a(cfg, 1);
    a.forward(random_matrix(5, 6, 2), Mode::train);  // move running stats
    FeatureAdaptationModule b(cfg, 99);
    b.from_vector(a.to_vector());
    CHECK(b.to_vector() == a.to_vector());
    const Matrix x = random_matrix(4, 6, 3);
    CHECK(b.forward_eval(x).masked == a.forward_eval(x).masked);

    std::vector<double> wrong(a.to_vector().size() + 1);
    CHECK_THROWS_AS(b.from_vector(wrong), DimensionError);
  }
  // standard layout: W1 | b1 | gamma beta mean var | W2 | b2
  FeatureAdaptationModule fam(FamConfig{3, 2, FamVariant::standard}, 4);
  const auto v = fam.to_vector();
  CHECK(v[0] == fam.input_linear().weight.value(0, 0));
  CHECK(v[6] == fam.input_linear().bias.value(0, 0));
  CHECK(v[8] == 1.0);   // gamma
  CHECK(v[10] == 0.0);  // beta
  CHECK(v[12] == 0.0);  // running mean
  CHECK(v[14] == 1.0);  // running var
  CHECK(v[16] == fam.output_linear().weight.value(0, 0));
  CHECK(v.back() == 0.0);
}

TEST_CASE("batch-norm segments cover exactly the BN state") {
  const FamConfig std_cfg{5, 3, FamVariant::standard};
  const auto s = fam_bn_segments(std_cfg);
  REQUIRE(s.size() == 1);
  CHECK(s[0].offset == 5 * 3 + 3);
  CHECK(s[0].length == 12);

  const FamConfig deep{5, 3, FamVariant::deep};
  const auto d = fam_bn_segments(deep);
  REQUIRE(d.size() == 2);
  CHECK(d[1].offset == d[0].offset + 12 + 3 * 3 + 3);
  CHECK(d[1].offset + d[1].length + 3 * 5 + 5 == fam_param_count(deep));

  // running mean/var sit at the tail of each segment
  FeatureAdaptationModule fam(deep, 7);
  const auto before = fam.to_vector();
  fam.forward(random_matrix(6, 5, 8), Mode::train);
  const auto after = fam.to_vector();
  for (std::size_t i = 0; i < before.size(); ++i) {
    bool in_stats = false;
    for (const auto& seg : d) in_stats = in_stats || (i >= seg.offset + 6 && i < seg.offset + seg.length);
    if (!in_stats) CHECK(before[i] == after[i]);
  }
  CHECK(before != after);
}

TEST_CASE("update_running = false leaves the running statistics untouched") {
  FeatureAdaptationModule fam(FamConfig{6, 4, FamVariant::deep}, 2);
  const auto before = fam.to_vector();
  const Matrix x = random_matrix(5, 6, 3);
  const auto a = fam.forward(x, Mode::train, false);
  CHECK(fam.to_vector() == before);
  const auto b = fam.forward(x, Mode::train, true);
  CHECK(a.masked == b.masked);  // same batch statistics either way
  CHECK(fam.to_vector() != before);
}

TEST_CASE("backward accumulates until zero_grad and adam_step clears") {
  FeatureAdaptationModule fam(FamConfig{6, 4, FamVariant::standard}, 2);
  const Matrix x = random_matrix(5, 6, 3);
  const Matrix g = random_matrix(5, 6, 4);
  fam.zero_grad();
  auto out = fam.forward(x, Mode::train);
  fam.backward(out.cache, g);
  const Matrix once = fam.input_linear().weight.grad;
  fam.backward(out.cache, g);
  for (std::size_t i = 0; i < once.size(); ++i) {
    CHECK(fam.input_linear().weight.grad.values()[i] == doctest::Approx(2 * once.values()[i]));
  }
  const auto before = fam.to_vector();
  fam.adam_step(AdamConfig{});
  CHECK(fam.to_vector() != before);
  for (auto* p : fam.parameters())
    for (double v : p->grad.values()) CHECK(v == 0.0);
}

TEST_CASE("same seed, same module") {
  const FamConfig cfg{10, 6, FamVariant::deep};
  CHECK(FeatureAdaptationModule(cfg, 3).to_vector() == FeatureAdaptationModule(cfg, 3).to_vector());
  CHECK(FeatureAdaptationModule(cfg, 3).to_vector() != FeatureAdaptationModule(cfg, 4).to_vector());
}
