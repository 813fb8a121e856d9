#include <doctest.h>

#include <cmath>

#include "faa/adversary.hpp"
#include "faa/losses.hpp"
#include "support/gradient_suite.hpp"

using namespace faa;
using faa::testkit::random_matrix;

TEST_CASE("discriminator shape, range and parameter count") {
  const DomainClassifierConfig cfg{12, 10, 6, false};
  DomainClassifier dc(cfg, 1);
  const auto out = dc.forward(random_matrix(8, 12, 2), Mode::train);
  CHECK(out.prob.rows() == 8);
  CHECK(out.prob.cols() == 1);
  for (double p : out.prob.values()) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
  const std::size_t expected = 12 * 10 + 10 + 4 * 10 + 10 * 6 + 6 + 4 * 6 + 6 + 1;
  CHECK(domain_classifier_param_count(cfg) == expected);
  CHECK(dc.to_vector().size() == expected);
  CHECK(domain_classifier_param_count(DomainClassifierConfig{}) ==
        512 * 512 + 512 + 2048 + 512 * 256 + 256 + 1024 + 256 + 1);
}

TEST_CASE("zero-initialized output layer predicts exactly 0.5") {
  DomainClassifier dc(DomainClassifierConfig{6, 5, 4, true}, 3);
  const auto out = dc.forward(random_matrix(4, 6, 4), Mode::train);
  for (double p : out.prob.values()) CHECK(p == 0.5);
  const std::vector<double> labels{1, 1, 0, 0};
  CHECK(da_loss(out.prob, labels).loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("flat vector round trip") {
  const DomainClassifierConfig cfg{6, 5, 4, false};
  DomainClassifier a(cfg, 1);
  a.forward(random_matrix(4, 6, 2), Mode::train);
  DomainClassifier b(cfg, 2);
  b.from_vector(a.to_vector());
  CHECK(b.to_vector() == a.to_vector());
  CHECK_THROWS_AS(b.from_vector(std::vector<double>(3)), DimensionError);
}

TEST_CASE("domain batches are balanced") {
  const auto batch = make_domain_batch(Matrix(3, 4, 1.0), Matrix(3, 4, 2.0));
  CHECK(batch.features.rows() == 6);
  CHECK(batch.labels == std::vector<double>{1, 1, 1, 0, 0, 0});
  CHECK(batch.features(0, 0) == 1.0);
  CHECK(batch.features(5, 0) == 2.0);
  CHECK_NOTHROW(validate_domain_batch(batch));

  CHECK_THROWS(make_domain_batch(Matrix(3, 4), Matrix(2, 4)));
  DomainBatch skewed = batch;
  skewed.labels[3] = 1;
  CHECK_THROWS(validate_domain_batch(skewed));
  DomainBatch odd{Matrix(3, 4), {1, 0, 1}};
  CHECK_THROWS(validate_domain_batch(odd));
}

TEST_CASE("a small discriminator step decreases the domain loss on the same batch") {
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    DomainClassifier dc(DomainClassifierConfig{8, 6, 4, false}, seed);
    const auto batch = make_domain_batch(random_matrix(4, 8, seed + 10), random_matrix(4, 8, seed + 20));
    dc.zero_grad();
    const auto out = dc.forward(batch.features, Mode::train);
    const auto before = da_loss(out.prob, batch.labels);
    dc.backward(out.cache, before.grad);
    AdamConfig adam;
    adam.learning_rate = 1e-3;
    adam.weight_decay = 0.0;
    dc.adam_step(adam);
    const double after = da_loss(dc.forward(batch.features, Mode::train).prob, batch.labels).loss;
    decreased += after < before.loss ? 1 : 0;
  }
  CHECK(decreased == 5);
}

TEST_CASE("gradient reversal: the FAM update raises the domain loss, the discriminator's lowers it") {
  const std::size_t d = 8;
  FeatureAdaptationModule fam(FamConfig{d, 6, FamVariant::standard}, 1);
  DomainClassifier dc(DomainClassifierConfig{d, 6, 4, false}, 2);
  const Matrix xs = random_matrix(6, d, 3);
  const Matrix xt = random_matrix(6, d, 4);
  auto domain_loss = [&] {
    const auto s = fam.forward(xs, Mode::train, false);
    const auto t = fam.forward(xt, Mode::train, false);
    const auto b = make_domain_batch(s.masked, t.masked);
    return da_loss(dc.forward(b.features, Mode::train).prob, b.labels).loss;
  };
  const double l0 = domain_loss();

  fam.zero_grad();
  dc.zero_grad();
  const auto src = fam.forward(xs, Mode::train);
  const auto r = adversarial_backprop(fam, dc, src, xt, 1.0);
  CHECK(r.da_loss == doctest::Approx(l0).epsilon(1e-12));
  CHECK(r.predictions.rows() == 12);

  // plain gradient steps along each accumulated gradient
  const double step = 1e-4;
  auto nudge = [&](std::vector<ParamBlock*> blocks, double sign) {
    for (auto* p : blocks)
      for (std::size_t i = 0; i < p->value.size(); ++i)
        p->value.values()[i] -= sign * step * p->grad.values()[i];
  };
  nudge(fam.parameters(), 1.0);
  const double after_fam = domain_loss();
  nudge(fam.parameters(), -1.0);
  nudge(dc.parameters(), 1.0);
  const double after_dc = domain_loss();
  CHECK(after_fam > l0);
  CHECK(after_dc < l0);
}

TEST_CASE("lambda = 0 sends nothing back to the FAM") {
  FeatureAdaptationModule fam(FamConfig{6, 4, FamVariant::standard}, 1);
  DomainClassifier dc(DomainClassifierConfig{6, 5, 3, false}, 2);
  fam.zero_grad();
  dc.zero_grad();
  const auto src = fam.forward(random_matrix(4, 6, 3), Mode::train);
  adversarial_backprop(fam, dc, src, random_matrix(4, 6, 4), 0.0);
  for (auto* p : fam.parameters())
    for (double v : p->grad.values()) CHECK(v == 0.0);
  double dc_norm = 0;
  for (auto* p : dc.parameters())
    for (double v : p->grad.values()) dc_norm += v * v;
  CHECK(dc_norm > 0.0);
  CHECK_THROWS(adversarial_backprop(fam, dc, src, random_matrix(4, 6, 4), -0.1));
}

TEST_CASE("target rows do not move the FAM's running statistics") {
  FeatureAdaptationModule fam(FamConfig{6, 4, FamVariant::standard}, 1);
  DomainClassifier dc(DomainClassifierConfig{6, 5, 3, false}, 2);
  const auto src = fam.forward(random_matrix(4, 6, 3), Mode::train);
  const auto before = fam.to_vector();
  adversarial_backprop(fam, dc, src, random_matrix(4, 6, 9), 0.5);
  CHECK(fam.to_vector() == before);
}
