#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "faa/experiment.hpp"
#include "faa/federation.hpp"
#include "faa/random.hpp"
#include "support/gradient_suite.hpp"

using namespace faa;
using faa::testkit::random_matrix;

namespace {

SyntheticBlock small_block() {
  SyntheticBlock b;
  b.generator.num_classes = 4;
  b.generator.feature_dim = 12;
  b.generator.num_domains = 3;
  b.generator.samples_per_class = 20;
  b.generator.target_samples_per_class = 20;
  b.generator.shift = 0.5;
  b.generator.shift_dims = 3;
  b.generator.noise_sigma = 0.1;
  return b;
}

FLRunConfig small_run() {
  FLRunConfig cfg;
  cfg.rounds = 3;
  cfg.batch_size = 8;
  cfg.dc_hidden1 = 10;
  cfg.dc_hidden2 = 6;
  cfg.logit_scale = 10.0;
  cfg.adam.learning_rate = 1e-3;
  return cfg;
}

std::vector<double> oracle_mean(const std::vector<std::vector<double>>& v) {
  std::vector<double> out(v.front().size(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0;
    for (const auto& x : v) s += x[i];
    out[i] = s / static_cast<double>(v.size());
  }
  return out;
}

std::vector<std::vector<double>> random_vectors(std::size_t n, std::size_t len, std::uint64_t seed) {
  auto rng = make_rng(seed, {});
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> v(n, std::vector<double>(len));
  for (auto& x : v)
    for (auto& e : x) e = normal(rng) * std::pow(10.0, static_cast<int>(rng() % 7) - 3);
  return v;
}

}  // namespace

TEST_CASE("aggregation") {
  SUBCASE("matches a plain summation within 1e-12") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto v = random_vectors(2 + seed % 5, 200, seed);
      const auto got = aggregate(v);
      const auto want = oracle_mean(v);
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12 * std::max(1.0, std::abs(want[i])));
    }
  }
  SUBCASE("client order does not matter, bit for bit") {
    auto v = random_vectors(5, 300, 3);
    const auto base = aggregate(v);
    auto rng = make_rng(4, {});
    for (int k = 0; k < 10; ++k) {
      shuffle_in_place(v, rng);
      CHECK(aggregate(v) == base);
    }
  }
  SUBCASE("one client is the identity and identical clients are a fixed point") {
    const auto v = random_vectors(1, 100, 5);
    CHECK(aggregate(v) == v[0]);
    for (std::size_t n : {2u, 3u, 7u, 10u}) {
      const std::vector<std::vector<double>> same(n, v[0]);
      CHECK(aggregate(same) == v[0]);
    }
  }
  CHECK_THROWS(aggregate(std::vector<std::vector<double>>{}));
  CHECK_THROWS_AS(aggregate(std::vector<std::vector<double>>{{1, 2}, {1}}), DimensionError);
}

TEST_CASE("broadcast with and without local batch norm") {
  const FamConfig cfg{6, 4, FamVariant::deep};
  std::vector<ClientState> clients;
  for (std::size_t i = 0; i < 3; ++i) {
    clients.push_back({i, FeatureAdaptationModule(cfg, 10 + i), DomainClassifier({6, 5, 3, false}, i)});
    clients.back().fam.forward(random_matrix(5, 6, i), Mode::train);
  }
  std::vector<std::vector<double>> own;
  for (const auto& c : clients) own.push_back(c.fam.to_vector());
  const auto global = FeatureAdaptationModule(cfg, 99).to_vector();

  auto local = clients;
  broadcast(global, local, true);
  const auto segs = fam_bn_segments(cfg);
  for (std::size_t c = 0; c < local.size(); ++c) {
    const auto v = local[c].fam.to_vector();
    for (std::size_t i = 0; i < v.size(); ++i) {
      bool in_bn = false;
      for (const auto& s : segs) in_bn = in_bn || (i >= s.offset && i < s.offset + s.length);
      CHECK(v[i] == (in_bn ? own[c][i] : global[i]));
    }
  }
  auto shared = clients;
  broadcast(global, shared, false);
  for (const auto& c : shared) CHECK(c.fam.to_vector() == global);
  CHECK_THROWS_AS(broadcast(std::vector<double>(5), shared, false), DimensionError);
}

TEST_CASE("communication ledger") {
  CommLedger ledger;
  ledger.fam_params = 527360;
  ledger.record_round(1, 4, 0.5);
  ledger.record_round(2, 4, 0.5);
  CHECK(ledger.per_round_total() == 2 * 4 * 527360);
  CHECK(ledger.total_uploaded() == 2 * 4 * 527360);
  CHECK(ledger.total_downloaded() == 2 * 4 * 527360);
  ledger.dc_params = 100;
  ledger.record_round(3, 4, 0.5);
  CHECK(ledger.per_round_total() == 2 * 4 * (527360 + 100));
  CHECK(ledger.rounds.size() == 3);
}

TEST_CASE("one local epoch lowers the training contrastive loss") {
  int lowered = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto block = small_block();
    block.generator.samples_per_class = 16;  // 64 samples on one client
    block.split = {1.0, 0.0, 0.0};
    const auto data = build_synthetic_federation(block, seed);
    auto cfg = small_run();
    cfg.enable_da = false;
    const FamConfig fc = cfg.fam_config(12);
    ClientState client{0, FeatureAdaptationModule(fc, seed), DomainClassifier(cfg.dc_config(12), seed)};
    const auto& train = data.clients[0].train;
    REQUIRE(train.size() == 64);
    auto loss_of = [&](const FeatureAdaptationModule& fam) {
      const Matrix texts = [&] {
        std::vector<std::size_t> rows(train.labels.begin(), train.labels.end());
        return gather_rows(data.prompt_bank, rows);
      }();
      FeatureAdaptationModule probe = fam;
      const auto out = probe.forward(train.features, Mode::train, false);
      return contrastive_loss(cosine_similarity(out.masked, texts), cfg.temperature()).loss;
    };
    const double before = loss_of(client.fam);
    auto src = make_rng(seed, {1});
    auto tgt = make_rng(seed, {2});
    const auto stats = local_train_epoch(client, train, data.prompt_bank, data.target_pool, cfg, src, tgt);
    CHECK(stats.batches == 8);
    CHECK_FALSE(stats.loss_da.has_value());
    lowered += loss_of(client.fam) < before ? 1 : 0;
  }
  CHECK(lowered >= 3);
}

TEST_CASE("local epoch details") {
  const auto data = build_synthetic_federation(small_block(), 1);
  auto cfg = small_run();
  const FamConfig fc = cfg.fam_config(12);
  ClientState client{0, FeatureAdaptationModule(fc, 1), DomainClassifier(cfg.dc_config(12), 1)};

  LabeledSplit nine{take_rows(data.clients[0].train.features, 0, 9),
                    {data.clients[0].train.labels.begin(), data.clients[0].train.labels.begin() + 9}};
  auto src = make_rng(1, {1});
  auto tgt = make_rng(1, {2});
  const auto stats = local_train_epoch(client, nine, data.prompt_bank, data.target_pool, cfg, src, tgt);
  CHECK(stats.batches == 1);  // 8 + a dropped singleton
  REQUIRE(stats.loss_da.has_value());
  CHECK(*stats.loss_da > 0.0);

  // a target pool smaller than the demand is sampled with replacement
  const Matrix tiny_pool = take_rows(data.target_pool, 0, 3);
  CHECK_NOTHROW(local_train_epoch(client, data.clients[0].train, data.prompt_bank, tiny_pool, cfg, src, tgt));
  CHECK_THROWS(local_train_epoch(client, data.clients[0].train, data.prompt_bank, Matrix(), cfg, src, tgt));
}

TEST_CASE("federated run: logs, ledger and best rounds") {
  const auto data = build_synthetic_federation(small_block(), 2);
  auto cfg = small_run();
  const auto r = run_federated(cfg, data);
  const std::size_t splits = 2 * 3 + 1;
  CHECK(r.metrics.size() == (cfg.rounds + 1) * splits);
  for (const auto& m : r.metrics) {
    CHECK(m.metrics.acc >= 0.0);
    CHECK(m.metrics.acc <= 1.0);
    if (m.round == 0) CHECK_FALSE(m.loss_contr.has_value());
    if (m.round > 0 && m.split != kGlobalSplit) CHECK(m.loss_da.has_value());
    CHECK(m.comm_uploaded == m.round * 3 * r.ledger.fam_params);
  }
  CHECK(r.ledger.fam_params == fam_param_count(cfg.fam_config(12)));
  CHECK(r.ledger.dc_params == 0);
  CHECK(r.ledger.rounds.size() == cfg.rounds);
  for (const auto& rc : r.ledger.rounds) {
    CHECK(rc.uploaded == 3 * r.ledger.fam_params);
    CHECK(rc.downloaded == 3 * r.ledger.fam_params);
  }
  CHECK(r.best.size() == splits);
  for (const auto& [split, best] : r.best) {
    double max_acc = -1;
    std::size_t first = 0;
    for (const auto& m : r.metrics)
      if (m.split == split && m.metrics.acc > max_acc) {
        max_acc = m.metrics.acc;
        first = m.round;
      }
    CHECK(best.round == first);
    CHECK(best.metrics.acc == max_acc);
  }
  // clients hold the broadcast global vector after the last round
  for (const auto& c : r.clients) CHECK(c.fam.to_vector() == r.final_global);

  auto bad = cfg;
  bad.n_clients = 5;
  CHECK_THROWS(run_federated(bad, data));
}

TEST_CASE("ablation flags") {
  const auto data = build_synthetic_federation(small_block(), 3);
  const auto base = small_run();

  SUBCASE("serial and parallel execution agree bit for bit") {
    auto par = base;
    par.threads = 3;
    const auto a = run_federated(base, data);
    const auto b = run_federated(par, data);
    CHECK(a.final_global == b.final_global);
    CHECK(format_metrics_log(a) == format_metrics_log(b));
  }
  SUBCASE("lambda = 0 trains the FAM exactly as with DA disabled") {
    auto zero = base;
    zero.lambda = 0.0;
    auto off = base;
    off.enable_da = false;
    const auto a = run_federated(zero, data);
    const auto b = run_federated(off, data);
    CHECK(a.final_global == b.final_global);
    REQUIRE(a.metrics.size() == b.metrics.size());
    for (std::size_t i = 0; i < a.metrics.size(); ++i) {
      CHECK(a.metrics[i].metrics.acc == b.metrics[i].metrics.acc);
      CHECK(a.metrics[i].metrics.ece == b.metrics[i].metrics.ece);
      CHECK(a.metrics[i].loss_contr == b.metrics[i].loss_contr);
    }
  }
  SUBCASE("local batch norm keeps BN segments client-specific") {
    auto local = base;
    local.local_bn = true;
    const auto r = run_federated(local, data);
    const auto segs = fam_bn_segments(local.fam_config(12));
    const auto v0 = r.clients[0].fam.to_vector();
    const auto v1 = r.clients[1].fam.to_vector();
    bool bn_differs = false;
    for (std::size_t i = 0; i < v0.size(); ++i) {
      bool in_bn = false;
      for (const auto& s : segs) in_bn = in_bn || (i >= s.offset && i < s.offset + s.length);
      if (in_bn) bn_differs = bn_differs || v0[i] != v1[i];
      else CHECK(v0[i] == v1[i]);
    }
    CHECK(bn_differs);
  }
  SUBCASE("shared discriminator is averaged and counted") {
    auto share = base;
    share.share_dc = true;
    const auto r = run_federated(share, data);
    CHECK(r.ledger.dc_params == domain_classifier_param_count(share.dc_config(12)));
    CHECK(r.ledger.per_round_total() == 2 * 3 * (r.ledger.fam_params + r.ledger.dc_params));
    CHECK(r.clients[0].dc.to_vector() == r.clients[2].dc.to_vector());
    const auto unshared = run_federated(base, data);
    CHECK(unshared.clients[0].dc.to_vector() != unshared.clients[2].dc.to_vector());
  }
  SUBCASE("deep variant runs and sends the larger vector") {
    auto deep = base;
    deep.fam_variant = FamVariant::deep;
    deep.rounds = 1;
    const auto r = run_federated(deep, data);
    CHECK(r.ledger.fam_params == fam_param_count(FamConfig{12, 12, FamVariant::deep}));
  }
}

TEST_CASE("config validation") {
  FLRunConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.batch_size = 1;
  CHECK_THROWS(cfg.validate());
  cfg = FLRunConfig{};
  cfg.lambda = -1;
  CHECK_THROWS(cfg.validate());
  CHECK(FLRunConfig{}.fam_config(64).hidden_dim == 64);
}
