#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "faa/experiment.hpp"

using namespace faa;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("faa_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string key_of(const std::string& text) {
  try {
    parse_experiment_config(text);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "";
}

const char* kSmoke = R"({
  "seed": 4,
  "federation": {"rounds": 2, "dc_hidden1": 8, "dc_hidden2": 4},
  "data": {"synthetic": {"num_classes": 3, "feature_dim": 8, "samples_per_class": 10,
                         "target_samples_per_class": 10}}
})";

}  // namespace

TEST_CASE("experiment config parsing") {
  SUBCASE("defaults and round trip") {
    const auto cfg = parse_experiment_config(kSmoke);
    CHECK(cfg.run.seed == 4);
    CHECK(cfg.run.rounds == 2);
    CHECK(cfg.run.n_clients == 0);  // taken from the data
    CHECK(cfg.run.adam.learning_rate == 5e-5);
    CHECK(cfg.run.adam.beta2 == 0.98);
    CHECK(cfg.run.batch_size == 32);
    REQUIRE(cfg.synthetic.has_value());
    CHECK(cfg.synthetic->seed_from_run);
    const auto text = serialize_experiment_config(cfg);
    CHECK(serialize_experiment_config(parse_experiment_config(text)) == text);
  }
  SUBCASE("errors name the offending key") {
    CHECK(key_of(R"({"federation": {"roundz": 3}})") == "federation.roundz");
    CHECK(key_of(R"({"federation": {"rounds": "many"}})") == "federation.rounds");
    CHECK(key_of(R"({"optimizer": {"beta2": 1.5}, "data": {"synthetic": {}}})") == "optimizer.beta2");
    CHECK(key_of(R"({"data": {"synthetic": {"shift_dims": 999}}})") == "data.synthetic.shift_dims");
    CHECK(key_of(R"({"federation": {"batch_size": 1}, "data": {"synthetic": {}}})") == "federation.batch_size");
    CHECK(key_of(R"({"federation": {"fam_variant": "wide"}})") == "federation.fam_variant");
    CHECK(key_of("{not json") == "<root>");
    CHECK(key_of("[]") == "<root>");
  }
  SUBCASE("file based clients must exist") {
    const std::string text = R"({"data": {"clients": [{"file": "/nonexistent/a.faeb"}]},
                                 "federation": {"n_clients": 1, "enable_da": false}})";
    const auto cfg = parse_experiment_config(text);
    try {
      load_federation(cfg);
      FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.key().rfind("data.clients", 0) == 0);
    }
  }
  CHECK_THROWS_AS(load_experiment_config("/nonexistent/config.json"), std::runtime_error);
}

TEST_CASE("synthetic federation assembly") {
  const auto cfg = parse_experiment_config(kSmoke);
  const auto data = build_synthetic_federation(*cfg.synthetic, 4);
  REQUIRE(data.clients.size() == 3);
  for (const auto& c : data.clients) {
    CHECK(c.train.size() + c.val.size() + c.test.size() == 30);
    CHECK(c.train.size() == 18);
  }
  CHECK(data.target_pool.rows() + data.global_test->size() == 30);
  CHECK(data.target_pool.rows() == 15);
  CHECK(data.prompt_bank.rows() == 3);
  const auto again = build_synthetic_federation(*cfg.synthetic, 4);
  CHECK(again.clients[1].train.features == data.clients[1].train.features);
  CHECK(again.target_pool == data.target_pool);
  const auto other = build_synthetic_federation(*cfg.synthetic, 5);
  CHECK_FALSE(other.target_pool == data.target_pool);
}

TEST_CASE("checkpoints") {
  const auto dir = scratch("ckpt");
  for (auto variant : {FamVariant::standard, FamVariant::deep}) {
    const FamConfig fc{6, 5, variant};
    FamCheckpoint ck{fc, FeatureAdaptationModule(fc, 3).to_vector()};
    write_checkpoint(ck, dir / "a.bin");
    CHECK(fs::file_size(dir / "a.bin") == 4 + 4 + 1 + 4 + 4 + 8 + 8 * ck.values.size());
    const auto back = read_checkpoint(dir / "a.bin");
    CHECK(back.values == ck.values);
    CHECK(back.config.variant == variant);
    CHECK(back.config.feature_dim == 6);
    CHECK(back.config.hidden_dim == 5);
  }
  const auto bytes = slurp(dir / "a.bin");
  auto expect_field = [&](const std::string& content, const std::string& field) {
    std::ofstream(dir / "b.bin", std::ios::binary) << content;
    try {
      read_checkpoint(dir / "b.bin");
      FAIL("expected a DataFormatError");
    } catch (const DataFormatError& e) {
      CHECK(e.field() == field);
    }
  };
  expect_field("XXXX" + bytes.substr(4), "magic");
  expect_field(bytes.substr(0, 6), "version");
  expect_field(bytes.substr(0, bytes.size() - 3), "values");
  expect_field(bytes + "z", "values");
  auto bad_count = bytes;
  bad_count[17] = 7;
  expect_field(bad_count, "count");
  CHECK_THROWS_AS(write_checkpoint({FamConfig{4, 2}, {1.0}}, dir / "c.bin"), DimensionError);
}

TEST_CASE("training artifacts and report") {
  const auto dir = scratch("train");
  auto cfg = parse_experiment_config(kSmoke);
  cfg.output_dir = (dir / "run").string();
  const auto summary = run_training(cfg);
  const fs::path run = summary.output_dir;
  for (const char* f : {"config.json", "metrics.jsonl", "curves.csv", "timings.jsonl", "ledger.json",
                        "final_fam.bin", "best_fam.bin"})
    CHECK(fs::exists(run / f));

  const auto log = slurp(run / "metrics.jsonl");
  CHECK(log == format_metrics_log(summary.result));
  std::size_t lines = 0;
  std::istringstream in(log);
  for (std::string line; std::getline(in, line); ++lines) {
    const auto rec = nlohmann::json::parse(line);
    CHECK(rec.contains("acc"));
    CHECK(rec.contains("comm_uploaded"));
  }
  CHECK(lines == 3 * 7);

  const auto curves = slurp(run / "curves.csv");
  CHECK(curves.rfind("round,split,acc,bacc,macro_f1\n", 0) == 0);
  CHECK(std::count(curves.begin(), curves.end(), '\n') == 1 + 3 * 7);

  const auto ledger = nlohmann::json::parse(slurp(run / "ledger.json"));
  CHECK(ledger.at("per_round_total").get<std::uint64_t>() ==
        2 * 3 * fam_param_count(FamConfig{8, 8}));

  const auto final_ck = read_checkpoint(run / "final_fam.bin");
  CHECK(final_ck.values == summary.result.final_global);

  const auto preds = slurp(run / "predictions" / "global_test.csv");
  CHECK(preds.rfind("label,predicted,p0,p1,p2\n", 0) == 0);

  // report: best rounds match the in-memory selection, output is stable
  const auto rows = best_rounds_from_log(run / "metrics.jsonl");
  REQUIRE(rows.size() == summary.result.best.size());
  for (const auto& r : rows) {
    const auto& best = summary.result.best.at(r.split);
    CHECK(r.round == best.round);
    CHECK(r.metrics.acc == best.metrics.acc);
  }
  const auto table = run_report(run);
  const auto csv = slurp(run / "summary.csv");
  CHECK(csv.rfind("split,best_round,acc,bacc,macro_f1,auc,ece\n", 0) == 0);
  CHECK(run_report(run) == table);
  CHECK(slurp(run / "summary.csv") == csv);
  CHECK(fs::exists(run / "roc_global_test.csv"));
  CHECK(fs::exists(run / "reliability_global_test.csv"));
  CHECK(fs::exists(run / "dca_global_test.csv"));

  // identical seeds give identical logs
  auto again = cfg;
  again.output_dir = (dir / "run2").string();
  run_training(again);
  CHECK(slurp(dir / "run2" / "metrics.jsonl") == log);
}

TEST_CASE("best rounds from a hand-written log") {
  const auto dir = scratch("log");
  std::ofstream(dir / "metrics.jsonl")
      << R"({"round":0,"split":"b","acc":0.5,"bacc":0.5,"macro_f1":0.5,"auc":null,"ece":0.1})" "\n"
      << R"({"round":1,"split":"b","acc":0.7,"bacc":0.6,"macro_f1":0.6,"auc":0.8,"ece":0.1})" "\n"
      << R"({"round":2,"split":"b","acc":0.7,"bacc":0.9,"macro_f1":0.9,"auc":0.9,"ece":0.1})" "\n"
      << R"({"round":0,"split":"a","acc":0.2,"bacc":0.2,"macro_f1":0.2,"auc":null,"ece":0.3})" "\n";
  const auto rows = best_rounds_from_log(dir / "metrics.jsonl");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].split == "a");
  CHECK(std::isnan(rows[0].metrics.auc));
  CHECK(rows[1].split == "b");
  CHECK(rows[1].round == 1);  // earliest round wins a tie
  std::ofstream(dir / "bad.jsonl") << R"({"round":0})" "\n";
  CHECK_THROWS_AS(best_rounds_from_log(dir / "bad.jsonl"), DataFormatError);
}

TEST_CASE("decision-curve thresholds") {
  const auto t = dca_thresholds(0.01);
  REQUIRE(t.size() == 100);
  CHECK(t.front() == 0.0);
  CHECK(t.back() == doctest::Approx(0.99));
  CHECK(dca_thresholds(0.25).size() == 4);
  CHECK_THROWS(dca_thresholds(0.0));
  CHECK_THROWS(dca_thresholds(1.0));
}
