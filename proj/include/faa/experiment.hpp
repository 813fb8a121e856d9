#pragma once

// Operator-facing layer shared by the CLI and the acceptance suite:
// experiment configs, data assembly, run artifacts and reports.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "faa/data.hpp"
#include "faa/federation.hpp"

namespace faa {

// Invalid configuration; `key()` is the dotted path of the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct SyntheticBlock {
  SyntheticConfig generator;
  bool seed_from_run = true;  // generator.seed follows the run seed
  std::array<double, 3> split{0.6, 0.2, 0.2};
  double target_pool_fraction = 0.5;  // rest of the target domain is the global test split
};

struct ClientFiles {
  std::string train;
  std::string val;
  std::string test;
  std::string file;  // alternative to train/val/test: split with `split`
  std::array<double, 3> split{0.6, 0.2, 0.2};
};

struct ExperimentConfig {
  FLRunConfig run;
  std::optional<SyntheticBlock> synthetic;
  std::vector<ClientFiles> clients;
  std::string target_pool;
  std::string global_test;
  std::string output_dir = "run";
  double dca_step = 0.01;

  void validate() const;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string serialize_experiment_config(const ExperimentConfig& cfg);

// Synthetic: one client per source domain, each split by `split`; the target
// domain is divided into the unlabeled pool and the global test split.
FederatedData build_synthetic_federation(const SyntheticBlock& block, std::uint64_t seed);
FederatedData load_federation(const ExperimentConfig& cfg);

// ---- checkpoints ----------------------------------------------------------
// "FAMC" | u32 version=1 | u8 variant | u32 D | u32 H | u64 n | n x f64

struct FamCheckpoint {
  FamConfig config;
  std::vector<double> values;
};

void write_checkpoint(const FamCheckpoint& ckpt, const std::filesystem::path& path);
FamCheckpoint read_checkpoint(const std::filesystem::path& path);

// ---- artifacts ------------------------------------------------------------

std::string metrics_record_json(const RoundMetrics& m);
std::string format_metrics_log(const RunResult& result);

struct TrainSummary {
  RunResult result;
  std::filesystem::path output_dir;
};

// Runs the experiment and writes under cfg.output_dir:
//   config.json, metrics.jsonl, curves.csv, timings.jsonl, ledger.json,
//   final_fam.bin, best_fam.bin, predictions/<split>.csv
TrainSummary run_training(const ExperimentConfig& cfg);

struct ReportRow {
  std::string split;
  std::size_t round = 0;
  SplitMetrics metrics;
};

// Best round per split (highest accuracy, earliest on ties) read back from
// a metrics log.
std::vector<ReportRow> best_rounds_from_log(const std::filesystem::path& metrics_log);

// Writes summary.csv plus roc_/reliability_/dca_<split>.csv next to the
// metrics log and returns the summary table as text.
std::string run_report(const std::filesystem::path& run_dir, std::size_t ece_bins = kDefaultEceBins,
                       double dca_step = 0.01);

std::vector<double> dca_thresholds(double step);

}  // namespace faa
