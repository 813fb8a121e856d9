#pragma once

// Federated round loop: local adversarial training on every client, upload
// of the flat FAM vector, unweighted server averaging, broadcast, and
// per-round evaluation with communication accounting.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "faa/adversary.hpp"
#include "faa/data.hpp"
#include "faa/fam.hpp"
#include "faa/losses.hpp"
#include "faa/metrics.hpp"
#include "faa/numerics.hpp"

namespace faa {

struct FLRunConfig {
  std::size_t n_clients = 0;  // 0: take from the data
  std::size_t rounds = 50;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 32;
  double lambda = 0.5;
  AdamConfig adam;
  bool enable_da = true;
  bool share_dc = false;
  bool local_bn = false;
  FamVariant fam_variant = FamVariant::standard;
  std::size_t fam_hidden = 0;  // 0: same as the feature dimension
  std::size_t dc_hidden1 = 512;
  std::size_t dc_hidden2 = 256;
  bool dc_zero_init_output = false;
  double logit_scale = 100.0;  // 1 / tau
  std::size_t ece_bins = kDefaultEceBins;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const;
  FamConfig fam_config(std::size_t feature_dim) const;
  DomainClassifierConfig dc_config(std::size_t feature_dim) const;
  Temperature temperature() const { return Temperature::from_logit_scale(logit_scale); }
};

struct LabeledSplit {
  Matrix features;
  std::vector<std::uint32_t> labels;

  static LabeledSplit from_dataset(const EmbeddingDataset& ds);
  std::size_t size() const { return labels.size(); }
};

struct ClientData {
  LabeledSplit train;
  LabeledSplit val;
  LabeledSplit test;
};

struct FederatedData {
  std::vector<ClientData> clients;
  Matrix prompt_bank;  // K x D
  Matrix target_pool;  // unlabeled shared reference features
  std::optional<LabeledSplit> global_test;

  std::size_t feature_dim() const { return prompt_bank.cols(); }
  std::size_t num_classes() const { return prompt_bank.rows(); }
  void validate() const;
};

struct ClientState {
  std::size_t id = 0;
  FeatureAdaptationModule fam;
  DomainClassifier dc;
};

struct EpochStats {
  double loss_contr = 0.0;
  std::optional<double> loss_da;
  std::size_t batches = 0;
};

// One pass over the client's training split. Source order comes from
// `source_rng`, target draws from `target_rng`, so disabling DA leaves the
// source stream untouched. Trailing singleton batches are dropped.
EpochStats local_train_epoch(ClientState& client, const LabeledSplit& train,
                             const Matrix& prompt_bank, const Matrix& target_pool,
                             const FLRunConfig& cfg, std::mt19937_64& source_rng,
                             std::mt19937_64& target_rng);

// Elementwise unweighted mean. Each coordinate's values are summed in sorted
// order in extended precision, so the result does not depend on client order
// and N identical vectors average to themselves exactly.
std::vector<double> aggregate(std::span<const std::vector<double>> vectors);

// Overwrites every client's FAM with `global`; with `local_bn` the batch-norm
// segments keep the client's own values.
void broadcast(std::span<const double> global, std::span<ClientState> clients, bool local_bn);

struct RoundComm {
  std::size_t round = 0;
  std::uint64_t uploaded = 0;
  std::uint64_t downloaded = 0;
};

struct CommLedger {
  std::uint64_t fam_params = 0;
  std::uint64_t dc_params = 0;  // counted only when the discriminator is shared
  std::vector<RoundComm> rounds;
  std::vector<double> train_seconds;  // all clients' local training per round

  void record_round(std::size_t round, std::size_t n_clients, double seconds);
  std::uint64_t total_uploaded() const;
  std::uint64_t total_downloaded() const;
  std::uint64_t per_round_total() const;  // up + down for one round
};

std::vector<EvalRecord> evaluate(const FeatureAdaptationModule& fam, const LabeledSplit& split,
                                 const Matrix& prompt_bank, Temperature t);

struct SplitMetrics {
  double acc = 0.0;
  double bacc = 0.0;
  double macro_f1 = 0.0;
  double auc = 0.0;
  double ece = 0.0;
};

SplitMetrics compute_split_metrics(std::span<const EvalRecord> records, std::size_t ece_bins);

struct RoundMetrics {
  std::size_t round = 0;
  std::string split;
  std::size_t samples = 0;
  SplitMetrics metrics;
  std::optional<double> loss_contr;
  std::optional<double> loss_da;
  std::uint64_t comm_uploaded = 0;    // cumulative
  std::uint64_t comm_downloaded = 0;  // cumulative
};

struct BestRound {
  std::size_t round = 0;
  SplitMetrics metrics;
  std::vector<EvalRecord> records;
};

struct RunResult {
  std::vector<RoundMetrics> metrics;  // rounds 0..R, one entry per split
  CommLedger ledger;
  std::vector<double> final_global;
  std::vector<double> best_global;  // global vector at the best global_test round
  std::map<std::string, BestRound> best;
  std::vector<ClientState> clients;
};

// Split names used in RoundMetrics.
std::string client_split_name(std::size_t client, const char* split);
inline constexpr const char* kGlobalSplit = "global_test";

// Round 0 evaluates the initialization; rounds 1..R train, aggregate,
// broadcast, then evaluate every client's val/test split with the client's
// FAM and the global split with the aggregated FAM.
RunResult run_federated(const FLRunConfig& cfg, const FederatedData& data);

}  // namespace faa
