#include "faa/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "faa/random.hpp"

namespace faa {

namespace {

// stream tags for make_rng
constexpr std::uint64_t kFamInitStream = 0xFA0;
constexpr std::uint64_t kDcInitStream = 0xDC0;
constexpr std::uint64_t kSourceStream = 0x501;
constexpr std::uint64_t kTargetStream = 0x7A6;

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  auto rng = make_rng(seed, path);
  return rng();
}

}  // namespace

void FLRunConfig::validate() const {
  if (rounds > 0 && local_epochs < 1) throw std::invalid_argument("local_epochs must be >= 1");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (!(logit_scale > 0.0)) throw std::invalid_argument("logit_scale must be > 0");
  if (dc_hidden1 < 1 || dc_hidden2 < 1) throw std::invalid_argument("dc widths must be >= 1");
  if (ece_bins < 1) throw std::invalid_argument("ece_bins must be >= 1");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  adam.validate();
}

FamConfig FLRunConfig::fam_config(std::size_t feature_dim) const {
  return FamConfig{feature_dim, fam_hidden == 0 ? feature_dim : fam_hidden, fam_variant};
}

DomainClassifierConfig FLRunConfig::dc_config(std::size_t feature_dim) const {
  return DomainClassifierConfig{feature_dim, dc_hidden1, dc_hidden2, dc_zero_init_output};
}

LabeledSplit LabeledSplit::from_dataset(const EmbeddingDataset& ds) {
  return LabeledSplit{ds.feature_matrix(), ds.labels};
}

void FederatedData::validate() const {
  if (clients.empty()) throw std::invalid_argument("federated data: no clients");
  if (prompt_bank.rows() == 0 || prompt_bank.cols() == 0) {
    throw std::invalid_argument("federated data: empty prompt bank");
  }
  const std::size_t d = feature_dim();
  const std::size_t k = num_classes();
  auto check = [&](const LabeledSplit& s, const std::string& what) {
    if (s.features.rows() != s.labels.size()) {
      throw std::invalid_argument(what + ": feature rows and labels differ");
    }
    if (s.size() > 0 && s.features.cols() != d) {
      throw DimensionError(what + ": feature_dim " + std::to_string(s.features.cols()) +
                           " differs from prompt bank " + std::to_string(d));
    }
    for (auto l : s.labels) {
      if (l >= k) throw std::invalid_argument(what + ": label out of range");
    }
  };
  for (std::size_t i = 0; i < clients.size(); ++i) {
    check(clients[i].train, client_split_name(i, "train"));
    check(clients[i].val, client_split_name(i, "val"));
    check(clients[i].test, client_split_name(i, "test"));
  }
  if (global_test) check(*global_test, kGlobalSplit);
  if (target_pool.rows() > 0 && target_pool.cols() != d) {
    throw DimensionError("target pool: feature_dim mismatch");
  }
}

std::string client_split_name(std::size_t client, const char* split) {
  return "client" + std::to_string(client) + "_" + split;
}

// ---- local training -------------------------------------------------------

EpochStats local_train_epoch(ClientState& client, const LabeledSplit& train,
                             const Matrix& prompt_bank, const Matrix& target_pool,
                             const FLRunConfig& cfg, std::mt19937_64& source_rng,
                             std::mt19937_64& target_rng) {
  const std::size_t n = train.size();
  if (n < 2) throw std::invalid_argument("local_train_epoch: need at least 2 training samples");
  if (cfg.enable_da && target_pool.rows() == 0) {
    throw std::invalid_argument("local_train_epoch: domain adaptation needs a target pool");
  }
  const Temperature temp = cfg.temperature();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  shuffle_in_place(order, source_rng);

  std::vector<std::pair<std::size_t, std::size_t>> batches;  // [begin, end)
  for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
    const std::size_t end = std::min(n, begin + cfg.batch_size);
    if (end - begin >= 2) batches.emplace_back(begin, end);
  }
  std::size_t demand = 0;
  for (auto [b, e] : batches) demand += e - b;

  std::vector<std::size_t> target_order;
  if (cfg.enable_da) {
    const std::size_t pool = target_pool.rows();
    if (pool >= demand) {
      target_order.resize(pool);
      std::iota(target_order.begin(), target_order.end(), 0);
      shuffle_in_place(target_order, target_rng);
      target_order.resize(demand);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, pool - 1);
      target_order.resize(demand);
      for (auto& t : target_order) t = pick(target_rng);
    }
  }

  client.fam.zero_grad();
  client.dc.zero_grad();
  EpochStats stats;
  double da_sum = 0.0;
  for (auto [begin, end] : batches) {
    const std::span<const std::size_t> idx(order.data() + begin, end - begin);
    const Matrix features = gather_rows(train.features, idx);
    std::vector<std::size_t> label_rows(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) label_rows[j] = train.labels[idx[j]];
    const Matrix texts = gather_rows(prompt_bank, label_rows);

    FamOutput src = client.fam.forward(features, Mode::train);
    const Matrix sim = cosine_similarity(src.masked, texts);
    LossResult contr = contrastive_loss(sim, temp);
    client.fam.backward(src.cache, cosine_similarity_backward(src.masked, texts, sim, contr.grad));
    stats.loss_contr += contr.loss;

    if (cfg.enable_da) {
      const std::span<const std::size_t> tidx(target_order.data() + begin, end - begin);
      AdversarialResult adv =
          adversarial_backprop(client.fam, client.dc, src, gather_rows(target_pool, tidx), cfg.lambda);
      da_sum += adv.da_loss;
      client.dc.adam_step(cfg.adam);
    }
    client.fam.adam_step(cfg.adam);
    ++stats.batches;
  }
  if (stats.batches > 0) {
    stats.loss_contr /= static_cast<double>(stats.batches);
    if (cfg.enable_da) stats.loss_da = da_sum / static_cast<double>(stats.batches);
  }
  return stats;
}

// ---- aggregation ----------------------------------------------------------

std::vector<double> aggregate(std::span<const std::vector<double>> vectors) {
  if (vectors.empty()) throw std::invalid_argument("aggregate: no vectors");
  const std::size_t len = vectors.front().size();
  for (const auto& v : vectors) {
    if (v.size() != len) throw DimensionError("aggregate: vector lengths differ");
  }
  const std::size_t n = vectors.size();
  std::vector<double> mean(len);
  std::vector<double> column(n);
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t c = 0; c < n; ++c) column[c] = vectors[c][i];
    std::sort(column.begin(), column.end());
    long double sum = 0.0L;
    for (double v : column) sum += v;
    mean[i] = static_cast<double>(sum / static_cast<long double>(n));
  }
  return mean;
}

void broadcast(std::span<const double> global, std::span<ClientState> clients, bool local_bn) {
  for (auto& client : clients) {
    const FamConfig& cfg = client.fam.config();
    if (global.size() != fam_param_count(cfg)) {
      throw DimensionError("broadcast: global vector length " + std::to_string(global.size()) +
                           " != " + std::to_string(fam_param_count(cfg)));
    }
    if (!local_bn) {
      client.fam.from_vector(global);
      continue;
    }
    std::vector<double> merged(global.begin(), global.end());
    const std::vector<double> own = client.fam.to_vector();
    for (const Segment& s : fam_bn_segments(cfg)) {
      std::copy_n(own.begin() + static_cast<std::ptrdiff_t>(s.offset), s.length,
                  merged.begin() + static_cast<std::ptrdiff_t>(s.offset));
    }
    client.fam.from_vector(merged);
  }
}

void CommLedger::record_round(std::size_t round, std::size_t n_clients, double seconds) {
  const std::uint64_t per_client = fam_params + dc_params;
  rounds.push_back({round, per_client * n_clients, per_client * n_clients});
  train_seconds.push_back(seconds);
}

std::uint64_t CommLedger::total_uploaded() const {
  std::uint64_t t = 0;
  for (const auto& r : rounds) t += r.uploaded;
  return t;
}

std::uint64_t CommLedger::total_downloaded() const {
  std::uint64_t t = 0;
  for (const auto& r : rounds) t += r.downloaded;
  return t;
}

std::uint64_t CommLedger::per_round_total() const {
  return rounds.empty() ? 0 : rounds.back().uploaded + rounds.back().downloaded;
}

// ---- evaluation -----------------------------------------------------------

std::vector<EvalRecord> evaluate(const FeatureAdaptationModule& fam, const LabeledSplit& split,
                                 const Matrix& prompt_bank, Temperature t) {
  constexpr std::size_t kChunk = 256;
  std::vector<EvalRecord> records;
  records.reserve(split.size());
  for (std::size_t begin = 0; begin < split.size(); begin += kChunk) {
    const std::size_t count = std::min(kChunk, split.size() - begin);
    FamOutput out = fam.forward_eval(take_rows(split.features, begin, count));
    const Matrix sim = cosine_similarity(out.masked, prompt_bank);
    for (std::size_t j = 0; j < count; ++j) {
      records.push_back(make_record(split.labels[begin + j], class_probabilities(sim.row(j), t)));
    }
  }
  return records;
}

SplitMetrics compute_split_metrics(std::span<const EvalRecord> records, std::size_t ece_bins) {
  SplitMetrics m;
  if (records.empty()) return m;
  m.acc = accuracy(records);
  m.bacc = balanced_accuracy(records);
  m.macro_f1 = macro_f1(records);
  m.auc = roc_auc_macro(records).macro_auc;
  m.ece = expected_calibration_error(records, ece_bins).ece;
  return m;
}

// ---- round loop -----------------------------------------------------------

namespace {

template <typename Fn>
void for_each_client(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < std::min(threads, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void track_best(RunResult& result, const std::string& split, std::size_t round,
                const SplitMetrics& m, std::vector<EvalRecord>&& records) {
  auto it = result.best.find(split);
  if (it == result.best.end() || m.acc > it->second.metrics.acc) {
    result.best[split] = BestRound{round, m, std::move(records)};
  }
}

}  // namespace

RunResult run_federated(const FLRunConfig& cfg, const FederatedData& data) {
  cfg.validate();
  data.validate();
  const std::size_t n_clients = data.clients.size();
  if (cfg.n_clients != 0 && cfg.n_clients != n_clients) {
    throw std::invalid_argument("run_federated: config expects " + std::to_string(cfg.n_clients) +
                                " clients, data has " + std::to_string(n_clients));
  }
  const std::size_t d = data.feature_dim();
  const FamConfig fam_cfg = cfg.fam_config(d);
  const DomainClassifierConfig dc_cfg = cfg.dc_config(d);
  const Temperature temp = cfg.temperature();

  FeatureAdaptationModule server(fam_cfg, derive_seed(cfg.seed, {kFamInitStream}));
  std::vector<double> global = server.to_vector();

  RunResult result;
  result.ledger.fam_params = fam_param_count(fam_cfg);
  result.ledger.dc_params = cfg.share_dc ? domain_classifier_param_count(dc_cfg) : 0;
  result.clients.reserve(n_clients);
  for (std::size_t i = 0; i < n_clients; ++i) {
    result.clients.push_back(
        ClientState{i, server, DomainClassifier(dc_cfg, derive_seed(cfg.seed, {kDcInitStream, i}))});
  }
  if (cfg.share_dc) {
    // shared discriminators start from one common initialization
    const auto dc0 = result.clients.front().dc.to_vector();
    for (auto& c : result.clients) c.dc.from_vector(dc0);
  }
  result.best_global = global;

  std::vector<EpochStats> last_stats(n_clients);
  auto evaluate_round = [&](std::size_t round) {
    const auto comm_up = result.ledger.total_uploaded();
    const auto comm_down = result.ledger.total_downloaded();
    auto emit = [&](const std::string& split, const FeatureAdaptationModule& fam,
                    const LabeledSplit& s, std::optional<double> lc, std::optional<double> ld) {
      auto records = evaluate(fam, s, data.prompt_bank, temp);
      RoundMetrics rm;
      rm.round = round;
      rm.split = split;
      rm.samples = s.size();
      rm.metrics = compute_split_metrics(records, cfg.ece_bins);
      rm.loss_contr = lc;
      rm.loss_da = ld;
      rm.comm_uploaded = comm_up;
      rm.comm_downloaded = comm_down;
      if (!records.empty()) track_best(result, split, round, rm.metrics, std::move(records));
      result.metrics.push_back(std::move(rm));
    };
    for (std::size_t i = 0; i < n_clients; ++i) {
      std::optional<double> lc;
      std::optional<double> ld;
      if (round > 0) {
        lc = last_stats[i].loss_contr;
        ld = last_stats[i].loss_da;
      }
      emit(client_split_name(i, "val"), result.clients[i].fam, data.clients[i].val, lc, ld);
      emit(client_split_name(i, "test"), result.clients[i].fam, data.clients[i].test, lc, ld);
    }
    if (data.global_test) {
      const std::size_t before = result.best.count(kGlobalSplit)
                                     ? result.best.at(kGlobalSplit).round
                                     : static_cast<std::size_t>(-1);
      emit(kGlobalSplit, server, *data.global_test, std::nullopt, std::nullopt);
      if (result.best.at(kGlobalSplit).round != before) result.best_global = global;
    }
  };

  evaluate_round(0);
  for (std::size_t round = 1; round <= cfg.rounds; ++round) {
    const auto start = std::chrono::steady_clock::now();
    for_each_client(n_clients, cfg.threads, [&](std::size_t i) {
      ClientState& client = result.clients[i];
      EpochStats total;
      for (std::size_t e = 0; e < cfg.local_epochs; ++e) {
        auto source_rng = make_rng(cfg.seed, {kSourceStream, i, round, e});
        auto target_rng = make_rng(cfg.seed, {kTargetStream, i, round, e});
        total = local_train_epoch(client, data.clients[i].train, data.prompt_bank,
                                  data.target_pool, cfg, source_rng, target_rng);
      }
      last_stats[i] = total;
    });
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    std::vector<std::vector<double>> uploads;
    uploads.reserve(n_clients);
    for (const auto& c : result.clients) uploads.push_back(c.fam.to_vector());
    global = aggregate(uploads);
    server.from_vector(global);
    broadcast(global, result.clients, cfg.local_bn);
    if (cfg.share_dc) {
      std::vector<std::vector<double>> dcs;
      for (const auto& c : result.clients) dcs.push_back(c.dc.to_vector());
      const auto dc_global = aggregate(dcs);
      for (auto& c : result.clients) c.dc.from_vector(dc_global);
    }
    result.ledger.record_round(round, n_clients, seconds);
    evaluate_round(round);
  }
  result.final_global = global;
  return result;
}

}  // namespace faa
