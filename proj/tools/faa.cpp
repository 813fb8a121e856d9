// Command-line entry point: synth, partition, train, report, eval.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "faa/data.hpp"
#include "faa/experiment.hpp"
#include "faa/federation.hpp"

namespace fs = std::filesystem;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
};

faa::ExperimentConfig load_with_overrides(const std::string& path, const Overrides& o) {
  faa::ExperimentConfig cfg = faa::load_experiment_config(path);
  if (o.seed) cfg.run.seed = *o.seed;
  if (o.out) cfg.output_dir = *o.out;
  if (o.threads) cfg.run.threads = *o.threads;
  cfg.validate();
  return cfg;
}

int cmd_synth(const std::string& config_path, const Overrides& o) {
  const auto cfg = load_with_overrides(config_path, o);
  if (!cfg.synthetic) throw faa::ConfigError("data.synthetic", "required by synth");
  faa::SyntheticConfig g = cfg.synthetic->generator;
  if (cfg.synthetic->seed_from_run) g.seed = cfg.run.seed;
  const auto synth = faa::synth_generate(g);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  for (std::size_t i = 0; i < synth.domains.size(); ++i) {
    const auto path = dir / ("domain_" + std::to_string(i) + ".faeb");
    faa::write_dataset(synth.domains[i], path);
    std::cout << path.string() << "  N=" << synth.domains[i].size() << "\n";
  }
  faa::write_dataset(synth.target, dir / "target.faeb");
  std::cout << (dir / "target.faeb").string() << "  N=" << synth.target.size() << "\n";
  return 0;
}

struct PartitionArgs {
  std::string input;
  std::string scheme = "dirichlet";
  double alpha = 0.5;
  std::size_t clients = 2;
  std::vector<double> ratios{0.6, 0.2, 0.2};
};

int cmd_partition(const PartitionArgs& a, const Overrides& o) {
  const auto ds = faa::read_dataset(a.input);
  const fs::path dir = o.out.value_or("partition");
  const std::uint64_t seed = o.seed.value_or(0);
  fs::create_directories(dir);

  auto emit = [&](const std::vector<std::size_t>& idx, const std::string& name) {
    const auto path = dir / (name + ".faeb");
    faa::write_dataset(ds.subset(idx), path);
    std::cout << path.string() << "  N=" << idx.size() << "\n";
  };
  if (a.scheme == "split") {
    if (a.ratios.size() != 3) throw std::invalid_argument("--ratios needs three values");
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto parts = faa::split_train_val_test(all, {a.ratios[0], a.ratios[1], a.ratios[2]}, seed);
    emit(parts.train, "train");
    emit(parts.val, "val");
    emit(parts.test, "test");
    return 0;
  }
  faa::IndexLists parts;
  if (a.scheme == "dirichlet") {
    parts = faa::dirichlet_partition(ds.labels, {a.alpha, a.clients, seed});
  } else if (a.scheme == "pathological") {
    parts = faa::pathological_partition(ds.labels, a.clients, seed);
  } else {
    throw std::invalid_argument("--scheme must be dirichlet, pathological or split");
  }
  for (std::size_t i = 0; i < parts.size(); ++i) emit(parts[i], "client_" + std::to_string(i));
  std::cout << "mean client label entropy: "
            << faa::mean_client_label_entropy(ds.labels, parts, ds.num_classes()) << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const Overrides& o) {
  const auto cfg = load_with_overrides(config_path, o);
  const auto summary = faa::run_training(cfg);
  const auto& ledger = summary.result.ledger;
  std::cout << "rounds: " << cfg.run.rounds << "  clients: " << summary.result.clients.size()
            << "  params/round: " << ledger.per_round_total() << "\n";
  for (const auto& [split, best] : summary.result.best) {
    std::printf("%-16s best round %3zu  acc %.4f  bacc %.4f  f1 %.4f\n", split.c_str(), best.round,
                best.metrics.acc, best.metrics.bacc, best.metrics.macro_f1);
  }
  std::cout << "outputs in " << summary.output_dir.string() << "\n";
  return 0;
}

int cmd_report(const std::string& run_dir) {
  std::size_t ece_bins = faa::kDefaultEceBins;
  double dca_step = 0.01;
  const fs::path saved = fs::path(run_dir) / "config.json";
  if (fs::exists(saved)) {
    const auto cfg = faa::load_experiment_config(saved);
    ece_bins = cfg.run.ece_bins;
    dca_step = cfg.dca_step;
  }
  std::cout << faa::run_report(run_dir, ece_bins, dca_step);
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_path, double logit_scale,
             std::size_t ece_bins) {
  const auto ckpt = faa::read_checkpoint(checkpoint);
  const auto ds = faa::read_dataset(data_path);
  if (ds.feature_dim != ckpt.config.feature_dim) {
    throw faa::DimensionError("checkpoint and data feature dimensions differ");
  }
  faa::FeatureAdaptationModule fam = faa::FeatureAdaptationModule::zeros(ckpt.config);
  fam.from_vector(ckpt.values);
  const auto records = faa::evaluate(fam, faa::LabeledSplit::from_dataset(ds), ds.prompt_matrix(),
                                     faa::Temperature::from_logit_scale(logit_scale));
  const auto m = faa::compute_split_metrics(records, ece_bins);
  std::printf("N %zu  acc %.4f  bacc %.4f  f1 %.4f  auc %.4f  ece %.4f\n", records.size(), m.acc,
              m.bacc, m.macro_f1, m.auc, m.ece);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated adversarial adaptation simulator"};
  app.require_subcommand(1);

  Overrides o;
  std::string config_path;
  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", config_path, "Experiment config (JSON)");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Override the run seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--threads", o.threads, "Client worker threads")->check(CLI::PositiveNumber);
  };

  auto* synth = app.add_subcommand("synth", "Write synthetic source domains and a target domain");
  add_common(synth, true);

  PartitionArgs part;
  auto* partition = app.add_subcommand("partition", "Split one embedding file into client files");
  add_common(partition, false);
  partition->add_option("--input", part.input, "Embedding file")->required()->check(CLI::ExistingFile);
  partition->add_option("--scheme", part.scheme, "dirichlet | pathological | split")
      ->check(CLI::IsMember({"dirichlet", "pathological", "split"}));
  partition->add_option("--alpha", part.alpha, "Dirichlet concentration");
  partition->add_option("--clients", part.clients, "Number of clients");
  partition->add_option("--ratios", part.ratios, "train val test ratios for --scheme split")
      ->expected(3);

  auto* train = app.add_subcommand("train", "Run a federated experiment");
  add_common(train, true);

  std::string run_dir;
  auto* report = app.add_subcommand("report", "Summarize a run directory and write curve CSVs");
  report->add_option("run_dir", run_dir, "Directory written by train")
      ->required()
      ->check(CLI::ExistingDirectory);

  std::string ckpt_path;
  std::string data_path;
  double logit_scale = 100.0;
  std::size_t ece_bins = faa::kDefaultEceBins;
  auto* eval = app.add_subcommand("eval", "Evaluate a FAM checkpoint on an embedding file");
  eval->add_option("--checkpoint", ckpt_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--logit-scale", logit_scale);
  eval->add_option("--ece-bins", ece_bins);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(config_path, o);
    if (*partition) return cmd_partition(part, o);
    if (*train) return cmd_train(config_path, o);
    if (*report) return cmd_report(run_dir);
    if (*eval) return cmd_eval(ckpt_path, data_path, logit_scale, ece_bins);
  } catch (const faa::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
