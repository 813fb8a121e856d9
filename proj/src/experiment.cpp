#include "faa/experiment.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "faa/random.hpp"

namespace faa {

using json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kSplitStream = 0x5B1;
constexpr std::uint64_t kTargetSplitStream = 0x7A5;

std::uint64_t stream_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  auto rng = make_rng(seed, path);
  return rng();
}

// Reads one JSON object, checking types and rejecting unknown keys. Keys in
// diagnostics are dotted paths from the document root.
class ObjectReader {
 public:
  ObjectReader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(display(), "expected an object");
  }

  bool has(const char* key) const { return node_.contains(key); }
  const json* child(const char* key) {
    seen_.insert(key);
    auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }
  std::string key_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void read(const char* key, std::size_t& out) {
    if (const json* v = child(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(key_path(key), "expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void read(const char* key, double& out) {
    if (const json* v = child(key)) {
      if (!v->is_number()) throw ConfigError(key_path(key), "expected a number");
      out = v->get<double>();
    }
  }
  void read(const char* key, bool& out) {
    if (const json* v = child(key)) {
      if (!v->is_boolean()) throw ConfigError(key_path(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void read(const char* key, std::string& out) {
    if (const json* v = child(key)) {
      if (!v->is_string()) throw ConfigError(key_path(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void read(const char* key, std::array<double, 3>& out) {
    if (const json* v = child(key)) {
      if (!v->is_array() || v->size() != 3) {
        throw ConfigError(key_path(key), "expected an array of three numbers");
      }
      for (std::size_t i = 0; i < 3; ++i) {
        if (!(*v)[i].is_number()) throw ConfigError(key_path(key), "expected an array of three numbers");
        out[i] = (*v)[i].get<double>();
      }
    }
  }

  void finish() const {
    for (const auto& [key, value] : node_.items()) {
      if (!seen_.count(key)) throw ConfigError(key_path(key), "unknown key");
    }
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& key, const std::string& message) {
  if (!ok) throw ConfigError(key, message);
}

void check_ratios(const std::array<double, 3>& r, const std::string& key) {
  for (double v : r) require(v >= 0.0 && v <= 1.0, key, "ratios must lie in [0, 1]");
  require(std::abs(r[0] + r[1] + r[2] - 1.0) <= 1e-9, key, "ratios must sum to 1");
}

FamVariant parse_variant(const std::string& s, const std::string& key) {
  if (s == "standard") return FamVariant::standard;
  if (s == "deep") return FamVariant::deep;
  throw ConfigError(key, "expected \"standard\" or \"deep\", got \"" + s + "\"");
}

const char* variant_name(FamVariant v) { return v == FamVariant::deep ? "deep" : "standard"; }

json ratios_json(const std::array<double, 3>& r) { return json::array({r[0], r[1], r[2]}); }

}  // namespace

// ---- config ---------------------------------------------------------------

void ExperimentConfig::validate() const {
  const FLRunConfig& r = run;
  require(r.rounds == 0 || r.local_epochs >= 1, "federation.local_epochs", "must be >= 1");
  require(r.batch_size >= 2, "federation.batch_size", "must be >= 2");
  require(r.lambda >= 0.0, "federation.lambda", "must be >= 0");
  require(r.logit_scale > 0.0, "federation.logit_scale", "must be > 0");
  require(r.dc_hidden1 >= 1, "federation.dc_hidden1", "must be >= 1");
  require(r.dc_hidden2 >= 1, "federation.dc_hidden2", "must be >= 1");
  require(r.threads >= 1, "federation.threads", "must be >= 1");
  require(r.adam.learning_rate > 0.0, "optimizer.learning_rate", "must be > 0");
  require(r.adam.beta1 >= 0.0 && r.adam.beta1 < 1.0, "optimizer.beta1", "must lie in [0, 1)");
  require(r.adam.beta2 >= 0.0 && r.adam.beta2 < 1.0, "optimizer.beta2", "must lie in [0, 1)");
  require(r.adam.epsilon > 0.0, "optimizer.epsilon", "must be > 0");
  require(r.adam.weight_decay >= 0.0, "optimizer.weight_decay", "must be >= 0");
  require(r.ece_bins >= 1, "metrics.ece_bins", "must be >= 1");
  require(dca_step > 0.0 && dca_step < 1.0, "metrics.dca_step", "must lie in (0, 1)");
  require(!output_dir.empty(), "output_dir", "must not be empty");

  require(synthetic.has_value() != !clients.empty(), "data",
          "give exactly one of data.synthetic and data.clients");
  if (synthetic) {
    const SyntheticConfig& g = synthetic->generator;
    const std::string p = "data.synthetic.";
    require(g.num_classes >= 1, p + "num_classes", "must be >= 1");
    require(g.feature_dim >= 1, p + "feature_dim", "must be >= 1");
    require(g.num_domains >= 1, p + "num_domains", "must be >= 1");
    require(g.samples_per_class >= 1, p + "samples_per_class", "must be >= 1");
    require(g.target_samples_per_class >= 1, p + "target_samples_per_class", "must be >= 1");
    require(g.separation > 0.0 && g.separation <= 1.0, p + "separation", "must lie in (0, 1]");
    require(g.shift >= 0.0, p + "shift", "must be >= 0");
    require(!g.target_shift || *g.target_shift >= 0.0, p + "target_shift", "must be >= 0");
    require(g.shift_dims <= g.feature_dim, p + "shift_dims", "must not exceed feature_dim");
    require(g.noise_sigma >= 0.0, p + "noise_sigma", "must be >= 0");
    check_ratios(synthetic->split, p + "split");
    require(synthetic->target_pool_fraction > 0.0 && synthetic->target_pool_fraction < 1.0,
            p + "target_pool_fraction", "must lie in (0, 1)");
    require(r.n_clients == 0 || r.n_clients == g.num_domains, "federation.n_clients",
            "must equal data.synthetic.num_domains (or be 0)");
  } else {
    require(r.n_clients == 0 || r.n_clients == clients.size(), "federation.n_clients",
            "must equal the number of data.clients entries (or be 0)");
    for (std::size_t i = 0; i < clients.size(); ++i) {
      const std::string p = "data.clients[" + std::to_string(i) + "]";
      const ClientFiles& c = clients[i];
      if (c.file.empty()) {
        require(!c.train.empty(), p + ".train", "missing (or give .file)");
      } else {
        require(c.train.empty() && c.val.empty() && c.test.empty(), p + ".file",
                "cannot be combined with train/val/test");
        check_ratios(c.split, p + ".split");
      }
    }
  }
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  ObjectReader root(doc, "");
  root.read("seed", cfg.run.seed);
  root.read("output_dir", cfg.output_dir);

  if (const json* node = root.child("federation")) {
    ObjectReader f(*node, "federation");
    FLRunConfig& r = cfg.run;
    f.read("n_clients", r.n_clients);
    f.read("rounds", r.rounds);
    f.read("local_epochs", r.local_epochs);
    f.read("batch_size", r.batch_size);
    f.read("lambda", r.lambda);
    f.read("enable_da", r.enable_da);
    f.read("share_dc", r.share_dc);
    f.read("local_bn", r.local_bn);
    std::string variant = variant_name(r.fam_variant);
    f.read("fam_variant", variant);
    r.fam_variant = parse_variant(variant, "federation.fam_variant");
    f.read("fam_hidden", r.fam_hidden);
    f.read("dc_hidden1", r.dc_hidden1);
    f.read("dc_hidden2", r.dc_hidden2);
    f.read("dc_zero_init_output", r.dc_zero_init_output);
    f.read("logit_scale", r.logit_scale);
    f.read("threads", r.threads);
    f.finish();
  }
  if (const json* node = root.child("optimizer")) {
    ObjectReader o(*node, "optimizer");
    o.read("learning_rate", cfg.run.adam.learning_rate);
    o.read("beta1", cfg.run.adam.beta1);
    o.read("beta2", cfg.run.adam.beta2);
    o.read("epsilon", cfg.run.adam.epsilon);
    o.read("weight_decay", cfg.run.adam.weight_decay);
    o.finish();
  }
  if (const json* node = root.child("metrics")) {
    ObjectReader m(*node, "metrics");
    m.read("ece_bins", cfg.run.ece_bins);
    m.read("dca_step", cfg.dca_step);
    m.finish();
  }
  if (const json* node = root.child("data")) {
    ObjectReader d(*node, "data");
    if (const json* syn = d.child("synthetic")) {
      ObjectReader s(*syn, "data.synthetic");
      SyntheticBlock block;
      SyntheticConfig& g = block.generator;
      s.read("num_classes", g.num_classes);
      s.read("feature_dim", g.feature_dim);
      s.read("num_domains", g.num_domains);
      s.read("samples_per_class", g.samples_per_class);
      s.read("target_samples_per_class", g.target_samples_per_class);
      s.read("separation", g.separation);
      s.read("shift", g.shift);
      if (const json* ts = s.child("target_shift"); ts && !ts->is_null()) {
        if (!ts->is_number()) throw ConfigError("data.synthetic.target_shift", "expected a number or null");
        g.target_shift = ts->get<double>();
      }
      s.read("shift_dims", g.shift_dims);
      s.read("noise_sigma", g.noise_sigma);
      if (const json* seed = s.child("seed"); seed && !seed->is_null()) {
        if (!seed->is_number_unsigned()) {
          throw ConfigError("data.synthetic.seed", "expected a non-negative integer or null");
        }
        g.seed = seed->get<std::uint64_t>();
        block.seed_from_run = false;
      }
      s.read("split", block.split);
      s.read("target_pool_fraction", block.target_pool_fraction);
      s.finish();
      cfg.synthetic = block;
    }
    if (const json* list = d.child("clients")) {
      if (!list->is_array()) throw ConfigError("data.clients", "expected an array");
      for (std::size_t i = 0; i < list->size(); ++i) {
        ObjectReader c((*list)[i], "data.clients[" + std::to_string(i) + "]");
        ClientFiles files;
        c.read("train", files.train);
        c.read("val", files.val);
        c.read("test", files.test);
        c.read("file", files.file);
        c.read("split", files.split);
        c.finish();
        cfg.clients.push_back(files);
      }
    }
    d.read("target_pool", cfg.target_pool);
    d.read("global_test", cfg.global_test);
    d.finish();
  }
  root.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str());
}

std::string serialize_experiment_config(const ExperimentConfig& cfg) {
  const FLRunConfig& r = cfg.run;
  json doc;
  doc["seed"] = r.seed;
  doc["output_dir"] = cfg.output_dir;
  doc["federation"] = {
      {"n_clients", r.n_clients},
      {"rounds", r.rounds},
      {"local_epochs", r.local_epochs},
      {"batch_size", r.batch_size},
      {"lambda", r.lambda},
      {"enable_da", r.enable_da},
      {"share_dc", r.share_dc},
      {"local_bn", r.local_bn},
      {"fam_variant", variant_name(r.fam_variant)},
      {"fam_hidden", r.fam_hidden},
      {"dc_hidden1", r.dc_hidden1},
      {"dc_hidden2", r.dc_hidden2},
      {"dc_zero_init_output", r.dc_zero_init_output},
      {"logit_scale", r.logit_scale},
      {"threads", r.threads},
  };
  doc["optimizer"] = {
      {"learning_rate", r.adam.learning_rate},
      {"beta1", r.adam.beta1},
      {"beta2", r.adam.beta2},
      {"epsilon", r.adam.epsilon},
      {"weight_decay", r.adam.weight_decay},
  };
  doc["metrics"] = {{"ece_bins", r.ece_bins}, {"dca_step", cfg.dca_step}};
  json data = json::object();
  if (cfg.synthetic) {
    const SyntheticConfig& g = cfg.synthetic->generator;
    data["synthetic"] = {
        {"num_classes", g.num_classes},
        {"feature_dim", g.feature_dim},
        {"num_domains", g.num_domains},
        {"samples_per_class", g.samples_per_class},
        {"target_samples_per_class", g.target_samples_per_class},
        {"separation", g.separation},
        {"shift", g.shift},
        {"target_shift", g.target_shift ? json(*g.target_shift) : json(nullptr)},
        {"shift_dims", g.shift_dims},
        {"noise_sigma", g.noise_sigma},
        {"seed", cfg.synthetic->seed_from_run ? json(nullptr) : json(g.seed)},
        {"split", ratios_json(cfg.synthetic->split)},
        {"target_pool_fraction", cfg.synthetic->target_pool_fraction},
    };
  }
  if (!cfg.clients.empty()) {
    json list = json::array();
    for (const auto& c : cfg.clients) {
      json entry = json::object();
      if (c.file.empty()) {
        entry["train"] = c.train;
        entry["val"] = c.val;
        entry["test"] = c.test;
      } else {
        entry["file"] = c.file;
        entry["split"] = ratios_json(c.split);
      }
      list.push_back(entry);
    }
    data["clients"] = list;
  }
  data["target_pool"] = cfg.target_pool;
  data["global_test"] = cfg.global_test;
  doc["data"] = data;
  return doc.dump(2) + "\n";
}

// ---- data assembly --------------------------------------------------------

FederatedData build_synthetic_federation(const SyntheticBlock& block, std::uint64_t seed) {
  SyntheticConfig g = block.generator;
  if (block.seed_from_run) g.seed = seed;
  const SyntheticData synth = synth_generate(g);

  FederatedData data;
  data.prompt_bank = synth.target.prompt_matrix();
  for (std::size_t i = 0; i < synth.domains.size(); ++i) {
    const auto& ds = synth.domains[i];
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto parts = split_train_val_test(all, block.split, stream_seed(seed, {kSplitStream, i}));
    data.clients.push_back(ClientData{LabeledSplit::from_dataset(ds.subset(parts.train)),
                                      LabeledSplit::from_dataset(ds.subset(parts.val)),
                                      LabeledSplit::from_dataset(ds.subset(parts.test))});
  }
  std::vector<std::size_t> all(synth.target.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const double pool = block.target_pool_fraction;
  const auto parts = split_train_val_test(all, {pool, 0.0, 1.0 - pool},
                                          stream_seed(seed, {kTargetSplitStream}));
  data.target_pool = synth.target.subset(parts.train).feature_matrix();
  data.global_test = LabeledSplit::from_dataset(synth.target.subset(parts.test));
  return data;
}

namespace {

EmbeddingDataset read_input(const std::string& path, const std::string& key) {
  if (!std::filesystem::exists(path)) throw ConfigError(key, "file not found: " + path);
  return read_dataset(path);
}

}  // namespace

FederatedData load_federation(const ExperimentConfig& cfg) {
  if (cfg.synthetic) return build_synthetic_federation(*cfg.synthetic, cfg.run.seed);

  FederatedData data;
  std::optional<Matrix> bank;
  auto take_bank = [&](const EmbeddingDataset& ds, const std::string& key) {
    if (!ds.prompt_bank) return;
    Matrix m = ds.prompt_matrix();
    if (bank && !(*bank == m)) throw ConfigError(key, "prompt bank differs from other inputs");
    bank = std::move(m);
  };
  for (std::size_t i = 0; i < cfg.clients.size(); ++i) {
    const ClientFiles& c = cfg.clients[i];
    const std::string p = "data.clients[" + std::to_string(i) + "]";
    ClientData cd;
    if (!c.file.empty()) {
      const auto ds = read_input(c.file, p + ".file");
      take_bank(ds, p + ".file");
      std::vector<std::size_t> all(ds.size());
      std::iota(all.begin(), all.end(), std::size_t{0});
      const auto parts = split_train_val_test(all, c.split, stream_seed(cfg.run.seed, {kSplitStream, i}));
      cd = ClientData{LabeledSplit::from_dataset(ds.subset(parts.train)),
                      LabeledSplit::from_dataset(ds.subset(parts.val)),
                      LabeledSplit::from_dataset(ds.subset(parts.test))};
    } else {
      const auto train = read_input(c.train, p + ".train");
      take_bank(train, p + ".train");
      cd.train = LabeledSplit::from_dataset(train);
      if (!c.val.empty()) {
        const auto val = read_input(c.val, p + ".val");
        take_bank(val, p + ".val");
        cd.val = LabeledSplit::from_dataset(val);
      }
      if (!c.test.empty()) {
        const auto test = read_input(c.test, p + ".test");
        take_bank(test, p + ".test");
        cd.test = LabeledSplit::from_dataset(test);
      }
    }
    data.clients.push_back(std::move(cd));
  }
  if (!cfg.target_pool.empty()) {
    const auto pool = read_input(cfg.target_pool, "data.target_pool");
    take_bank(pool, "data.target_pool");
    data.target_pool = pool.feature_matrix();
  }
  if (!cfg.global_test.empty()) {
    const auto test = read_input(cfg.global_test, "data.global_test");
    take_bank(test, "data.global_test");
    data.global_test = LabeledSplit::from_dataset(test);
  }
  if (!bank) throw ConfigError("data", "no input file carries a prompt bank");
  data.prompt_bank = std::move(*bank);
  const std::size_t d = data.prompt_bank.cols();
  for (auto& c : data.clients) {
    for (auto* s : {&c.train, &c.val, &c.test}) {
      if (s->size() == 0) s->features = Matrix(0, d);
    }
  }
  if (cfg.run.enable_da && data.target_pool.rows() == 0) {
    throw ConfigError("data.target_pool", "required when federation.enable_da is true");
  }
  return data;
}

// ---- checkpoints ----------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'F', 'A', 'M', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* field) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw DataFormatError(field, "truncated checkpoint");
  }
  return v;
}

}  // namespace

void write_checkpoint(const FamCheckpoint& ckpt, const std::filesystem::path& path) {
  if (ckpt.values.size() != fam_param_count(ckpt.config)) {
    throw DimensionError("checkpoint: vector length does not match the FAM config");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint8_t>(out, ckpt.config.variant == FamVariant::deep ? 1 : 0);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.config.feature_dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.config.hidden_dim));
  put<std::uint64_t>(out, ckpt.values.size());
  out.write(reinterpret_cast<const char*>(ckpt.values.data()),
            static_cast<std::streamsize>(ckpt.values.size() * sizeof(double)));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

FamCheckpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw DataFormatError("magic", "not a FAM checkpoint");
  }
  if (get<std::uint32_t>(in, "version") != kCheckpointVersion) {
    throw DataFormatError("version", "unsupported checkpoint version");
  }
  FamCheckpoint ckpt;
  const auto variant = get<std::uint8_t>(in, "variant");
  if (variant > 1) throw DataFormatError("variant", "unknown FAM variant");
  ckpt.config.variant = variant == 1 ? FamVariant::deep : FamVariant::standard;
  ckpt.config.feature_dim = get<std::uint32_t>(in, "feature_dim");
  ckpt.config.hidden_dim = get<std::uint32_t>(in, "hidden_dim");
  const auto n = get<std::uint64_t>(in, "count");
  if (n != fam_param_count(ckpt.config)) {
    throw DataFormatError("count", "does not match the FAM dimensions");
  }
  ckpt.values.resize(n);
  if (!in.read(reinterpret_cast<char*>(ckpt.values.data()),
               static_cast<std::streamsize>(n * sizeof(double)))) {
    throw DataFormatError("values", "truncated checkpoint");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw DataFormatError("values", "trailing bytes after checkpoint");
  }
  return ckpt;
}

// ---- artifacts ------------------------------------------------------------

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void write_predictions(const std::vector<EvalRecord>& records, std::size_t k,
                       const std::filesystem::path& path) {
  std::ostringstream os;
  os << "label,predicted";
  for (std::size_t c = 0; c < k; ++c) os << ",p" << c;
  os << "\n";
  for (const auto& r : records) {
    os << r.true_label << "," << r.predicted_label;
    for (double p : r.probabilities) os << "," << format_double(p);
    os << "\n";
  }
  write_text(path, os.str());
}

std::vector<EvalRecord> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("label,predicted", 0) != 0) {
    throw DataFormatError(path.filename().string(), "unexpected predictions header");
  }
  std::vector<EvalRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 3) throw DataFormatError(path.filename().string(), "short row");
    std::vector<double> probs;
    for (std::size_t i = 2; i < cells.size(); ++i) probs.push_back(std::stod(cells[i]));
    records.push_back(make_record(static_cast<std::uint32_t>(std::stoul(cells[0])), std::move(probs)));
  }
  return records;
}

}  // namespace

std::string metrics_record_json(const RoundMetrics& m) {
  json rec = {
      {"round", m.round},
      {"split", m.split},
      {"samples", m.samples},
      {"acc", m.metrics.acc},
      {"bacc", m.metrics.bacc},
      {"macro_f1", m.metrics.macro_f1},
      {"auc", m.metrics.auc},
      {"ece", m.metrics.ece},
      {"loss_contr", optional_json(m.loss_contr)},
      {"loss_da", optional_json(m.loss_da)},
      {"comm_uploaded", m.comm_uploaded},
      {"comm_downloaded", m.comm_downloaded},
  };
  return rec.dump();
}

std::string format_metrics_log(const RunResult& result) {
  std::string out;
  for (const auto& m : result.metrics) out += metrics_record_json(m) + "\n";
  return out;
}

TrainSummary run_training(const ExperimentConfig& cfg) {
  cfg.validate();
  const FederatedData data = load_federation(cfg);
  RunResult result = run_federated(cfg.run, data);

  const std::filesystem::path dir = cfg.output_dir;
  std::filesystem::create_directories(dir / "predictions");
  write_text(dir / "config.json", serialize_experiment_config(cfg));
  write_text(dir / "metrics.jsonl", format_metrics_log(result));

  std::string curves = "round,split,acc,bacc,macro_f1\n";
  for (const auto& m : result.metrics) {
    curves += std::to_string(m.round) + "," + m.split + "," + format_double(m.metrics.acc) + "," +
              format_double(m.metrics.bacc) + "," + format_double(m.metrics.macro_f1) + "\n";
  }
  write_text(dir / "curves.csv", curves);

  std::string timings;
  for (std::size_t r = 0; r < result.ledger.train_seconds.size(); ++r) {
    timings += json{{"round", r + 1}, {"train_seconds", result.ledger.train_seconds[r]}}.dump() + "\n";
  }
  write_text(dir / "timings.jsonl", timings);

  json per_round = json::array();
  for (const auto& rc : result.ledger.rounds) {
    per_round.push_back({{"round", rc.round}, {"uploaded", rc.uploaded}, {"downloaded", rc.downloaded}});
  }
  const json ledger = {
      {"n_clients", data.clients.size()},
      {"fam_params", result.ledger.fam_params},
      {"dc_params", result.ledger.dc_params},
      {"per_round_total", result.ledger.per_round_total()},
      {"total_uploaded", result.ledger.total_uploaded()},
      {"total_downloaded", result.ledger.total_downloaded()},
      {"rounds", per_round},
  };
  write_text(dir / "ledger.json", ledger.dump(2) + "\n");

  const FamConfig fam_cfg = cfg.run.fam_config(data.feature_dim());
  write_checkpoint({fam_cfg, result.final_global}, dir / "final_fam.bin");
  write_checkpoint({fam_cfg, result.best_global}, dir / "best_fam.bin");
  for (const auto& [split, best] : result.best) {
    write_predictions(best.records, data.num_classes(), dir / "predictions" / (split + ".csv"));
  }
  return TrainSummary{std::move(result), dir};
}

std::vector<ReportRow> best_rounds_from_log(const std::filesystem::path& metrics_log) {
  std::ifstream in(metrics_log);
  if (!in) throw std::runtime_error("cannot open " + metrics_log.string());
  std::vector<ReportRow> rows;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
      ReportRow row;
      row.split = rec.at("split").get<std::string>();
      row.round = rec.at("round").get<std::size_t>();
      // NaN (e.g. AUC with one class present) is written as null
      auto number = [&](const char* key) {
        const json& v = rec.at(key);
        return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
      };
      row.metrics = SplitMetrics{number("acc"), number("bacc"), number("macro_f1"), number("auc"),
                                 number("ece")};
      auto it = index.find(row.split);
      if (it == index.end()) {
        index.emplace(row.split, rows.size());
        rows.push_back(row);
      } else if (row.metrics.acc > rows[it->second].metrics.acc) {
        rows[it->second] = row;
      }
    } catch (const json::exception& e) {
      throw DataFormatError("line " + std::to_string(line_no), e.what());
    }
  }
  std::sort(rows.begin(), rows.end(),
            [](const ReportRow& a, const ReportRow& b) { return a.split < b.split; });
  return rows;
}

std::vector<double> dca_thresholds(double step) {
  if (!(step > 0.0 && step < 1.0)) throw std::invalid_argument("dca step must lie in (0, 1)");
  std::vector<double> t;
  for (std::size_t i = 0;; ++i) {
    const double v = static_cast<double>(i) * step;
    if (v >= 1.0 - 1e-12) break;
    t.push_back(v);
  }
  return t;
}

std::string run_report(const std::filesystem::path& run_dir, std::size_t ece_bins, double dca_step) {
  const auto rows = best_rounds_from_log(run_dir / "metrics.jsonl");
  const auto thresholds = dca_thresholds(dca_step);

  std::ostringstream csv;
  csv << "split,best_round,acc,bacc,macro_f1,auc,ece\n";
  std::ostringstream table;
  table << std::left << std::setw(16) << "split" << std::right << std::setw(6) << "round"
        << std::setw(9) << "acc" << std::setw(9) << "bacc" << std::setw(9) << "f1"
        << std::setw(9) << "auc" << std::setw(9) << "ece" << "\n";
  table << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    csv << r.split << "," << r.round << "," << format_double(r.metrics.acc) << ","
        << format_double(r.metrics.bacc) << "," << format_double(r.metrics.macro_f1) << ","
        << format_double(r.metrics.auc) << "," << format_double(r.metrics.ece) << "\n";
    table << std::left << std::setw(16) << r.split << std::right << std::setw(6) << r.round
          << std::setw(9) << r.metrics.acc << std::setw(9) << r.metrics.bacc << std::setw(9)
          << r.metrics.macro_f1 << std::setw(9) << r.metrics.auc << std::setw(9) << r.metrics.ece
          << "\n";

    const auto pred_path = run_dir / "predictions" / (r.split + ".csv");
    if (!std::filesystem::exists(pred_path)) continue;
    const auto records = read_predictions(pred_path);
    if (records.empty()) continue;
    write_roc_csv(roc_auc_macro(records).macro_curve, run_dir / ("roc_" + r.split + ".csv"));
    write_reliability_csv(expected_calibration_error(records, ece_bins),
                          run_dir / ("reliability_" + r.split + ".csv"));
    write_dca_csv(dca_net_benefit(records, thresholds), run_dir / ("dca_" + r.split + ".csv"));
  }
  write_text(run_dir / "summary.csv", csv.str());
  return table.str();
}

}  // namespace faa
