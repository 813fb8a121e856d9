#include "faa/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "faa/random.hpp"

namespace faa {

static_assert(std::endian::native == std::endian::little,
              "embedding I/O assumes a little-endian host");

Matrix EmbeddingDataset::feature_matrix() const {
  return Matrix(size(), feature_dim, std::vector<double>(features.begin(), features.end()));
}

Matrix EmbeddingDataset::prompt_matrix() const {
  if (!prompt_bank) throw std::invalid_argument("dataset has no prompt bank");
  return Matrix(num_classes(), feature_dim,
                std::vector<double>(prompt_bank->begin(), prompt_bank->end()));
}

EmbeddingDataset EmbeddingDataset::subset(std::span<const std::size_t> indices) const {
  EmbeddingDataset out;
  out.feature_dim = feature_dim;
  out.class_names = class_names;
  out.prompt_bank = prompt_bank;
  out.labels.reserve(indices.size());
  out.features.reserve(indices.size() * feature_dim);
  for (std::size_t i : indices) {
    if (i >= size()) throw std::out_of_range("dataset subset: index out of range");
    out.labels.push_back(labels[i]);
    auto begin = features.begin() + static_cast<std::ptrdiff_t>(i * feature_dim);
    out.features.insert(out.features.end(), begin, begin + feature_dim);
  }
  return out;
}

void EmbeddingDataset::validate() const {
  if (feature_dim == 0) throw DataFormatError("D", "feature dimension must be >= 1");
  if (features.size() != labels.size() * feature_dim) {
    throw DataFormatError("features", "length is not N x D");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes()) {
      throw DataFormatError("record[" + std::to_string(i) + "].label",
                            "label " + std::to_string(labels[i]) + " out of range for K=" +
                                std::to_string(num_classes()));
    }
  }
  for (float v : features) {
    if (!std::isfinite(v)) throw DataFormatError("features", "non-finite value");
  }
  if (prompt_bank) {
    if (prompt_bank->size() != num_classes() * feature_dim) {
      throw DataFormatError("prompt_bank", "length is not K x D");
    }
    for (std::size_t c = 0; c < num_classes(); ++c) {
      bool nonzero = false;
      for (std::size_t d = 0; d < feature_dim; ++d) {
        const float v = (*prompt_bank)[c * feature_dim + d];
        if (!std::isfinite(v)) throw DataFormatError("prompt_bank", "non-finite value");
        nonzero = nonzero || v != 0.0f;
      }
      if (!nonzero) {
        throw DataFormatError("prompt_bank[" + std::to_string(c) + "]", "zero row");
      }
    }
  }
}

// ---- binary format --------------------------------------------------------

namespace {

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const std::string& field) {
    T v;
    std::memcpy(&v, need(sizeof(T), field), sizeof(T));
    return v;
  }
  void get_bytes(void* out, std::size_t n, const std::string& field) {
    if (n > 0) std::memcpy(out, need(n, field), n);
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::uint8_t* need(std::size_t n, const std::string& field) {
    if (remaining() < n) throw DataFormatError(field, "truncated file");
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'F', 'A', 'E', 'B'};

}  // namespace

std::vector<std::uint8_t> encode_dataset(const EmbeddingDataset& ds) {
  ds.validate();
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kEmbeddingFormatVersion);
  w.put<std::uint32_t>(ds.feature_dim);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.num_classes()));
  w.put<std::uint64_t>(ds.size());
  for (const auto& name : ds.class_names) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name.data(), name.size());
  }
  w.put<std::uint8_t>(ds.prompt_bank ? 1 : 0);
  if (ds.prompt_bank) w.put_bytes(ds.prompt_bank->data(), ds.prompt_bank->size() * sizeof(float));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    w.put<std::uint32_t>(ds.labels[i]);
    w.put_bytes(ds.features.data() + i * ds.feature_dim, ds.feature_dim * sizeof(float));
  }
  return std::move(w.bytes);
}

EmbeddingDataset decode_dataset(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  char magic[4];
  r.get_bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw DataFormatError("magic", "expected \"FAEB\"");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kEmbeddingFormatVersion) {
    throw DataFormatError("version", "unsupported version " + std::to_string(version));
  }
  EmbeddingDataset ds;
  ds.feature_dim = r.get<std::uint32_t>("D");
  if (ds.feature_dim == 0) throw DataFormatError("D", "feature dimension must be >= 1");
  const auto k = r.get<std::uint32_t>("K");
  const auto n = r.get<std::uint64_t>("N");
  ds.class_names.reserve(std::min<std::size_t>(k, r.remaining() / 4));
  for (std::uint32_t c = 0; c < k; ++c) {
    const std::string field = "class_name[" + std::to_string(c) + "]";
    const auto len = r.get<std::uint32_t>(field);
    if (len > r.remaining()) throw DataFormatError(field, "truncated file");
    std::string name(len, '\0');
    r.get_bytes(name.data(), len, field);
    ds.class_names.push_back(std::move(name));
  }
  const auto flag = r.get<std::uint8_t>("prompt_flag");
  if (flag > 1) throw DataFormatError("prompt_flag", "must be 0 or 1");
  const std::size_t row_bytes = std::size_t{ds.feature_dim} * sizeof(float);
  if (flag == 1) {
    if (std::size_t{k} * row_bytes > r.remaining()) {
      throw DataFormatError("prompt_bank", "truncated file");
    }
    ds.prompt_bank.emplace(std::size_t{k} * ds.feature_dim);
    r.get_bytes(ds.prompt_bank->data(), std::size_t{k} * row_bytes, "prompt_bank");
  }
  if (n > r.remaining() / (row_bytes + 4)) throw DataFormatError("records", "truncated file");
  ds.labels.resize(n);
  ds.features.resize(n * ds.feature_dim);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::string field = "record[" + std::to_string(i) + "]";
    ds.labels[i] = r.get<std::uint32_t>(field + ".label");
    if (ds.labels[i] >= k) {
      throw DataFormatError(field + ".label", "label " + std::to_string(ds.labels[i]) +
                                                  " out of range for K=" + std::to_string(k));
    }
    r.get_bytes(ds.features.data() + i * ds.feature_dim, row_bytes, field + ".features");
  }
  if (r.remaining() != 0) throw DataFormatError("records", "trailing bytes after last record");
  ds.validate();
  return ds;
}

void write_dataset(const EmbeddingDataset& ds, const std::filesystem::path& path) {
  const auto bytes = encode_dataset(ds);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

EmbeddingDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_dataset(bytes);
}

// ---- partitioning ---------------------------------------------------------

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(std::span<const std::uint32_t> labels) {
  std::vector<std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= by_class.size()) by_class.resize(labels[i] + 1);
    by_class[labels[i]].push_back(i);
  }
  return by_class;
}

}  // namespace

IndexLists dirichlet_partition(std::span<const std::uint32_t> labels,
                               const DirichletPartitionConfig& cfg) {
  if (labels.empty()) throw std::invalid_argument("dirichlet_partition: no labels");
  if (!(cfg.alpha > 0.0)) throw std::invalid_argument("dirichlet_partition: alpha must be > 0");
  if (cfg.n_clients < 1) throw std::invalid_argument("dirichlet_partition: n_clients must be >= 1");
  auto rng = make_rng(cfg.seed, {0xD1u});
  std::gamma_distribution<double> gamma(cfg.alpha, 1.0);
  IndexLists parts(cfg.n_clients);
  for (auto& members : indices_by_class(labels)) {
    if (members.empty()) continue;
    shuffle_in_place(members, rng);
    std::vector<double> share(cfg.n_clients);
    double total = 0.0;
    for (double& s : share) {
      s = gamma(rng);
      total += s;
    }
    if (!(total > 0.0)) {
      // every draw underflowed (tiny alpha): all mass on one client
      std::uniform_int_distribution<std::size_t> pick(0, cfg.n_clients - 1);
      std::fill(share.begin(), share.end(), 0.0);
      share[pick(rng)] = 1.0;
      total = 1.0;
    }
    const std::size_t n = members.size();
    double cumulative = 0.0;
    std::size_t begin = 0;
    for (std::size_t c = 0; c < cfg.n_clients; ++c) {
      cumulative += share[c] / total;
      std::size_t end = c + 1 == cfg.n_clients
                            ? n
                            : std::min(n, static_cast<std::size_t>(std::floor(cumulative * n)));
      end = std::max(end, begin);
      parts[c].insert(parts[c].end(), members.begin() + static_cast<std::ptrdiff_t>(begin),
                      members.begin() + static_cast<std::ptrdiff_t>(end));
      begin = end;
    }
  }
  for (auto& p : parts) std::sort(p.begin(), p.end());
  return parts;
}

IndexLists pathological_partition(std::span<const std::uint32_t> labels, std::size_t n_clients,
                                  std::uint64_t seed) {
  if (labels.empty()) throw std::invalid_argument("pathological_partition: no labels");
  if (n_clients < 1) throw std::invalid_argument("pathological_partition: n_clients must be >= 1");
  const std::size_t k = *std::max_element(labels.begin(), labels.end()) + 1;
  if (n_clients > k) {
    throw std::invalid_argument("pathological_partition: " + std::to_string(n_clients) +
                                " clients for " + std::to_string(k) + " classes");
  }
  std::vector<std::size_t> classes(k);
  std::iota(classes.begin(), classes.end(), 0);
  auto rng = make_rng(seed, {0xBAu});
  shuffle_in_place(classes, rng);

  const std::size_t per_client = k / n_clients;
  std::vector<std::size_t> owner(k);
  for (std::size_t pos = 0; pos < k; ++pos) {
    owner[classes[pos]] =
        pos < per_client * n_clients ? pos / per_client : pos - per_client * n_clients;
  }
  IndexLists parts(n_clients);
  for (std::size_t i = 0; i < labels.size(); ++i) parts[owner[labels[i]]].push_back(i);
  return parts;
}

SplitIndices split_train_val_test(std::span<const std::size_t> indices,
                                  std::array<double, 3> ratios, std::uint64_t seed) {
  if (indices.empty()) throw std::invalid_argument("split: empty index list");
  for (double r : ratios) {
    if (!(r >= 0.0)) throw std::invalid_argument("split: ratios must be >= 0");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw std::invalid_argument("split: ratios must sum to 1");
  }
  std::vector<std::size_t> order(indices.begin(), indices.end());
  auto rng = make_rng(seed, {0x5Bu});
  shuffle_in_place(order, rng);
  const std::size_t n = order.size();
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[1]));
  const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[2]));
  const std::size_t n_train = n - n_val - n_test;
  SplitIndices out;
  auto it = order.begin();
  out.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
  it += static_cast<std::ptrdiff_t>(n_train);
  out.val.assign(it, it + static_cast<std::ptrdiff_t>(n_val));
  it += static_cast<std::ptrdiff_t>(n_val);
  out.test.assign(it, order.end());
  return out;
}

double mean_client_label_entropy(std::span<const std::uint32_t> labels, const IndexLists& parts,
                                 std::size_t num_classes) {
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& part : parts) {
    if (part.empty()) continue;
    std::vector<double> hist(num_classes, 0.0);
    for (std::size_t i : part) hist.at(labels[i]) += 1.0;
    double h = 0.0;
    for (double c : hist) {
      if (c > 0.0) {
        const double p = c / static_cast<double>(part.size());
        h -= p * std::log(p);
      }
    }
    total += h;
    ++counted;
  }
  return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

// ---- synthetic data -------------------------------------------------------

void SyntheticConfig::validate() const {
  if (num_classes < 1 || feature_dim < 1 || num_domains < 1 || samples_per_class < 1 ||
      target_samples_per_class < 1) {
    throw std::invalid_argument("synthetic: counts must be >= 1");
  }
  if (!(separation > 0.0 && separation <= 1.0)) {
    throw std::invalid_argument("synthetic: separation must be in (0, 1]");
  }
  if (!(shift >= 0.0) || !(noise_sigma >= 0.0) || (target_shift && !(*target_shift >= 0.0))) {
    throw std::invalid_argument("synthetic: shift and noise_sigma must be >= 0");
  }
  if (shift_dims > feature_dim) throw std::invalid_argument("synthetic: shift_dims > feature_dim");
}

namespace {

std::vector<double> random_unit(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(d);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = normal(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
  } while (!(norm > 0.0));
  for (double& x : v) x /= norm;
  return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

EmbeddingDataset sample_domain(const SyntheticConfig& cfg,
                               const std::vector<std::vector<double>>& anchors,
                               const std::vector<float>& bank, std::size_t domain,
                               std::size_t per_class) {
  auto rng = make_rng(cfg.seed, {0xD0u, domain});
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d = cfg.feature_dim;

  const bool is_target = domain == cfg.num_domains;
  const double magnitude = is_target && cfg.target_shift ? *cfg.target_shift : cfg.shift;
  std::vector<double> offset(d, 0.0);
  if (magnitude > 0.0) {
    std::vector<std::size_t> dims(d);
    std::iota(dims.begin(), dims.end(), 0);
    shuffle_in_place(dims, rng);
    const std::size_t support = cfg.shift_dims == 0 ? d : cfg.shift_dims;
    auto dir = random_unit(support, rng);
    for (std::size_t i = 0; i < support; ++i) offset[dims[i]] = magnitude * dir[i];
  }

  EmbeddingDataset ds;
  ds.feature_dim = static_cast<std::uint32_t>(d);
  for (std::size_t c = 0; c < cfg.num_classes; ++c) ds.class_names.push_back("class_" + std::to_string(c));
  ds.prompt_bank = bank;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    for (std::size_t s = 0; s < per_class; ++s) {
      std::vector<float> row(d);
      double norm = 0.0;
      do {
        norm = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          const double noise = cfg.noise_sigma > 0.0 ? cfg.noise_sigma * normal(rng) : 0.0;
          row[i] = static_cast<float>(anchors[c][i] + offset[i] + noise);
          norm += static_cast<double>(row[i]) * row[i];
        }
      } while (!(norm > 0.0));
      ds.labels.push_back(static_cast<std::uint32_t>(c));
      ds.features.insert(ds.features.end(), row.begin(), row.end());
    }
  }
  return ds;
}

}  // namespace

SyntheticData synth_generate(const SyntheticConfig& cfg) {
  cfg.validate();
  auto rng = make_rng(cfg.seed, {0xA0u});
  std::vector<std::vector<double>> anchors;
  constexpr int kMaxAttempts = 100000;
  int attempts = 0;
  while (anchors.size() < cfg.num_classes) {
    if (++attempts > kMaxAttempts) {
      throw std::invalid_argument("synthetic: cannot place anchors under the separation bound");
    }
    auto candidate = random_unit(cfg.feature_dim, rng);
    bool ok = true;
    for (const auto& a : anchors) ok = ok && std::abs(dot(a, candidate)) < cfg.separation;
    if (ok) anchors.push_back(std::move(candidate));
  }
  std::vector<float> bank;
  for (const auto& a : anchors)
    for (double v : a) bank.push_back(static_cast<float>(v));
  // anchors as stored, so shift=0, sigma=0 samples match the bank bit for bit
  for (std::size_t c = 0; c < anchors.size(); ++c)
    for (std::size_t i = 0; i < cfg.feature_dim; ++i)
      anchors[c][i] = bank[c * cfg.feature_dim + i];

  SyntheticData out;
  for (std::size_t dom = 0; dom < cfg.num_domains; ++dom) {
    out.domains.push_back(sample_domain(cfg, anchors, bank, dom, cfg.samples_per_class));
  }
  out.target = sample_domain(cfg, anchors, bank, cfg.num_domains, cfg.target_samples_per_class);
  return out;
}

}  // namespace faa
