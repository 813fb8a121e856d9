#pragma once

// Embedding datasets: the on-disk format, client partitioners, split
// generation and a synthetic domain-shifted generator.
//
// File layout (little-endian):
//   "FAEB" | u32 version=1 | u32 D | u32 K | u64 N
//   K x (u32 name_len, name bytes)
//   u8 prompt_flag, then K x D f32 prompt rows if flag == 1
//   N x (u32 label, D x f32)

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "faa/numerics.hpp"

namespace faa {

// Parse failure; `field()` names the offending header field or record.
class DataFormatError : public std::runtime_error {
 public:
  DataFormatError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

struct EmbeddingDataset {
  std::uint32_t feature_dim = 0;
  std::vector<std::string> class_names;
  std::optional<std::vector<float>> prompt_bank;  // K x D row-major
  std::vector<std::uint32_t> labels;
  std::vector<float> features;  // N x D row-major

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return class_names.size(); }

  Matrix feature_matrix() const;
  Matrix prompt_matrix() const;  // throws if no bank
  EmbeddingDataset subset(std::span<const std::size_t> indices) const;
  void validate() const;

  friend bool operator==(const EmbeddingDataset&, const EmbeddingDataset&) = default;
};

std::vector<std::uint8_t> encode_dataset(const EmbeddingDataset& ds);
EmbeddingDataset decode_dataset(std::span<const std::uint8_t> bytes);
void write_dataset(const EmbeddingDataset& ds, const std::filesystem::path& path);
EmbeddingDataset read_dataset(const std::filesystem::path& path);

using IndexLists = std::vector<std::vector<std::size_t>>;

struct DirichletPartitionConfig {
  double alpha = 0.5;
  std::size_t n_clients = 2;
  std::uint64_t seed = 0;
};

// Per class: shuffle that class's indices, draw client proportions from
// Dirichlet(alpha, ..., alpha) and cut the list into contiguous slices at the
// cumulative proportions.
IndexLists dirichlet_partition(std::span<const std::uint32_t> labels,
                               const DirichletPartitionConfig& cfg);

// Disjoint class subsets: classes are permuted, each client takes K / N of
// them, and the K mod N leftovers go round-robin from client 0.
IndexLists pathological_partition(std::span<const std::uint32_t> labels, std::size_t n_clients,
                                  std::uint64_t seed);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Seeded shuffle; val and test get floor(n * ratio), train the rest.
SplitIndices split_train_val_test(std::span<const std::size_t> indices,
                                  std::array<double, 3> ratios, std::uint64_t seed);

struct SyntheticConfig {
  std::size_t num_classes = 8;
  std::size_t feature_dim = 64;
  std::size_t num_domains = 3;  // labelled source domains; one extra target domain
  std::size_t samples_per_class = 40;
  std::size_t target_samples_per_class = 40;
  double separation = 0.35;  // max |cosine| between class anchors
  double shift = 0.5;        // norm of each source domain's offset
  std::optional<double> target_shift;  // target offset norm; unset = shift
  std::size_t shift_dims = 0;  // coordinates carrying the offset; 0 = all
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticData {
  std::vector<EmbeddingDataset> domains;
  EmbeddingDataset target;
};

// Class anchors double as the prompt bank of every output dataset. Sample =
// anchor + domain offset + N(0, sigma^2) per coordinate.
SyntheticData synth_generate(const SyntheticConfig& cfg);

// Client class-histogram entropy (nats), averaged over non-empty clients.
double mean_client_label_entropy(std::span<const std::uint32_t> labels, const IndexLists& parts,
                                 std::size_t num_classes);

}  // namespace faa
