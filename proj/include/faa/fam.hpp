#pragma once

// Feature Adaptation Module: a small MLP over frozen image features whose
// per-sample softmax output is used as a multiplicative attention mask.
//
//   standard: linear(D,H) -> BN(H) -> LeakyReLU -> linear(H,D) -> softmax
//   deep:     linear(D,H) -> BN(H) -> LeakyReLU -> linear(H,H) -> BN(H)
//             -> LeakyReLU -> linear(H,D) -> softmax
//
// The flat parameter vector is the federated payload. Its layout is frozen:
//   standard: W1, b1, gamma1, beta1, mean1, var1, W2, b2
//   deep:     W1, b1, gamma1, beta1, mean1, var1, Wm, bm, gamma2, beta2,
//             mean2, var2, W2, b2

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "faa/numerics.hpp"

namespace faa {

enum class FamVariant { standard, deep };

struct FamConfig {
  std::size_t feature_dim = 512;
  std::size_t hidden_dim = 512;
  FamVariant variant = FamVariant::standard;

  void validate() const;
};

std::size_t fam_param_count(const FamConfig& cfg);
// Parameters excluding the batch-norm running statistics.
std::size_t fam_learnable_count(const FamConfig& cfg);

// Half-open range inside the flat vector.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

// Ranges holding batch-norm state (gamma, beta, running mean, running var).
std::vector<Segment> fam_bn_segments(const FamConfig& cfg);

// Elementwise product I* = A (.) I.
Matrix apply_mask(const Matrix& features, const Matrix& mask);

struct FamCache {
  Mode mode = Mode::eval;
  Matrix features;
  Matrix hidden_pre;      // first linear output
  BatchNormCache bn_in;
  Matrix bn_in_out;
  Matrix act_in;          // LeakyReLU output
  Matrix mid_pre;         // deep only
  BatchNormCache bn_mid;  // deep only
  Matrix bn_mid_out;      // deep only
  Matrix act_mid;         // deep only
  Matrix logits;
  Matrix mask;
};

struct FamOutput {
  Matrix mask;
  Matrix masked;
  FamCache cache;
};

class FeatureAdaptationModule {
 public:
  FeatureAdaptationModule() = default;
  FeatureAdaptationModule(const FamConfig& cfg, std::uint64_t seed);
  // All weights, biases and BN affine terms zero; running stats 0 / 1.
  static FeatureAdaptationModule zeros(const FamConfig& cfg);

  const FamConfig& config() const { return cfg_; }

  // Train mode needs at least 2 rows. `update_running` = false leaves the
  // running statistics untouched while still normalizing by batch stats.
  FamOutput forward(const Matrix& features, Mode mode, bool update_running = true);
  FamOutput forward_eval(const Matrix& features) const;

  // Reverse of forward + apply_mask. Accumulates parameter gradients and
  // returns d loss / d features (both the mask path and the identity path).
  Matrix backward(const FamCache& cache, const Matrix& grad_masked);

  std::vector<double> to_vector() const;
  void from_vector(std::span<const double> flat);

  std::vector<ParamBlock*> parameters();
  void zero_grad();
  void adam_step(const AdamConfig& cfg);

  Linear& input_linear() { return in_; }
  Linear& output_linear() { return out_; }
  BatchNormState& input_norm() { return bn_in_; }

 private:
  explicit FeatureAdaptationModule(const FamConfig& cfg);
  FamOutput compute(const Matrix& features, Mode mode) const;

  FamConfig cfg_;
  Linear in_;
  BatchNormState bn_in_;
  std::optional<Linear> mid_;
  std::optional<BatchNormState> bn_mid_;
  Linear out_;
};

}  // namespace faa
