#pragma once

// Per-client domain discriminator and the gradient-reversal coupling that
// trains it against the feature adaptation module.

#include <cstdint>
#include <vector>

#include "faa/fam.hpp"
#include "faa/numerics.hpp"

namespace faa {

struct DomainClassifierConfig {
  std::size_t feature_dim = 512;
  std::size_t hidden1 = 512;
  std::size_t hidden2 = 256;
  // Zero the output linear so every prediction starts at exactly 0.5.
  bool zero_init_output = false;

  void validate() const;
};

std::size_t domain_classifier_param_count(const DomainClassifierConfig& cfg);

struct DomainClassifierCache {
  Matrix input;
  Matrix h1_pre;
  BatchNormCache bn1;
  Matrix bn1_out;
  Matrix h1;
  Matrix h2_pre;
  BatchNormCache bn2;
  Matrix bn2_out;
  Matrix h2;
  Matrix logit;
  Matrix prob;
};

struct DomainClassifierOutput {
  Matrix prob;  // rows x 1, each in (0,1)
  DomainClassifierCache cache;
};

// linear -> BN -> ReLU -> linear -> BN -> ReLU -> linear -> sigmoid
class DomainClassifier {
 public:
  DomainClassifier() = default;
  DomainClassifier(const DomainClassifierConfig& cfg, std::uint64_t seed);

  const DomainClassifierConfig& config() const { return cfg_; }

  DomainClassifierOutput forward(const Matrix& features, Mode mode);
  DomainClassifierOutput forward_eval(const Matrix& features) const;
  // Accumulates parameter gradients; returns d loss / d features.
  Matrix backward(const DomainClassifierCache& cache, const Matrix& grad_prob);

  // Order: W1, b1, bn1 (gamma, beta, mean, var), W2, b2, bn2, W3, b3.
  std::vector<double> to_vector() const;
  void from_vector(std::span<const double> flat);

  std::vector<ParamBlock*> parameters();
  void zero_grad();
  void adam_step(const AdamConfig& cfg);

  Linear& output_linear() { return l3_; }

 private:
  DomainClassifierOutput compute(const Matrix& features, Mode mode) const;

  DomainClassifierConfig cfg_;
  Linear l1_;
  BatchNormState bn1_;
  Linear l2_;
  BatchNormState bn2_;
  Linear l3_;
};

// 2B masked feature rows: the first B from the client (label 1), the last B
// from the shared target pool (label 0).
struct DomainBatch {
  Matrix features;
  std::vector<double> labels;

  std::size_t half() const { return labels.size() / 2; }
};

// Throws std::invalid_argument unless the batch has exactly B ones and B zeros.
void validate_domain_batch(const DomainBatch& batch);
DomainBatch make_domain_batch(const Matrix& source, const Matrix& target);

struct AdversarialResult {
  double da_loss = 0.0;
  Matrix predictions;  // 2B x 1 discriminator outputs
};

// Runs source and target raw features through the FAM, builds a balanced
// DomainBatch from the masked outputs and accumulates:
//   dc grads  += dL_DA/dtheta_D                 (descent for the discriminator)
//   fam grads += -lambda * dL_DA/dtheta_att     (ascent through the GRL)
// `source_out` is the FAM's train-mode output on the source batch, so the
// contrastive path can share it. Target rows are normalized with their own
// batch statistics but do not move the FAM's running statistics.
AdversarialResult adversarial_backprop(FeatureAdaptationModule& fam, DomainClassifier& dc,
                                       const FamOutput& source_out,
                                       const Matrix& target_features, double lambda);

}  // namespace faa
