#pragma once

// Image-text contrastive loss, the cosine/temperature classification rule and
// the domain cross-entropy, each returning exact gradients.

#include <span>
#include <stdexcept>
#include <vector>

#include "faa/numerics.hpp"

namespace faa {

class DegenerateVectorError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Softmax temperature; logits are similarity / tau.
struct Temperature {
  double tau = 0.01;

  static Temperature from_logit_scale(double scale) { return Temperature{1.0 / scale}; }
  double inverse() const { return 1.0 / tau; }
  void validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("temperature: tau must be > 0");
  }
};

inline constexpr double kProbabilityClamp = 1e-7;

// s[j][c] = <q_j, t_c> / (|q_j| |t_c|). Throws DegenerateVectorError on a
// zero-norm row in either argument.
Matrix cosine_similarity(const Matrix& queries, const Matrix& texts);
// Gradient with respect to `queries` only; texts are frozen.
Matrix cosine_similarity_backward(const Matrix& queries, const Matrix& texts,
                                  const Matrix& similarity, const Matrix& grad_similarity);

std::vector<double> class_probabilities(std::span<const double> similarity_row, Temperature t);

struct LossResult {
  double loss = 0.0;
  Matrix grad;
};

// Symmetric CLIP-style loss on a square similarity matrix: image-to-text
// softmax over rows, text-to-image softmax over columns, matched pairs on the
// diagonal.
LossResult contrastive_loss(const Matrix& similarity, Temperature t);

// Binary cross-entropy averaged over all rows; predictions clamped to
// [1e-7, 1 - 1e-7] before the logs. `predictions` is n x 1.
LossResult da_loss(const Matrix& predictions, std::span<const double> labels);

}  // namespace faa
