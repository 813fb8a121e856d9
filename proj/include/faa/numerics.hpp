#pragma once

// Dense row-major matrices with the handful of layers a feature adapter and a
// domain discriminator need, each paired with an exact reverse-mode backward.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace faa {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DegenerateBatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  void fill(double v);
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

// Throws DimensionError with `what` naming the operation when shapes differ.
void require_same_shape(const Matrix& a, const Matrix& b, const char* what);

Matrix matmul(const Matrix& a, const Matrix& b);     // a b
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a b^T
Matrix transpose(const Matrix& a);
Matrix hadamard(const Matrix& a, const Matrix& b);
void add_in_place(Matrix& dst, const Matrix& src);
void scale_in_place(Matrix& m, double factor);
Matrix vstack(const Matrix& top, const Matrix& bottom);
Matrix take_rows(const Matrix& m, std::size_t first, std::size_t count);
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices);

// Learnable tensor plus its gradient accumulator and Adam moments.
struct ParamBlock {
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;
  std::uint64_t step_count = 0;

  ParamBlock() = default;
  explicit ParamBlock(Matrix initial);

  void zero_grad() { grad.fill(0.0); }
};

struct AdamConfig {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-6;
  double weight_decay = 0.02;

  void validate() const;
};

// Bias-corrected Adam with decoupled weight decay. Clears the gradient.
void adam_step(ParamBlock& p, const AdamConfig& cfg);

enum class Mode { train, eval };

// ---- linear ---------------------------------------------------------------

Matrix linear_forward(const Matrix& x, const Matrix& weight, const Matrix& bias);

struct LinearGrads {
  Matrix input;
  Matrix weight;
  Matrix bias;
};
LinearGrads linear_backward(const Matrix& x, const Matrix& weight, const Matrix& grad_out);

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng);
  Linear(Matrix weight, Matrix bias);

  std::size_t in_features() const { return weight.value.rows(); }
  std::size_t out_features() const { return weight.value.cols(); }

  Matrix forward(const Matrix& x) const;
  // Accumulates parameter gradients; returns the input gradient.
  Matrix backward(const Matrix& x, const Matrix& grad_out);

  ParamBlock weight;
  ParamBlock bias;
};

// ---- batch normalization --------------------------------------------------

struct BatchNormCache {
  Mode mode = Mode::eval;
  Matrix normalized;               // x_hat, B x m
  std::vector<double> inv_std;     // per column
  std::vector<double> batch_mean;  // train mode only
  std::vector<double> batch_var;   // train mode only, biased
};

struct BatchNormState {
  ParamBlock gamma;
  ParamBlock beta;
  Matrix running_mean;  // 1 x m
  Matrix running_var;   // 1 x m
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t features);
  std::size_t features() const { return gamma.value.cols(); }
};

// Train mode normalizes by batch statistics (biased variance); eval mode by
// the running estimates. Does not touch the running estimates.
Matrix batchnorm_apply(const Matrix& x, const BatchNormState& bn, Mode mode,
                       BatchNormCache& cache);
// Folds a train-mode cache's batch statistics into the running estimates,
// using the unbiased variance.
void batchnorm_update_running(BatchNormState& bn, const BatchNormCache& cache);
// batchnorm_apply followed, in train mode, by batchnorm_update_running.
Matrix batchnorm_forward(const Matrix& x, BatchNormState& bn, Mode mode, BatchNormCache& cache);
// Accumulates gamma/beta gradients into `bn`; returns the input gradient.
Matrix batchnorm_backward(const BatchNormCache& cache, BatchNormState& bn, const Matrix& grad_out);

// ---- activations ----------------------------------------------------------

enum class Activation { leaky_relu, relu, sigmoid, softmax_rows };

inline constexpr double kLeakySlope = 0.01;

Matrix activation_forward(const Matrix& x, Activation kind);
// `input` and `output` are the forward call's argument and result.
Matrix activation_backward(Activation kind, const Matrix& input, const Matrix& output,
                           const Matrix& grad_out);

// Identity forward; backward scales the upstream gradient by -lambda.
Matrix grad_reverse(const Matrix& upstream, double lambda);

// ---- gradient checking ----------------------------------------------------

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Five-point central differences of `f` at `point` (error O(h^4)), compared
// per coordinate with `analytic`. Relative error is
// |a - n| / max(|a|, |n|, floor).
GradCheckResult finite_diff_check(const std::function<double(std::span<const double>)>& f,
                                  std::span<const double> point,
                                  std::span<const double> analytic, double h = 1e-5,
                                  double floor = 1e-7);

}  // namespace faa
