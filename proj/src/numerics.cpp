#include "faa/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace faa {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows * cols) {
    throw DimensionError("Matrix: " + std::to_string(values_.size()) + " values for shape " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  values_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer");
    values_.insert(values_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

void Matrix::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + a.shape_string() + " * " + b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: " + a.shape_string() + "^T * " + b.shape_string());
  }
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto arow = a.row(k);
    auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + a.shape_string() + " * " + b.shape_string() + "^T");
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto brow = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += arow[k] * brow[k];
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix out(a.rows(), a.cols());
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  return out;
}

void add_in_place(Matrix& dst, const Matrix& src) {
  require_same_shape(dst, src, "add");
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

void scale_in_place(Matrix& m, double factor) {
  for (double& v : m.values()) v *= factor;
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
  if (top.cols() != bottom.cols()) {
    throw DimensionError("vstack: " + top.shape_string() + " over " + bottom.shape_string());
  }
  std::vector<double> values(top.values().begin(), top.values().end());
  values.insert(values.end(), bottom.values().begin(), bottom.values().end());
  return Matrix(top.rows() + bottom.rows(), top.cols(), std::move(values));
}

Matrix take_rows(const Matrix& m, std::size_t first, std::size_t count) {
  if (first + count > m.rows()) throw DimensionError("take_rows: out of range");
  auto begin = m.values().begin() + static_cast<std::ptrdiff_t>(first * m.cols());
  return Matrix(count, m.cols(),
                std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(count * m.cols())));
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), m.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= m.rows()) throw DimensionError("gather_rows: index out of range");
    std::copy_n(m.row(indices[i]).begin(), m.cols(), out.row(i).begin());
  }
  return out;
}

// ---- optimizer ------------------------------------------------------------

ParamBlock::ParamBlock(Matrix initial)
    : value(std::move(initial)),
      grad(value.rows(), value.cols()),
      adam_m(value.rows(), value.cols()),
      adam_v(value.rows(), value.cols()) {}

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("adam: learning_rate must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw std::invalid_argument("adam: beta1 must be in (0,1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw std::invalid_argument("adam: beta2 must be in (0,1)");
  if (!(epsilon > 0.0)) throw std::invalid_argument("adam: epsilon must be > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("adam: weight_decay must be >= 0");
}

void adam_step(ParamBlock& p, const AdamConfig& cfg) {
  p.step_count += 1;
  const double t = static_cast<double>(p.step_count);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  auto w = p.value.values();
  auto g = p.grad.values();
  auto m = p.adam_m.values();
  auto v = p.adam_v.values();
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    if (cfg.weight_decay != 0.0) w[i] -= cfg.learning_rate * cfg.weight_decay * w[i];
    w[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    g[i] = 0.0;
  }
}

// ---- linear ---------------------------------------------------------------

Matrix linear_forward(const Matrix& x, const Matrix& weight, const Matrix& bias) {
  if (x.cols() != weight.rows() || bias.rows() != 1 || bias.cols() != weight.cols()) {
    throw DimensionError("linear_forward: x " + x.shape_string() + ", W " +
                         weight.shape_string() + ", b " + bias.shape_string());
  }
  Matrix out = matmul(x, weight);
  auto b = bias.values();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[c];
  }
  return out;
}

LinearGrads linear_backward(const Matrix& x, const Matrix& weight, const Matrix& grad_out) {
  if (grad_out.rows() != x.rows() || grad_out.cols() != weight.cols() ||
      x.cols() != weight.rows()) {
    throw DimensionError("linear_backward: cache/shape mismatch");
  }
  LinearGrads g;
  g.input = matmul_nt(grad_out, weight);
  g.weight = matmul_tn(x, grad_out);
  g.bias = Matrix(1, grad_out.cols());
  for (std::size_t r = 0; r < grad_out.rows(); ++r) {
    auto row = grad_out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) g.bias(0, c) += row[c];
  }
  return g;
}

Linear::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(in, out);
  for (double& v : w.values()) v = dist(rng);
  weight = ParamBlock(std::move(w));
  bias = ParamBlock(Matrix(1, out));
}

Linear::Linear(Matrix w, Matrix b) : weight(std::move(w)), bias(std::move(b)) {
  if (bias.value.rows() != 1 || bias.value.cols() != weight.value.cols()) {
    throw DimensionError("Linear: bias " + bias.value.shape_string() + " for weight " +
                         weight.value.shape_string());
  }
}

Matrix Linear::forward(const Matrix& x) const {
  return linear_forward(x, weight.value, bias.value);
}

Matrix Linear::backward(const Matrix& x, const Matrix& grad_out) {
  LinearGrads g = linear_backward(x, weight.value, grad_out);
  add_in_place(weight.grad, g.weight);
  add_in_place(bias.grad, g.bias);
  return std::move(g.input);
}

// ---- batch normalization --------------------------------------------------

BatchNormState::BatchNormState(std::size_t features)
    : gamma(Matrix(1, features, 1.0)),
      beta(Matrix(1, features, 0.0)),
      running_mean(1, features, 0.0),
      running_var(1, features, 1.0) {}

Matrix batchnorm_apply(const Matrix& x, const BatchNormState& bn, Mode mode,
                       BatchNormCache& cache) {
  const std::size_t m = bn.features();
  if (x.cols() != m) {
    throw DimensionError("batchnorm_forward: input " + x.shape_string() + " for " +
                         std::to_string(m) + " features");
  }
  if (x.rows() == 0) throw DegenerateBatchError("batchnorm_forward: empty batch");
  const std::size_t batch = x.rows();
  if (mode == Mode::train && batch < 2) {
    throw DegenerateBatchError("batchnorm_forward: train mode needs at least 2 rows");
  }
  cache.mode = mode;
  cache.normalized = Matrix(batch, m);
  cache.inv_std.assign(m, 0.0);
  cache.batch_mean.assign(mode == Mode::train ? m : 0, 0.0);
  cache.batch_var.assign(mode == Mode::train ? m : 0, 0.0);

  for (std::size_t c = 0; c < m; ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (mode == Mode::train) {
      for (std::size_t r = 0; r < batch; ++r) mean += x(r, c);
      mean /= static_cast<double>(batch);
      for (std::size_t r = 0; r < batch; ++r) {
        const double d = x(r, c) - mean;
        var += d * d;
      }
      var /= static_cast<double>(batch);
      cache.batch_mean[c] = mean;
      cache.batch_var[c] = var;
    } else {
      mean = bn.running_mean(0, c);
      var = bn.running_var(0, c);
    }
    const double inv_std = 1.0 / std::sqrt(var + bn.eps);
    cache.inv_std[c] = inv_std;
    for (std::size_t r = 0; r < batch; ++r) cache.normalized(r, c) = (x(r, c) - mean) * inv_std;
  }

  Matrix out(batch, m);
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t c = 0; c < m; ++c)
      out(r, c) = bn.gamma.value(0, c) * cache.normalized(r, c) + bn.beta.value(0, c);
  return out;
}

void batchnorm_update_running(BatchNormState& bn, const BatchNormCache& cache) {
  if (cache.mode != Mode::train) return;
  const std::size_t m = bn.features();
  if (cache.batch_mean.size() != m) throw DimensionError("batchnorm_update_running: cache mismatch");
  const double batch = static_cast<double>(cache.normalized.rows());
  for (std::size_t c = 0; c < m; ++c) {
    const double unbiased = cache.batch_var[c] * batch / (batch - 1.0);
    bn.running_mean(0, c) =
        (1.0 - bn.momentum) * bn.running_mean(0, c) + bn.momentum * cache.batch_mean[c];
    bn.running_var(0, c) = (1.0 - bn.momentum) * bn.running_var(0, c) + bn.momentum * unbiased;
  }
}

Matrix batchnorm_forward(const Matrix& x, BatchNormState& bn, Mode mode, BatchNormCache& cache) {
  Matrix out = batchnorm_apply(x, bn, mode, cache);
  batchnorm_update_running(bn, cache);
  return out;
}

Matrix batchnorm_backward(const BatchNormCache& cache, BatchNormState& bn,
                          const Matrix& grad_out) {
  require_same_shape(cache.normalized, grad_out, "batchnorm_backward");
  const std::size_t batch = grad_out.rows();
  const std::size_t m = grad_out.cols();
  if (m != bn.features()) throw DimensionError("batchnorm_backward: feature mismatch");
  Matrix dx(batch, m);
  const double n = static_cast<double>(batch);
  for (std::size_t c = 0; c < m; ++c) {
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t r = 0; r < batch; ++r) {
      sum_g += grad_out(r, c);
      sum_gx += grad_out(r, c) * cache.normalized(r, c);
    }
    bn.beta.grad(0, c) += sum_g;
    bn.gamma.grad(0, c) += sum_gx;
    const double gamma = bn.gamma.value(0, c);
    const double inv_std = cache.inv_std[c];
    if (cache.mode == Mode::train) {
      // d x_hat = g * gamma; dx = inv_std / n * (n dxh - sum dxh - xh sum(dxh xh))
      for (std::size_t r = 0; r < batch; ++r) {
        dx(r, c) = gamma * inv_std / n *
                   (n * grad_out(r, c) - sum_g - cache.normalized(r, c) * sum_gx);
      }
    } else {
      for (std::size_t r = 0; r < batch; ++r) dx(r, c) = gamma * inv_std * grad_out(r, c);
    }
  }
  return dx;
}

// ---- activations ----------------------------------------------------------

Matrix activation_forward(const Matrix& x, Activation kind) {
  Matrix out(x.rows(), x.cols());
  auto in = x.values();
  auto o = out.values();
  switch (kind) {
    case Activation::leaky_relu:
      for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : kLeakySlope * in[i];
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < in.size(); ++i) {
        // split by sign so exp never overflows
        if (in[i] >= 0.0) {
          o[i] = 1.0 / (1.0 + std::exp(-in[i]));
        } else {
          const double e = std::exp(in[i]);
          o[i] = e / (1.0 + e);
        }
      }
      break;
    case Activation::softmax_rows:
      if (x.cols() == 0) throw DimensionError("softmax_rows: zero columns");
      for (std::size_t r = 0; r < x.rows(); ++r) {
        auto xr = x.row(r);
        auto orow = out.row(r);
        const double mx = *std::max_element(xr.begin(), xr.end());
        double sum = 0.0;
        for (std::size_t c = 0; c < xr.size(); ++c) {
          orow[c] = std::exp(xr[c] - mx);
          sum += orow[c];
        }
        for (double& v : orow) v /= sum;
      }
      break;
  }
  return out;
}

Matrix activation_backward(Activation kind, const Matrix& input, const Matrix& output,
                           const Matrix& grad_out) {
  require_same_shape(input, grad_out, "activation_backward");
  require_same_shape(output, grad_out, "activation_backward");
  Matrix dx(grad_out.rows(), grad_out.cols());
  auto in = input.values();
  auto out = output.values();
  auto g = grad_out.values();
  auto d = dx.values();
  switch (kind) {
    case Activation::leaky_relu:
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = in[i] > 0.0 ? g[i] : kLeakySlope * g[i];
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = in[i] > 0.0 ? g[i] : 0.0;
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * out[i] * (1.0 - out[i]);
      break;
    case Activation::softmax_rows:
      for (std::size_t r = 0; r < grad_out.rows(); ++r) {
        auto yr = output.row(r);
        auto gr = grad_out.row(r);
        auto dr = dx.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * gr[c];
        for (std::size_t c = 0; c < yr.size(); ++c) dr[c] = yr[c] * (gr[c] - dot);
      }
      break;
  }
  return dx;
}

Matrix grad_reverse(const Matrix& upstream, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("grad_reverse: lambda must be >= 0");
  Matrix out = upstream;
  scale_in_place(out, -lambda);
  return out;
}

// ---- gradient checking ----------------------------------------------------

GradCheckResult finite_diff_check(const std::function<double(std::span<const double>)>& f,
                                  std::span<const double> point,
                                  std::span<const double> analytic, double h, double floor) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: h must be > 0");
  if (analytic.size() != point.size()) {
    throw DimensionError("finite_diff_check: gradient length differs from point");
  }
  std::vector<double> x(point.begin(), point.end());
  GradCheckResult result;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    auto at = [&](double offset) {
      x[i] = orig + offset;
      return f(x);
    };
    const double numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
    x[i] = orig;
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (i == 0 || rel > result.max_relative_error) {
      result = {rel, i, analytic[i], numeric};
    }
  }
  return result;
}

}  // namespace faa
