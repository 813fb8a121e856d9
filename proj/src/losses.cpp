#include "faa/losses.hpp"

#include <algorithm>
#include <cmath>

namespace faa {

namespace {

std::vector<double> row_norms(const Matrix& m, const char* what) {
  std::vector<double> norms(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double sq = 0.0;
    for (double v : m.row(r)) sq += v * v;
    norms[r] = std::sqrt(sq);
    if (!(norms[r] > 0.0)) {
      throw DegenerateVectorError(std::string("cosine_similarity: zero-norm row ") +
                                  std::to_string(r) + " in " + what);
    }
  }
  return norms;
}

// log-sum-exp of scale * values
double log_sum_exp(std::span<const double> values, double scale) {
  double mx = -INFINITY;
  for (double v : values) mx = std::max(mx, scale * v);
  double sum = 0.0;
  for (double v : values) sum += std::exp(scale * v - mx);
  return mx + std::log(sum);
}

}  // namespace

Matrix cosine_similarity(const Matrix& queries, const Matrix& texts) {
  if (queries.cols() != texts.cols()) {
    throw DimensionError("cosine_similarity: " + queries.shape_string() + " vs " +
                         texts.shape_string());
  }
  const auto qn = row_norms(queries, "queries");
  const auto tn = row_norms(texts, "texts");
  Matrix s = matmul_nt(queries, texts);
  for (std::size_t j = 0; j < s.rows(); ++j)
    for (std::size_t c = 0; c < s.cols(); ++c) s(j, c) /= qn[j] * tn[c];
  return s;
}

Matrix cosine_similarity_backward(const Matrix& queries, const Matrix& texts,
                                  const Matrix& similarity, const Matrix& grad_similarity) {
  if (similarity.rows() != queries.rows() || similarity.cols() != texts.rows()) {
    throw DimensionError("cosine_similarity_backward: cache mismatch");
  }
  require_same_shape(similarity, grad_similarity, "cosine_similarity_backward");
  const auto qn = row_norms(queries, "queries");
  const auto tn = row_norms(texts, "texts");
  // ds_jc/dq_j = t_c / (|q||t_c|) - s_jc q_j / |q|^2
  Matrix grad(queries.rows(), queries.cols());
  for (std::size_t j = 0; j < queries.rows(); ++j) {
    auto g = grad.row(j);
    auto q = queries.row(j);
    double radial = 0.0;
    for (std::size_t c = 0; c < texts.rows(); ++c) {
      const double gs = grad_similarity(j, c);
      if (gs == 0.0) continue;
      radial += gs * similarity(j, c);
      const double w = gs / (qn[j] * tn[c]);
      auto t = texts.row(c);
      for (std::size_t d = 0; d < g.size(); ++d) g[d] += w * t[d];
    }
    const double inv_sq = 1.0 / (qn[j] * qn[j]);
    for (std::size_t d = 0; d < g.size(); ++d) g[d] -= radial * q[d] * inv_sq;
  }
  return grad;
}

std::vector<double> class_probabilities(std::span<const double> similarity_row, Temperature t) {
  t.validate();
  const double scale = t.inverse();
  const double lse = log_sum_exp(similarity_row, scale);
  std::vector<double> p(similarity_row.size());
  for (std::size_t c = 0; c < p.size(); ++c) p[c] = std::exp(scale * similarity_row[c] - lse);
  return p;
}

LossResult contrastive_loss(const Matrix& similarity, Temperature t) {
  t.validate();
  if (similarity.rows() != similarity.cols()) {
    throw DimensionError("contrastive_loss: non-square similarity " + similarity.shape_string());
  }
  const std::size_t b = similarity.rows();
  const double scale = t.inverse();
  LossResult result;
  result.grad = Matrix(b, b);
  if (b == 0) return result;
  const Matrix st = transpose(similarity);
  const double w = 1.0 / (2.0 * static_cast<double>(b));
  double total = 0.0;
  for (std::size_t j = 0; j < b; ++j) {
    // image -> text: row j of S
    const double lse_row = log_sum_exp(similarity.row(j), scale);
    total += scale * similarity(j, j) - lse_row;
    for (std::size_t k = 0; k < b; ++k) {
      const double p = std::exp(scale * similarity(j, k) - lse_row);
      result.grad(j, k) -= w * scale * ((j == k ? 1.0 : 0.0) - p);
    }
    // text -> image: column j of S
    const double lse_col = log_sum_exp(st.row(j), scale);
    total += scale * similarity(j, j) - lse_col;
    for (std::size_t k = 0; k < b; ++k) {
      const double q = std::exp(scale * similarity(k, j) - lse_col);
      result.grad(k, j) -= w * scale * ((j == k ? 1.0 : 0.0) - q);
    }
  }
  result.loss = -w * total;
  return result;
}

LossResult da_loss(const Matrix& predictions, std::span<const double> labels) {
  if (predictions.cols() != 1 || predictions.rows() != labels.size()) {
    throw DimensionError("da_loss: predictions " + predictions.shape_string() + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = labels.size();
  LossResult result;
  result.grad = Matrix(n, 1);
  if (n == 0) return result;
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double d = std::clamp(predictions(j, 0), kProbabilityClamp, 1.0 - kProbabilityClamp);
    const double z = labels[j];
    total += z * std::log(d) + (1.0 - z) * std::log(1.0 - d);
    result.grad(j, 0) = -inv_n * (z / d - (1.0 - z) / (1.0 - d));
  }
  result.loss = -inv_n * total;
  return result;
}

}  // namespace faa
