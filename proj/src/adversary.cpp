#include "faa/adversary.hpp"

#include <algorithm>
#include <stdexcept>

#include "faa/losses.hpp"

namespace faa {

void DomainClassifierConfig::validate() const {
  if (feature_dim < 1 || hidden1 < 1 || hidden2 < 1) {
    throw std::invalid_argument("domain classifier: all widths must be >= 1");
  }
}

std::size_t domain_classifier_param_count(const DomainClassifierConfig& cfg) {
  const std::size_t d = cfg.feature_dim;
  const std::size_t h1 = cfg.hidden1;
  const std::size_t h2 = cfg.hidden2;
  return d * h1 + h1 + 4 * h1 + h1 * h2 + h2 + 4 * h2 + h2 + 1;
}

DomainClassifier::DomainClassifier(const DomainClassifierConfig& cfg, std::uint64_t seed)
    : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  l1_ = Linear(cfg.feature_dim, cfg.hidden1, rng);
  bn1_ = BatchNormState(cfg.hidden1);
  l2_ = Linear(cfg.hidden1, cfg.hidden2, rng);
  bn2_ = BatchNormState(cfg.hidden2);
  if (cfg.zero_init_output) {
    l3_ = Linear(Matrix(cfg.hidden2, 1), Matrix(1, 1));
  } else {
    l3_ = Linear(cfg.hidden2, 1, rng);
  }
}

DomainClassifierOutput DomainClassifier::compute(const Matrix& features, Mode mode) const {
  if (features.cols() != cfg_.feature_dim) {
    throw DimensionError("dc_forward: features " + features.shape_string() + " for D=" +
                         std::to_string(cfg_.feature_dim));
  }
  DomainClassifierOutput out;
  auto& c = out.cache;
  c.input = features;
  c.h1_pre = l1_.forward(features);
  c.bn1_out = batchnorm_apply(c.h1_pre, bn1_, mode, c.bn1);
  c.h1 = activation_forward(c.bn1_out, Activation::relu);
  c.h2_pre = l2_.forward(c.h1);
  c.bn2_out = batchnorm_apply(c.h2_pre, bn2_, mode, c.bn2);
  c.h2 = activation_forward(c.bn2_out, Activation::relu);
  c.logit = l3_.forward(c.h2);
  c.prob = activation_forward(c.logit, Activation::sigmoid);
  out.prob = c.prob;
  return out;
}

DomainClassifierOutput DomainClassifier::forward(const Matrix& features, Mode mode) {
  DomainClassifierOutput out = compute(features, mode);
  if (mode == Mode::train) {
    batchnorm_update_running(bn1_, out.cache.bn1);
    batchnorm_update_running(bn2_, out.cache.bn2);
  }
  return out;
}

DomainClassifierOutput DomainClassifier::forward_eval(const Matrix& features) const {
  return compute(features, Mode::eval);
}

Matrix DomainClassifier::backward(const DomainClassifierCache& c, const Matrix& grad_prob) {
  require_same_shape(c.prob, grad_prob, "dc_backward");
  Matrix g = activation_backward(Activation::sigmoid, c.logit, c.prob, grad_prob);
  g = l3_.backward(c.h2, g);
  g = activation_backward(Activation::relu, c.bn2_out, c.h2, g);
  g = batchnorm_backward(c.bn2, bn2_, g);
  g = l2_.backward(c.h1, g);
  g = activation_backward(Activation::relu, c.bn1_out, c.h1, g);
  g = batchnorm_backward(c.bn1, bn1_, g);
  return l1_.backward(c.input, g);
}

std::vector<double> DomainClassifier::to_vector() const {
  std::vector<double> flat;
  flat.reserve(domain_classifier_param_count(cfg_));
  auto append = [&flat](const Matrix& m) {
    flat.insert(flat.end(), m.values().begin(), m.values().end());
  };
  auto append_bn = [&append](const BatchNormState& bn) {
    append(bn.gamma.value);
    append(bn.beta.value);
    append(bn.running_mean);
    append(bn.running_var);
  };
  append(l1_.weight.value);
  append(l1_.bias.value);
  append_bn(bn1_);
  append(l2_.weight.value);
  append(l2_.bias.value);
  append_bn(bn2_);
  append(l3_.weight.value);
  append(l3_.bias.value);
  return flat;
}

void DomainClassifier::from_vector(std::span<const double> flat) {
  if (flat.size() != domain_classifier_param_count(cfg_)) {
    throw DimensionError("dc from_vector: got " + std::to_string(flat.size()) +
                         " values, expected " +
                         std::to_string(domain_classifier_param_count(cfg_)));
  }
  auto take = [&flat](Matrix& m) {
    std::copy_n(flat.begin(), m.size(), m.values().begin());
    flat = flat.subspan(m.size());
  };
  auto take_bn = [&take](BatchNormState& bn) {
    take(bn.gamma.value);
    take(bn.beta.value);
    take(bn.running_mean);
    take(bn.running_var);
  };
  take(l1_.weight.value);
  take(l1_.bias.value);
  take_bn(bn1_);
  take(l2_.weight.value);
  take(l2_.bias.value);
  take_bn(bn2_);
  take(l3_.weight.value);
  take(l3_.bias.value);
}

std::vector<ParamBlock*> DomainClassifier::parameters() {
  return {&l1_.weight, &l1_.bias, &bn1_.gamma, &bn1_.beta, &l2_.weight,
          &l2_.bias,   &bn2_.gamma, &bn2_.beta, &l3_.weight, &l3_.bias};
}

void DomainClassifier::zero_grad() {
  for (ParamBlock* p : parameters()) p->zero_grad();
}

void DomainClassifier::adam_step(const AdamConfig& cfg) {
  for (ParamBlock* p : parameters()) faa::adam_step(*p, cfg);
}

void validate_domain_batch(const DomainBatch& batch) {
  const std::size_t n = batch.labels.size();
  if (n == 0 || n % 2 != 0 || batch.features.rows() != n) {
    throw std::invalid_argument("domain batch: expected 2B rows with matching labels");
  }
  const auto ones = static_cast<std::size_t>(
      std::count(batch.labels.begin(), batch.labels.end(), 1.0));
  const auto zeros = static_cast<std::size_t>(
      std::count(batch.labels.begin(), batch.labels.end(), 0.0));
  if (ones != n / 2 || zeros != n / 2) {
    throw std::invalid_argument("domain batch: needs exactly B source and B target rows");
  }
}

DomainBatch make_domain_batch(const Matrix& source, const Matrix& target) {
  if (source.rows() != target.rows()) {
    throw std::invalid_argument("domain batch: source and target row counts differ");
  }
  DomainBatch batch;
  batch.features = vstack(source, target);
  batch.labels.assign(source.rows(), 1.0);
  batch.labels.resize(2 * source.rows(), 0.0);
  validate_domain_batch(batch);
  return batch;
}

AdversarialResult adversarial_backprop(FeatureAdaptationModule& fam, DomainClassifier& dc,
                                       const FamOutput& source_out,
                                       const Matrix& target_features, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("adversarial_backprop: lambda must be >= 0");
  const std::size_t b = source_out.masked.rows();
  FamOutput target_out = fam.forward(target_features, Mode::train, /*update_running=*/false);

  DomainBatch batch = make_domain_batch(source_out.masked, target_out.masked);
  DomainClassifierOutput dc_out = dc.forward(batch.features, Mode::train);
  LossResult loss = da_loss(dc_out.prob, batch.labels);

  Matrix grad_masked = dc.backward(dc_out.cache, loss.grad);
  Matrix reversed = grad_reverse(grad_masked, lambda);
  fam.backward(source_out.cache, take_rows(reversed, 0, b));
  fam.backward(target_out.cache, take_rows(reversed, b, b));

  return {loss.loss, std::move(dc_out.prob)};
}

}  // namespace faa
