#include "faa/fam.hpp"

#include <algorithm>
#include <stdexcept>

namespace faa {

void FamConfig::validate() const {
  if (feature_dim < 1) throw std::invalid_argument("fam: feature_dim must be >= 1");
  if (hidden_dim < 1) throw std::invalid_argument("fam: hidden_dim must be >= 1");
}

std::size_t fam_param_count(const FamConfig& cfg) {
  const std::size_t d = cfg.feature_dim;
  const std::size_t h = cfg.hidden_dim;
  std::size_t n = d * h + h + 4 * h + h * d + d;
  if (cfg.variant == FamVariant::deep) n += h * h + h + 4 * h;
  return n;
}

std::size_t fam_learnable_count(const FamConfig& cfg) {
  const std::size_t bn_blocks = cfg.variant == FamVariant::deep ? 2 : 1;
  return fam_param_count(cfg) - bn_blocks * 2 * cfg.hidden_dim;
}

std::vector<Segment> fam_bn_segments(const FamConfig& cfg) {
  const std::size_t d = cfg.feature_dim;
  const std::size_t h = cfg.hidden_dim;
  std::vector<Segment> segments;
  std::size_t offset = d * h + h;
  segments.push_back({offset, 4 * h});
  if (cfg.variant == FamVariant::deep) {
    offset += 4 * h + h * h + h;
    segments.push_back({offset, 4 * h});
  }
  return segments;
}

Matrix apply_mask(const Matrix& features, const Matrix& mask) {
  require_same_shape(features, mask, "apply_mask");
  return hadamard(features, mask);
}

FeatureAdaptationModule::FeatureAdaptationModule(const FamConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
}

FeatureAdaptationModule::FeatureAdaptationModule(const FamConfig& cfg, std::uint64_t seed)
    : FeatureAdaptationModule(cfg) {
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg.feature_dim;
  const std::size_t h = cfg.hidden_dim;
  in_ = Linear(d, h, rng);
  bn_in_ = BatchNormState(h);
  if (cfg.variant == FamVariant::deep) {
    mid_ = Linear(h, h, rng);
    bn_mid_ = BatchNormState(h);
  }
  out_ = Linear(h, d, rng);
}

FeatureAdaptationModule FeatureAdaptationModule::zeros(const FamConfig& cfg) {
  FeatureAdaptationModule fam(cfg);
  const std::size_t d = cfg.feature_dim;
  const std::size_t h = cfg.hidden_dim;
  fam.in_ = Linear(Matrix(d, h), Matrix(1, h));
  fam.bn_in_ = BatchNormState(h);
  fam.bn_in_.gamma.value.fill(0.0);
  if (cfg.variant == FamVariant::deep) {
    fam.mid_ = Linear(Matrix(h, h), Matrix(1, h));
    fam.bn_mid_ = BatchNormState(h);
    fam.bn_mid_->gamma.value.fill(0.0);
  }
  fam.out_ = Linear(Matrix(h, d), Matrix(1, d));
  return fam;
}

FamOutput FeatureAdaptationModule::compute(const Matrix& features, Mode mode) const {
  if (features.cols() != cfg_.feature_dim) {
    throw DimensionError("fam_forward: features " + features.shape_string() + " for D=" +
                         std::to_string(cfg_.feature_dim));
  }
  FamOutput out;
  FamCache& c = out.cache;
  c.mode = mode;
  c.features = features;
  c.hidden_pre = in_.forward(features);
  c.bn_in_out = batchnorm_apply(c.hidden_pre, bn_in_, mode, c.bn_in);
  c.act_in = activation_forward(c.bn_in_out, Activation::leaky_relu);
  const Matrix* last = &c.act_in;
  if (mid_) {
    c.mid_pre = mid_->forward(c.act_in);
    c.bn_mid_out = batchnorm_apply(c.mid_pre, *bn_mid_, mode, c.bn_mid);
    c.act_mid = activation_forward(c.bn_mid_out, Activation::leaky_relu);
    last = &c.act_mid;
  }
  c.logits = out_.forward(*last);
  c.mask = activation_forward(c.logits, Activation::softmax_rows);
  out.mask = c.mask;
  out.masked = apply_mask(features, c.mask);
  return out;
}

FamOutput FeatureAdaptationModule::forward(const Matrix& features, Mode mode,
                                           bool update_running) {
  FamOutput out = compute(features, mode);
  if (mode == Mode::train && update_running) {
    batchnorm_update_running(bn_in_, out.cache.bn_in);
    if (bn_mid_) batchnorm_update_running(*bn_mid_, out.cache.bn_mid);
  }
  return out;
}

FamOutput FeatureAdaptationModule::forward_eval(const Matrix& features) const {
  return compute(features, Mode::eval);
}

Matrix FeatureAdaptationModule::backward(const FamCache& c, const Matrix& grad_masked) {
  require_same_shape(c.features, grad_masked, "fam_backward");
  // I* = A (.) I: identity path gets A (.) g, mask path gets I (.) g.
  Matrix grad_features = hadamard(c.mask, grad_masked);
  Matrix grad_mask = hadamard(c.features, grad_masked);

  Matrix g = activation_backward(Activation::softmax_rows, c.logits, c.mask, grad_mask);
  if (mid_) {
    g = out_.backward(c.act_mid, g);
    g = activation_backward(Activation::leaky_relu, c.bn_mid_out, c.act_mid, g);
    g = batchnorm_backward(c.bn_mid, *bn_mid_, g);
    g = mid_->backward(c.act_in, g);
  } else {
    g = out_.backward(c.act_in, g);
  }
  g = activation_backward(Activation::leaky_relu, c.bn_in_out, c.act_in, g);
  g = batchnorm_backward(c.bn_in, bn_in_, g);
  g = in_.backward(c.features, g);
  add_in_place(grad_features, g);
  return grad_features;
}

namespace {

void append(std::vector<double>& flat, const Matrix& m) {
  flat.insert(flat.end(), m.values().begin(), m.values().end());
}

void append_bn(std::vector<double>& flat, const BatchNormState& bn) {
  append(flat, bn.gamma.value);
  append(flat, bn.beta.value);
  append(flat, bn.running_mean);
  append(flat, bn.running_var);
}

void take(std::span<const double>& flat, Matrix& m) {
  std::copy_n(flat.begin(), m.size(), m.values().begin());
  flat = flat.subspan(m.size());
}

void take_bn(std::span<const double>& flat, BatchNormState& bn) {
  take(flat, bn.gamma.value);
  take(flat, bn.beta.value);
  take(flat, bn.running_mean);
  take(flat, bn.running_var);
}

}  // namespace

std::vector<double> FeatureAdaptationModule::to_vector() const {
  std::vector<double> flat;
  flat.reserve(fam_param_count(cfg_));
  append(flat, in_.weight.value);
  append(flat, in_.bias.value);
  append_bn(flat, bn_in_);
  if (mid_) {
    append(flat, mid_->weight.value);
    append(flat, mid_->bias.value);
    append_bn(flat, *bn_mid_);
  }
  append(flat, out_.weight.value);
  append(flat, out_.bias.value);
  return flat;
}

void FeatureAdaptationModule::from_vector(std::span<const double> flat) {
  if (flat.size() != fam_param_count(cfg_)) {
    throw DimensionError("fam from_vector: got " + std::to_string(flat.size()) +
                         " values, expected " + std::to_string(fam_param_count(cfg_)));
  }
  take(flat, in_.weight.value);
  take(flat, in_.bias.value);
  take_bn(flat, bn_in_);
  if (mid_) {
    take(flat, mid_->weight.value);
    take(flat, mid_->bias.value);
    take_bn(flat, *bn_mid_);
  }
  take(flat, out_.weight.value);
  take(flat, out_.bias.value);
}

std::vector<ParamBlock*> FeatureAdaptationModule::parameters() {
  std::vector<ParamBlock*> params{&in_.weight, &in_.bias, &bn_in_.gamma, &bn_in_.beta};
  if (mid_) {
    params.insert(params.end(), {&mid_->weight, &mid_->bias, &bn_mid_->gamma, &bn_mid_->beta});
  }
  params.insert(params.end(), {&out_.weight, &out_.bias});
  return params;
}

void FeatureAdaptationModule::zero_grad() {
  for (ParamBlock* p : parameters()) p->zero_grad();
}

void FeatureAdaptationModule::adam_step(const AdamConfig& cfg) {
  for (ParamBlock* p : parameters()) faa::adam_step(*p, cfg);
}

}  // namespace faa
