#include "fetrack/nn.hpp"

#include <cmath>

namespace fetrack {

void Module::set_training(bool mode) {
  training_ = mode;
  for (auto& [name, child] : children_) child->set_training(mode);
}

Tensor Module::add_parameter(const std::string& name, Tensor t) {
  for (const auto& [existing, _] : params_) {
    if (existing == name) throw ConfigError("duplicate parameter name: " + name);
  }
  params_.emplace_back(name, t);
  return t;
}

Tensor Module::add_buffer(const std::string& name, Tensor t) {
  buffers_.emplace_back(name, t);
  return t;
}

void Module::collect(const std::string& prefix, bool params, bool buffers,
                     std::vector<NamedTensor>& out) const {
  if (params) {
    for (const auto& [name, t] : params_) out.push_back({prefix + name, t});
  }
  if (buffers) {
    for (const auto& [name, t] : buffers_) out.push_back({prefix + name, t});
  }
  for (const auto& [name, child] : children_) {
    child->collect(prefix + name + ".", params, buffers, out);
  }
}

std::vector<NamedTensor> Module::named_parameters() const {
  std::vector<NamedTensor> out;
  collect("", true, false, out);
  return out;
}

std::vector<NamedTensor> Module::named_buffers() const {
  std::vector<NamedTensor> out;
  collect("", false, true, out);
  return out;
}

std::vector<NamedTensor> Module::named_state() const {
  std::vector<NamedTensor> out;
  collect("", true, true, out);
  return out;
}

void Module::zero_grad() {
  for (auto& nt : named_parameters()) nt.tensor.zero_grad();
}

Tensor init_conv_weight(Shape shape, Rng& rng) {
  std::int64_t fan_in = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
  for (double& v : data) v = rng.normal(0.0, stddev);
  return Tensor::from_data(std::move(shape), std::move(data), /*requires_grad=*/true);
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias,
               Rng& rng)
    : stride_(stride), padding_(padding) {
  weight_ = add_parameter("weight", init_conv_weight({out_channels, in_channels, kernel, kernel},
                                                     rng));
  if (bias) {
    bias_ = add_parameter("bias", Tensor::zeros({out_channels}, /*requires_grad=*/true));
  }
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, weight_, bias_, stride_, padding_); }

Linear::Linear(int in_features, int out_features, bool bias, Rng& rng) {
  weight_ = add_parameter("weight", init_conv_weight({out_features, in_features}, rng));
  if (bias) {
    bias_ = add_parameter("bias", Tensor::zeros({out_features}, /*requires_grad=*/true));
  }
}

Tensor Linear::forward(const Tensor& x) const { return linear(x, weight_, bias_); }

BatchNorm2d::BatchNorm2d(int channels) {
  gamma_ = add_parameter("gamma", Tensor::full({channels}, 1.0, /*requires_grad=*/true));
  beta_ = add_parameter("beta", Tensor::zeros({channels}, /*requires_grad=*/true));
  running_mean_ = add_buffer("running_mean", Tensor::zeros({channels}));
  running_var_ = add_buffer("running_var", Tensor::full({channels}, 1.0));
}

Tensor BatchNorm2d::forward(const Tensor& x) const {
  return batchnorm(x, gamma_, beta_, running_mean_, running_var_, is_training());
}

ConvBnRelu::ConvBnRelu(int in_channels, int out_channels, int kernel, int stride, int padding,
                       Rng& rng) {
  conv_ = &add_module("conv", std::make_unique<Conv2d>(in_channels, out_channels, kernel, stride,
                                                       padding, /*bias=*/false, rng));
  bn_ = &add_module("bn", std::make_unique<BatchNorm2d>(out_channels));
}

Tensor ConvBnRelu::forward(const Tensor& x) const { return relu(bn_->forward(conv_->forward(x))); }

AdamOptimizer::AdamOptimizer(double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamOptimizer::step(const std::vector<NamedTensor>& params,
                         const std::vector<double>& learning_rates) {
  if (params.size() != learning_rates.size()) {
    throw ConfigError("Adam: params and learning rates differ in length");
  }
  if (state_.empty()) {
    state_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::size_t n = params[i].tensor.data().size();
      state_[i].m.assign(n, 0.0);
      state_[i].v.assign(n, 0.0);
    }
  }
  if (state_.size() != params.size()) throw StateError("Adam: parameter set changed");

  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    if (!t.requires_grad()) continue;
    auto value = t.data();
    auto grad = t.grad();
    auto& st = state_[i];
    const double lr = learning_rates[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      st.m[k] = beta1_ * st.m[k] + (1.0 - beta1_) * grad[k];
      st.v[k] = beta2_ * st.v[k] + (1.0 - beta2_) * grad[k] * grad[k];
      const double mhat = st.m[k] / bc1;
      const double vhat = st.v[k] / bc2;
      value[k] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace fetrack
