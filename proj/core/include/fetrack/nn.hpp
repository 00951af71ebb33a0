#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fetrack/rng.hpp"
#include "fetrack/tensor.hpp"

namespace fetrack {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Parameter/buffer registry with dotted hierarchical names. Parameters are
/// learnable leaves; buffers (BN running stats) persist in checkpoints but
/// take no gradients.
class Module {
 public:
  virtual ~Module() = default;

  void set_training(bool mode);
  bool is_training() const { return training_; }

  std::vector<NamedTensor> named_parameters() const;
  std::vector<NamedTensor> named_buffers() const;
  /// Parameters followed by buffers, prefix-ordered. This is the checkpoint
  /// key set.
  std::vector<NamedTensor> named_state() const;
  void zero_grad();

 protected:
  Tensor add_parameter(const std::string& name, Tensor t);
  Tensor add_buffer(const std::string& name, Tensor t);

  template <typename M>
  M& add_module(const std::string& name, std::unique_ptr<M> m) {
    M& ref = *m;
    children_.emplace_back(name, std::move(m));
    return ref;
  }

 private:
  void collect(const std::string& prefix, bool params, bool buffers,
               std::vector<NamedTensor>& out) const;

  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::pair<std::string, Tensor>> buffers_;
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> children_;
  bool training_ = true;
};

/// Kaiming-style normal init for conv/linear weights.
Tensor init_conv_weight(Shape shape, Rng& rng);

class Conv2d : public Module {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias,
         Rng& rng);
  Tensor forward(const Tensor& x) const;

  int stride() const { return stride_; }
  int padding() const { return padding_; }

 private:
  Tensor weight_;
  Tensor bias_;
  int stride_;
  int padding_;
};

class Linear : public Module {
 public:
  Linear(int in_features, int out_features, bool bias, Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  Tensor weight_;
  Tensor bias_;
};

class BatchNorm2d : public Module {
 public:
  explicit BatchNorm2d(int channels);
  Tensor forward(const Tensor& x) const;

 private:
  Tensor gamma_;
  Tensor beta_;
  Tensor running_mean_;
  Tensor running_var_;
};

/// conv -> BN -> ReLU.
class ConvBnRelu : public Module {
 public:
  ConvBnRelu(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  Conv2d* conv_;
  BatchNorm2d* bn_;
};

/// Adam with moment state keyed by parameter order. Learning rate is supplied
/// per step so schedules stay outside.
class AdamOptimizer {
 public:
  AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// One update over `params` with per-parameter learning rates (parallel
  /// arrays). Gradients are consumed as-is; call zero_grad() afterwards.
  void step(const std::vector<NamedTensor>& params, const std::vector<double>& learning_rates);

 private:
  struct State {
    std::vector<double> m;
    std::vector<double> v;
  };
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<State> state_;
};

}  // namespace fetrack
