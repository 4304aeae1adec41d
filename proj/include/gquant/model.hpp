#pragma once

// Task network used for joint training with the learnable quantizer:
// two conv1d(k=5)/ReLU/maxpool(2) stages, global average pooling and a dense
// layer producing class logits. Also the weighted cross-entropy, Adam and the
// step learning-rate schedule.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gquant/autograd.hpp"
#include "gquant/tensor.hpp"

namespace gquant {

struct ModelShape {
  std::size_t num_axes = 3;
  std::size_t window_len = 50;
  std::size_t num_classes = 4;
  std::size_t channels1 = 32;
  std::size_t channels2 = 64;
  std::size_t kernel = 5;
  std::size_t pool = 2;

  /// Throws ConfigError when the window is too short for the conv stack.
  void validate() const;
  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

class ClassifierModel {
 public:
  /// He-style uniform initialization, U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.
  ClassifierModel(ModelShape shape, std::uint64_t seed);

  static ClassifierModel zeros(ModelShape shape);

  const ModelShape& shape() const noexcept { return shape_; }
  std::vector<NamedTensor>& params() noexcept { return params_; }
  const std::vector<NamedTensor>& params() const noexcept { return params_; }
  std::size_t num_parameters() const noexcept;

  /// Puts every parameter on the tape, differentiable or as constants.
  std::vector<Var> bind(Tape& tape, bool trainable) const;

  /// x: [batch, axes, window] -> logits [batch, classes].
  Var forward(Var x, std::span<const Var> bound) const;

  /// Inference without gradients.
  Tensor logits(const Tensor& x) const;
  std::vector<int> predict(const Tensor& x) const;

  nlohmann::json to_json() const;
  static ClassifierModel from_json(const nlohmann::json& j);

 private:
  explicit ClassifierModel(ModelShape shape);

  ModelShape shape_;
  std::vector<NamedTensor> params_;
};

/// Inverse class frequency, normalized to mean 1 over all classes. Classes
/// absent from `labels` get the mean weight of the present ones before
/// normalization.
std::vector<double> inverse_frequency_weights(std::span<const int> labels, std::size_t num_classes);

/// Weighted mean of -w_y log softmax(logits)_y, normalized by the batch weight.
Var loss(Var logits, std::span<const int> labels, std::span<const double> class_weights);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
};

/// Adam over a fixed list of parameter buffers. Weight decay is an L2 term
/// added to the gradient.
class Adam {
 public:
  Adam(AdamConfig config, std::span<const std::size_t> sizes);

  /// One update with learning rate `lr`. Buffers must match the construction sizes.
  void step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads, double lr);

  long steps() const noexcept { return step_; }
  const AdamConfig& config() const noexcept { return config_; }
  std::span<const double> first_moment(std::size_t i) const { return m_.at(i); }
  std::span<const double> second_moment(std::size_t i) const { return v_.at(i); }

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long step_ = 0;
};

/// base * factor^(epoch / every), epochs counted from 0.
double step_schedule(double base_lr, int epoch, int every = 10, double factor = 0.9);

}  // namespace gquant
