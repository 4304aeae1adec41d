#include "gquant/model.hpp"

#include <cmath>
#include <random>

#include "gquant/error.hpp"
#include "gquant/kernels.hpp"

namespace gquant {

void ModelShape::validate() const {
  if (num_axes == 0 || num_classes < 2 || channels1 == 0 || channels2 == 0 || kernel == 0 || pool == 0) {
    throw ConfigError("model needs at least one axis, two classes and non-empty layers");
  }
  const auto after_stage = [this](std::size_t len) -> std::size_t {
    if (len < kernel || len - kernel + 1 < pool) return 0;
    return (len - kernel + 1) / pool;
  };
  if (after_stage(after_stage(window_len)) == 0) {
    throw ConfigError("window length " + std::to_string(window_len) + " is too short for two conv(k=" +
                      std::to_string(kernel) + ")/pool(" + std::to_string(pool) + ") stages");
  }
}

ClassifierModel::ClassifierModel(ModelShape shape) : shape_(shape) {
  shape_.validate();
  const auto& s = shape_;
  params_ = {
      {"conv1.weight", Tensor(Shape{s.channels1, s.num_axes, s.kernel})},
      {"conv1.bias", Tensor(Shape{s.channels1})},
      {"conv2.weight", Tensor(Shape{s.channels2, s.channels1, s.kernel})},
      {"conv2.bias", Tensor(Shape{s.channels2})},
      {"dense.weight", Tensor(Shape{s.channels2, s.num_classes})},
      {"dense.bias", Tensor(Shape{s.num_classes})},
  };
}

ClassifierModel::ClassifierModel(ModelShape shape, std::uint64_t seed) : ClassifierModel(shape) {
  std::mt19937_64 rng(seed);
  const std::size_t fan_in[] = {shape_.num_axes * shape_.kernel, shape_.channels1 * shape_.kernel,
                                shape_.channels2};
  for (std::size_t layer = 0; layer < 3; ++layer) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in[layer]));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& w : params_[2 * layer].value.data()) w = u(rng);
  }
}

ClassifierModel ClassifierModel::zeros(ModelShape shape) { return ClassifierModel(shape); }

std::size_t ClassifierModel::num_parameters() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<Var> ClassifierModel::bind(Tape& tape, bool trainable) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(trainable ? tape.param(p.value) : tape.input(p.value));
  return vars;
}

Var ClassifierModel::forward(Var x, std::span<const Var> bound) const {
  if (bound.size() != params_.size()) throw ConfigError("forward: parameter list does not match the model");
  const Shape& sx = x.shape();
  if (sx.size() != 3 || sx[1] != shape_.num_axes || sx[2] != shape_.window_len) {
    throw ShapeError("model expects input [batch, " + std::to_string(shape_.num_axes) + ", " +
                     std::to_string(shape_.window_len) + "], got " + shape_str(sx));
  }
  Var h = ops::max_pool1d(ops::relu(ops::conv1d(x, bound[0], bound[1])), shape_.pool);
  h = ops::max_pool1d(ops::relu(ops::conv1d(h, bound[2], bound[3])), shape_.pool);
  h = ops::global_avg_pool(h);
  return ops::add(ops::matmul(h, bound[4]), bound[5]);
}

Tensor ClassifierModel::logits(const Tensor& x) const {
  Tape tape;
  const auto bound = bind(tape, false);
  return forward(tape.input(x), bound).value();
}

std::vector<int> ClassifierModel::predict(const Tensor& x) const {
  const Tensor z = logits(x);
  const std::size_t rows = z.dim(0), cols = z.dim(1);
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (z[r * cols + c] > z[r * cols + best]) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

nlohmann::json ClassifierModel::to_json() const {
  nlohmann::json j;
  j["shape"] = {{"num_axes", shape_.num_axes},   {"window_len", shape_.window_len},
                {"num_classes", shape_.num_classes}, {"channels1", shape_.channels1},
                {"channels2", shape_.channels2}, {"kernel", shape_.kernel},
                {"pool", shape_.pool}};
  auto& params = j["params"] = nlohmann::json::array();
  for (const auto& p : params_) {
    params.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"values", p.value.values()}});
  }
  return j;
}

ClassifierModel ClassifierModel::from_json(const nlohmann::json& j) {
  try {
    ModelShape s;
    const auto& js = j.at("shape");
    s.num_axes = js.at("num_axes").get<std::size_t>();
    s.window_len = js.at("window_len").get<std::size_t>();
    s.num_classes = js.at("num_classes").get<std::size_t>();
    s.channels1 = js.at("channels1").get<std::size_t>();
    s.channels2 = js.at("channels2").get<std::size_t>();
    s.kernel = js.at("kernel").get<std::size_t>();
    s.pool = js.at("pool").get<std::size_t>();
    ClassifierModel model(s);
    const auto& params = j.at("params");
    if (params.size() != model.params_.size()) throw DataError("checkpoint has the wrong number of tensors");
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& target = model.params_[i];
      if (params[i].at("name").get<std::string>() != target.name) {
        throw DataError("checkpoint tensor " + std::to_string(i) + " should be '" + target.name + "'");
      }
      Tensor t(params[i].at("shape").get<Shape>(), params[i].at("values").get<std::vector<double>>());
      if (t.shape() != target.value.shape()) {
        throw DataError("checkpoint tensor '" + target.name + "' has shape " + shape_str(t.shape()) +
                        ", expected " + shape_str(target.value.shape()));
      }
      target.value = std::move(t);
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model checkpoint: ") + e.what());
  } catch (const ShapeError& e) {
    throw DataError(std::string("malformed model checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed model checkpoint: ") + e.what());
  }
}

std::vector<double> inverse_frequency_weights(std::span<const int> labels, std::size_t num_classes) {
  std::vector<double> counts(num_classes, 0.0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw DataError("label " + std::to_string(y) + " out of range");
    }
    counts[y] += 1.0;
  }
  std::vector<double> w(num_classes, 0.0);
  double present_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] > 0) {
      w[c] = static_cast<double>(labels.size()) / counts[c];
      present_sum += w[c];
      ++present;
    }
  }
  const double fill = present ? present_sum / static_cast<double>(present) : 1.0;
  double total = 0.0;
  for (auto& v : w) {
    if (v == 0.0) v = fill;
    total += v;
  }
  const double mean = total / static_cast<double>(num_classes);
  for (auto& v : w) v /= mean;
  return w;
}

Var loss(Var logits, std::span<const int> labels, std::span<const double> class_weights) {
  return ops::weighted_cross_entropy(logits, labels, class_weights);
}

Adam::Adam(AdamConfig config, std::span<const std::size_t> sizes) : config_(config) {
  if (!(config.lr > 0) || !(config.beta1 >= 0 && config.beta1 < 1) || !(config.beta2 >= 0 && config.beta2 < 1) ||
      !(config.eps > 0) || !(config.weight_decay >= 0)) {
    throw ConfigError("invalid Adam hyperparameters");
  }
  for (auto n : sizes) {
    m_.emplace_back(n, 0.0);
    v_.emplace_back(n, 0.0);
  }
}

void Adam::step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ConfigError("Adam::step: parameter list does not match the optimizer");
  }
  ++step_;
  const kernels::AdamCoeffs c{lr,
                              config_.beta1,
                              config_.beta2,
                              config_.eps,
                              config_.weight_decay,
                              1.0 - std::pow(config_.beta1, static_cast<double>(step_)),
                              1.0 - std::pow(config_.beta2, static_cast<double>(step_))};
  const auto& k = kernels::active();
  for (std::size_t i = 0; i < m_.size(); ++i) {
    if (params[i].size() != m_[i].size() || grads[i].size() != m_[i].size()) {
      throw ShapeError("Adam::step: buffer " + std::to_string(i) + " changed size");
    }
    k.adam_update(params[i].data(), grads[i].data(), m_[i].data(), v_[i].data(), m_[i].size(), c);
  }
}

double step_schedule(double base_lr, int epoch, int every, double factor) {
  return base_lr * std::pow(factor, static_cast<double>(epoch / every));
}

}  // namespace gquant
