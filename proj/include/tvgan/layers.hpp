#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tvgan/rng.hpp"
#include "tvgan/tensor.hpp"

namespace tvgan {

// A named trainable array with its gradient accumulator.
struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;

  std::size_t size() const { return value.size(); }
};

// Owns parameters at stable addresses so layers can hold raw pointers and
// the owning network stays movable.
class ParameterSet {
 public:
  Parameter* add(std::string name, std::vector<int> shape);

  std::size_t count() const;  // total scalar count
  std::size_t tensors() const { return params_.size(); }

  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  void zero_grad();
  bool finite() const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

// Weights draw from N(0, stddev), normalization scales from N(1, stddev);
// biases and normalization shifts start at zero.
void init_gaussian(ParameterSet& params, double stddev, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Layers. Forward passes are const and take an optional cache; backward
// passes consume the cache, accumulate parameter gradients and return the
// gradient with respect to the layer input.

struct ConvCache {
  int in_height = 0;
  int in_width = 0;
  std::vector<Scalar> columns;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterSet& params, const std::string& name, int in_channels, int out_channels,
         int kernel, int stride, int padding, bool bias);

  Tensor forward(const Tensor& x, ConvCache* cache) const;
  Tensor backward(const ConvCache& cache, const Tensor& dy);

  int out_size(int in_size) const { return (in_size + 2 * padding_ - kernel_) / stride_ + 1; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  Parameter* weight() const { return weight_; }
  Parameter* bias() const { return bias_; }

 private:
  Parameter* weight_ = nullptr;  // (out, in, k, k)
  Parameter* bias_ = nullptr;
  int in_ = 0, out_ = 0, kernel_ = 0, stride_ = 1, padding_ = 0;
};

struct ConvTransposeCache {
  Tensor input;
};

class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(ParameterSet& params, const std::string& name, int in_channels,
                  int out_channels, int kernel, int stride, int padding, bool bias);

  Tensor forward(const Tensor& x, ConvTransposeCache* cache) const;
  Tensor backward(const ConvTransposeCache& cache, const Tensor& dy);

  int out_size(int in_size) const { return (in_size - 1) * stride_ - 2 * padding_ + kernel_; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  Parameter* weight_ = nullptr;  // (in, out, k, k)
  Parameter* bias_ = nullptr;
  int in_ = 0, out_ = 0, kernel_ = 0, stride_ = 1, padding_ = 0;
};

struct NormCache {
  Tensor normalized;
  std::vector<Scalar> inv_std;
};

// Per-sample, per-channel normalization with learned scale and shift. With a
// batch of one this is what batch normalization computes in training mode.
class InstanceNorm {
 public:
  InstanceNorm() = default;
  InstanceNorm(ParameterSet& params, const std::string& name, int channels);

  Tensor forward(const Tensor& x, NormCache* cache) const;
  Tensor backward(const NormCache& cache, const Tensor& dy);

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
  int channels_ = 0;
  static constexpr Scalar kEps = 1e-5;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, int in_features, int out_features);

  std::vector<Scalar> forward(std::span<const Scalar> x) const;
  // Accumulates parameter gradients; returns d/dx.
  std::vector<Scalar> backward(std::span<const Scalar> x, std::span<const Scalar> dy);

  Parameter* weight() const { return weight_; }
  Parameter* bias() const { return bias_; }

 private:
  Parameter* weight_ = nullptr;  // (out, in)
  Parameter* bias_ = nullptr;
  int in_ = 0, out_ = 0;
};

// Pointwise activations. Backward variants take the forward input (or
// output, where noted) and the upstream gradient.
Tensor leaky_relu(const Tensor& x, Scalar slope);
Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy, Scalar slope);
Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& dy);
Tensor tanh_forward(const Tensor& x);
Tensor tanh_backward(const Tensor& y, const Tensor& dy);  // y = forward output
Tensor sigmoid_forward(const Tensor& x);
Tensor sigmoid_backward(const Tensor& y, const Tensor& dy);  // y = forward output

// Inverted dropout mask: each entry is 0 with probability `rate`, otherwise
// 1 / (1 - rate).
Tensor dropout_mask(int channels, int height, int width, Scalar rate, std::uint64_t seed);
Tensor multiply(const Tensor& a, const Tensor& b);

std::vector<Scalar> global_average_pool(const Tensor& x);
Tensor global_average_pool_backward(int channels, int height, int width,
                                    std::span<const Scalar> dy);

}  // namespace tvgan
