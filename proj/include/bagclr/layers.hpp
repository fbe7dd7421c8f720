#pragma once

#include <random>
#include <string>
#include <vector>

#include "bagclr/kernels.hpp"
#include "bagclr/tensor.hpp"

namespace bagclr {

/// A trainable tensor with its gradient accumulator.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  // Biases and normalization affine terms: no weight decay, no trust scaling.
  bool exempt = false;

  Parameter() = default;
  Parameter(std::string n, std::vector<std::size_t> shape, bool is_exempt = false)
      : name(std::move(n)), value(shape), grad(shape), exempt(is_exempt) {}
  void zero_grad() { grad.fill(T{0}); }
};

/// Non-trainable state that still belongs in a checkpoint (running statistics).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T> value;
};

template <typename T>
using ParameterList = std::vector<Parameter<T>*>;
template <typename T>
using BufferList = std::vector<Buffer<T>*>;

enum class Mode { kTrain, kEval };

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel,
         int stride, bool with_bias);

  void init(std::mt19937_64& rng);
  Tensor<T> apply(const Tensor<T>& x) const;
  Tensor<T> forward(const Tensor<T>& x, bool keep_for_backward);
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad);
  void collect(ParameterList<T>& out);

  kernels::ConvShape shape_for(const Tensor<T>& x) const;
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  bool has_bias() const { return has_bias_; }

  Parameter<T> weight;
  Parameter<T> bias;

 private:
  int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1;
  bool has_bias_ = false;
  Tensor<T> input_;
};

template <typename T>
class BatchNorm2d {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels);

  // Eval-mode affine transform with the running statistics.
  Tensor<T> apply(const Tensor<T>& x) const;
  Tensor<T> forward(const Tensor<T>& x, Mode mode, bool keep_for_backward);
  Tensor<T> backward(const Tensor<T>& grad_out);
  void collect(ParameterList<T>& out);
  void collect_buffers(BufferList<T>& out);

  Parameter<T> gamma;
  Parameter<T> beta;
  Buffer<T> running_mean;
  Buffer<T> running_var;

 private:
  int channels_ = 0;
  Mode cached_mode_ = Mode::kEval;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

/// Fully connected layer on row-major (batch x features) matrices.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in_features, int out_features);

  // PyTorch-style uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  void init(std::mt19937_64& rng);
  // Zero-mean normal weights with the given std, zero bias.
  void init_normal(std::mt19937_64& rng, double stddev);
  Tensor<T> apply(const Tensor<T>& x) const;
  Tensor<T> forward(const Tensor<T>& x, bool keep_for_backward);
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad);
  void collect(ParameterList<T>& out);

  int in_features() const { return in_; }
  int out_features() const { return out_; }

  Parameter<T> weight;  // out x in
  Parameter<T> bias;

 private:
  int in_ = 0, out_ = 0;
  Tensor<T> input_;
};

template <typename T>
void relu_inplace(Tensor<T>& x);
// grad *= (activation > 0)
template <typename T>
void relu_backward_inplace(Tensor<T>& grad, const Tensor<T>& activation);

}  // namespace bagclr
