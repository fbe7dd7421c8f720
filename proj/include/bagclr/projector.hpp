#pragma once

#include <cstdint>
#include <vector>

#include "bagclr/layers.hpp"

namespace bagclr {

struct ProjectorConfig {
  int in_dim = 64;
  std::vector<int> hidden_dims = {64};
  int out_dim = 128;

  void validate() const;
};

/// MLP head g: features -> contrastive space. ReLU between layers, none after
/// the output layer.
template <typename T>
class Projector {
 public:
  // Std of the freshly initialized 2-D output layer created by anneal_to_2d().
  static constexpr double kAnnealInitStd = 0.01;

  Projector() = default;
  Projector(const ProjectorConfig& config, std::uint64_t init_seed);

  const ProjectorConfig& config() const { return config_; }
  int out_dim() const { return config_.out_dim; }

  Tensor<T> project(const Tensor<T>& features) const;
  // Activations entering the final layer.
  Tensor<T> penultimate(const Tensor<T>& features) const;
  Tensor<T> forward(const Tensor<T>& features, bool keep_for_backward);
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad);

  // Copies every layer but the last and replaces the last with a fresh
  // zero-mean 2-output layer. Throws if already 2-D.
  Projector anneal_to_2d(std::uint64_t init_seed) const;

  void collect(ParameterList<T>& out);
  ParameterList<T> parameters();
  ParameterList<T> last_layer_parameters();
  ParameterList<T> prefix_parameters();

 private:
  ProjectorConfig config_;
  std::vector<Linear<T>> layers_;
  std::vector<Tensor<T>> activations_;
};

}  // namespace bagclr
