#include "bagclr/projector.hpp"

namespace bagclr {

void ProjectorConfig::validate() const {
  if (out_dim != 128 && out_dim != 2)
    throw ConfigError("projector out_dim must be 128 or 2, got " + std::to_string(out_dim));
  if (hidden_dims.empty()) throw ConfigError("projector needs at least one hidden layer");
  if (in_dim < 1) throw ConfigError("projector in_dim must be positive");
  for (int h : hidden_dims)
    if (h < 1) throw ConfigError("projector hidden widths must be positive");
}

template <typename T>
Projector<T>::Projector(const ProjectorConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(init_seed);
  int in = config_.in_dim;
  std::vector<int> widths = config_.hidden_dims;
  widths.push_back(config_.out_dim);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    layers_.emplace_back("projector.layer" + std::to_string(i), in, widths[i]);
    layers_.back().init(rng);
    in = widths[i];
  }
}

template <typename T>
Tensor<T> Projector<T>::penultimate(const Tensor<T>& features) const {
  Tensor<T> x = features;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    x = layers_[i].apply(x);
    relu_inplace(x);
  }
  return x;
}

template <typename T>
Tensor<T> Projector<T>::project(const Tensor<T>& features) const {
  return layers_.back().apply(penultimate(features));
}

template <typename T>
Tensor<T> Projector<T>::forward(const Tensor<T>& features, bool keep) {
  activations_.clear();
  Tensor<T> x = features;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i].forward(x, keep);
    if (i + 1 < layers_.size()) {
      relu_inplace(x);
      if (keep) activations_.push_back(x);
    }
  }
  return x;
}

template <typename T>
Tensor<T> Projector<T>::backward(const Tensor<T>& grad_out, bool need_input_grad) {
  Tensor<T> g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const bool need = i > 0 || need_input_grad;
    g = layers_[i].backward(g, need);
    if (i > 0) relu_backward_inplace(g, activations_[i - 1]);
  }
  activations_.clear();
  return g;
}

template <typename T>
Projector<T> Projector<T>::anneal_to_2d(std::uint64_t init_seed) const {
  if (config_.out_dim == 2) throw ConfigError("projector is already two-dimensional");
  Projector<T> out;
  out.config_ = config_;
  out.config_.out_dim = 2;
  out.layers_.assign(layers_.begin(), layers_.end() - 1);
  const int in = config_.hidden_dims.back();
  out.layers_.emplace_back("projector.layer" + std::to_string(layers_.size() - 1), in, 2);
  std::mt19937_64 rng(init_seed);
  out.layers_.back().init_normal(rng, kAnnealInitStd);
  return out;
}

template <typename T>
void Projector<T>::collect(ParameterList<T>& out) {
  for (auto& l : layers_) l.collect(out);
}

template <typename T>
ParameterList<T> Projector<T>::parameters() {
  ParameterList<T> out;
  collect(out);
  return out;
}

template <typename T>
ParameterList<T> Projector<T>::last_layer_parameters() {
  ParameterList<T> out;
  layers_.back().collect(out);
  return out;
}

template <typename T>
ParameterList<T> Projector<T>::prefix_parameters() {
  ParameterList<T> out;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) layers_[i].collect(out);
  return out;
}

template class Projector<float>;
template class Projector<double>;

}  // namespace bagclr
