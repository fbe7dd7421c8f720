#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bagclr/encoder.hpp"

namespace bagclr {

/// Per-class evidence: N x n x h x w (NCHW). The class logit is the spatial
/// mean of its map.
template <typename T>
struct EvidenceMaps {
  Tensor<T> values;
  PatchGeometry geometry;

  std::size_t batch() const { return values.dim(0); }
  std::size_t classes() const { return values.dim(1); }
  std::size_t rows() const { return values.dim(2); }
  std::size_t cols() const { return values.dim(3); }
  T at(std::size_t n, std::size_t i, std::size_t j, std::size_t c) const {
    return values.at(n, c, i, j);
  }
  // Row-major h x w map of class c for image n.
  std::span<const T> map(std::size_t n, std::size_t c) const {
    const std::size_t plane = rows() * cols();
    return values.values().subspan((n * classes() + c) * plane, plane);
  }
};

/// 1x1 convolution D -> n_classes applied at every feature-map position.
template <typename T>
class EvidenceHead {
 public:
  EvidenceHead() = default;
  EvidenceHead(int feature_dim, int n_classes, std::uint64_t init_seed);

  int n_classes() const { return conv_.out_channels(); }
  int feature_dim() const { return conv_.in_channels(); }
  std::size_t parameter_count() const { return conv_.weight.value.size() + conv_.bias.value.size(); }

  EvidenceMaps<T> evidence(const FeatureMap<T>& fm) const;
  EvidenceMaps<T> forward(const FeatureMap<T>& fm, bool keep_for_backward);
  Tensor<T> backward(const Tensor<T>& grad_evidence, bool need_input_grad);

  void collect(ParameterList<T>& out);
  ParameterList<T> parameters();

 private:
  Conv2d<T> conv_;
};

/// Exact spatial means of the evidence maps: N x n.
template <typename T>
Tensor<T> evidence_logits(const EvidenceMaps<T>& maps);

/// Balanced weights total / (n_classes * count_c). Throws on an empty class.
std::vector<double> class_weights(std::span<const int> labels, int n_classes);

/// Weighted-mean cross-entropy sum_i w_{y_i} CE_i / sum_i w_{y_i}, and its
/// gradient w.r.t. the logits.
template <typename T>
double weighted_cross_entropy(const Tensor<T>& logits, std::span<const int> labels,
                              std::span<const double> weights, Tensor<T>* grad_logits);

/// Row-wise softmax in double.
template <typename T>
Tensor<double> softmax_rows(const Tensor<T>& logits);

}  // namespace bagclr
