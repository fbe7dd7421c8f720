#include "bagclr/evidence.hpp"

#include <cmath>

namespace bagclr {

template <typename T>
EvidenceHead<T>::EvidenceHead(int feature_dim, int n_classes, std::uint64_t init_seed)
    : conv_("classifier.conv", feature_dim, n_classes, 1, 1, true) {
  if (n_classes < 2) throw ConfigError("evidence head needs at least 2 classes");
  std::mt19937_64 rng(init_seed);
  // Same uniform fan-in scheme as the projector's linear layers.
  const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : conv_.weight.value.values()) v = static_cast<T>(dist(rng));
  for (auto& v : conv_.bias.value.values()) v = static_cast<T>(dist(rng));
}

template <typename T>
EvidenceMaps<T> EvidenceHead<T>::evidence(const FeatureMap<T>& fm) const {
  return {conv_.apply(fm.values), fm.geometry};
}

template <typename T>
EvidenceMaps<T> EvidenceHead<T>::forward(const FeatureMap<T>& fm, bool keep) {
  return {conv_.forward(fm.values, keep), fm.geometry};
}

template <typename T>
Tensor<T> EvidenceHead<T>::backward(const Tensor<T>& grad_evidence, bool need_input_grad) {
  return conv_.backward(grad_evidence, need_input_grad);
}

template <typename T>
void EvidenceHead<T>::collect(ParameterList<T>& out) {
  conv_.collect(out);
}

template <typename T>
ParameterList<T> EvidenceHead<T>::parameters() {
  ParameterList<T> out;
  collect(out);
  return out;
}

template <typename T>
Tensor<T> evidence_logits(const EvidenceMaps<T>& maps) {
  const std::size_t n = maps.batch(), k = maps.classes(), plane = maps.rows() * maps.cols();
  Tensor<T> out({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) {
      double acc = 0.0;
      for (T v : maps.map(i, c)) acc += v;
      out.at(i, c) = static_cast<T>(acc / static_cast<double>(plane));
    }
  return out;
}

std::vector<double> class_weights(std::span<const int> labels, int n_classes) {
  if (n_classes < 2) throw DataError("class weights need at least 2 classes");
  std::vector<double> counts(n_classes, 0.0);
  for (int y : labels) {
    if (y < 0 || y >= n_classes) throw DataError("label outside [0, n_classes)");
    counts[y] += 1.0;
  }
  std::vector<double> w(n_classes);
  for (int c = 0; c < n_classes; ++c) {
    if (counts[c] == 0.0) throw DataError("class " + std::to_string(c) + " has no samples");
    w[c] = static_cast<double>(labels.size()) / (n_classes * counts[c]);
  }
  return w;
}

template <typename T>
Tensor<double> softmax_rows(const Tensor<T>& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor<double> p({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = logits.at(i, 0);
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, double(logits.at(i, c)));
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += p.at(i, c) = std::exp(double(logits.at(i, c)) - mx);
    for (std::size_t c = 0; c < k; ++c) p.at(i, c) /= sum;
  }
  return p;
}

template <typename T>
double weighted_cross_entropy(const Tensor<T>& logits, std::span<const int> labels,
                              std::span<const double> weights, Tensor<T>* grad) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("cross entropy: label count mismatch");
  const Tensor<double> p = softmax_rows(logits);
  double wsum = 0.0, total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weights[labels[i]];
    wsum += w;
    total -= w * std::log(std::max(p.at(i, labels[i]), 1e-300));
  }
  if (grad) {
    *grad = Tensor<T>(logits.shape());
    for (std::size_t i = 0; i < n; ++i) {
      const double w = weights[labels[i]] / wsum;
      for (std::size_t c = 0; c < k; ++c)
        grad->at(i, c) = static_cast<T>(w * (p.at(i, c) - (int(c) == labels[i] ? 1.0 : 0.0)));
    }
  }
  return total / wsum;
}

template class EvidenceHead<float>;
template class EvidenceHead<double>;
template Tensor<float> evidence_logits<float>(const EvidenceMaps<float>&);
template Tensor<double> evidence_logits<double>(const EvidenceMaps<double>&);
template Tensor<double> softmax_rows<float>(const Tensor<float>&);
template Tensor<double> softmax_rows<double>(const Tensor<double>&);
template double weighted_cross_entropy<float>(const Tensor<float>&, std::span<const int>,
                                              std::span<const double>, Tensor<float>*);
template double weighted_cross_entropy<double>(const Tensor<double>&, std::span<const int>,
                                               std::span<const double>, Tensor<double>*);

}  // namespace bagclr
