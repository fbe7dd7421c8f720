#pragma once

#include <string>

#include "bagclr/tensor.hpp"

namespace bagclr {

enum class LossKind { kNtXent, kCauchy };

LossKind parse_loss_kind(const std::string& name);
std::string to_string(LossKind kind);

/// Scalar loss together with its gradient w.r.t. the embeddings.
template <typename T>
struct LossAndGrad {
  double loss = 0.0;
  Tensor<T> grad;
};

// Batches are 2B x d with rows 2k and 2k+1 forming the positive pair of
// image k. All arithmetic is carried out in double.

/// Mean over the 2B anchors of
///   -log( exp(cos(z_i, z_j)/tau) / sum_{k != i} exp(cos(z_i, z_k)/tau) ).
/// Rows with zero norm are rejected rather than epsilon-normalized.
template <typename T>
double nt_xent_loss(const Tensor<T>& z, double temperature);

/// Mean over anchors of -log( q(z_i, z_j) / sum_{k != i} q(z_i, z_k) ) with
/// the Cauchy similarity q(a, b) = 1 / (1 + |a - b|^2).
template <typename T>
double cauchy_contrastive_loss(const Tensor<T>& z);

template <typename T>
LossAndGrad<T> contrastive_loss(LossKind kind, const Tensor<T>& z, double temperature);

template <typename T>
Tensor<T> loss_gradient(LossKind kind, const Tensor<T>& z, double temperature) {
  return contrastive_loss(kind, z, temperature).grad;
}

}  // namespace bagclr
