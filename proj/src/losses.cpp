#include "bagclr/losses.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace bagclr {

LossKind parse_loss_kind(const std::string& name) {
  if (name == "nt_xent") return LossKind::kNtXent;
  if (name == "cauchy") return LossKind::kCauchy;
  throw ConfigError("unknown loss kind '" + name + "' (expected nt_xent or cauchy)");
}

std::string to_string(LossKind kind) { return kind == LossKind::kNtXent ? "nt_xent" : "cauchy"; }

namespace {

template <typename T>
void check_batch(const Tensor<T>& z) {
  if (z.rank() != 2) throw ShapeError("contrastive batch must be 2B x d, got " + shape_string(z.shape()));
  if (z.dim(0) % 2 != 0)
    throw ShapeError("contrastive batch needs an even row count, got " + std::to_string(z.dim(0)));
  if (z.dim(0) < 4) throw ShapeError("contrastive batch needs B >= 2 images (at least one negative)");
  if (z.dim(1) < 1) throw ShapeError("contrastive batch has zero-width embeddings");
}

inline std::size_t partner(std::size_t i) { return i ^ std::size_t{1}; }

// Row-wise stable log-sum-exp over k != i of logits[i][k]; fills softmax.
double masked_log_softmax_row(const std::vector<double>& row, std::size_t i,
                              std::vector<double>& prob) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < row.size(); ++k)
    if (k != i) mx = std::max(mx, row[k]);
  double sum = 0.0;
  for (std::size_t k = 0; k < row.size(); ++k) {
    prob[k] = k == i ? 0.0 : std::exp(row[k] - mx);
    sum += prob[k];
  }
  for (auto& p : prob) p /= sum;
  return mx + std::log(sum);
}

template <typename T>
LossAndGrad<T> nt_xent(const Tensor<T>& z, double tau, bool with_grad) {
  check_batch(z);
  if (!(tau > 0.0)) throw ConfigError("NT-Xent temperature must be positive");
  if (z.dim(1) < 2) throw ShapeError("NT-Xent needs embedding dimension >= 2");
  const std::size_t m = z.dim(0), d = z.dim(1);

  std::vector<double> u(m * d), norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double nn = 0.0;
    for (std::size_t c = 0; c < d; ++c) nn += double(z.at(i, c)) * z.at(i, c);
    norms[i] = std::sqrt(nn);
    if (!(norms[i] > 0.0))
      throw ShapeError("NT-Xent: embedding row " + std::to_string(i) + " has zero norm");
    for (std::size_t c = 0; c < d; ++c) u[i * d + c] = z.at(i, c) / norms[i];
  }

  // A[i][k] = dL/ds_ik where s_ik = <u_i, u_k> / tau.
  std::vector<double> a(with_grad ? m * m : 0);
  std::vector<double> row(m), prob(m);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < m; ++k) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += u[i * d + c] * u[k * d + c];
      row[k] = dot / tau;
    }
    const double lse = masked_log_softmax_row(row, i, prob);
    total += lse - row[partner(i)];
    if (with_grad)
      for (std::size_t k = 0; k < m; ++k)
        a[i * m + k] = (prob[k] - (k == partner(i) ? 1.0 : 0.0)) / static_cast<double>(m);
  }

  LossAndGrad<T> out;
  out.loss = total / static_cast<double>(m);
  if (!with_grad) return out;

  out.grad = Tensor<T>(z.shape());
  std::vector<double> gu(d);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(gu.begin(), gu.end(), 0.0);
    for (std::size_t k = 0; k < m; ++k) {
      if (k == i) continue;
      const double w = (a[i * m + k] + a[k * m + i]) / tau;
      for (std::size_t c = 0; c < d; ++c) gu[c] += w * u[k * d + c];
    }
    // Project through the normalization: (I - u u^T) / |z|.
    double radial = 0.0;
    for (std::size_t c = 0; c < d; ++c) radial += gu[c] * u[i * d + c];
    for (std::size_t c = 0; c < d; ++c)
      out.grad.at(i, c) = static_cast<T>((gu[c] - radial * u[i * d + c]) / norms[i]);
  }
  return out;
}

template <typename T>
LossAndGrad<T> cauchy(const Tensor<T>& z, bool with_grad) {
  check_batch(z);
  const std::size_t m = z.dim(0), d = z.dim(1);
  std::vector<double> q(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = i + 1; k < m; ++k) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = double(z.at(i, c)) - double(z.at(k, c));
        d2 += diff * diff;
      }
      q[i * m + k] = q[k * m + i] = 1.0 / (1.0 + d2);
    }

  std::vector<double> row_sum(m, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < m; ++k)
      if (k != i) row_sum[i] += q[i * m + k];
    total += std::log(row_sum[i]) - std::log(q[i * m + partner(i)]);
  }

  LossAndGrad<T> out;
  out.loss = total / static_cast<double>(m);
  if (!with_grad) return out;

  // dL/d(d2_ik) from anchor i: (delta_kj * q_ik - q_ik^2 / S_i) / m.
  std::vector<double> g(m * d, 0.0);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < m; ++k) {
      if (k == i) continue;
      const double qik = q[i * m + k];
      double w = -qik * qik / row_sum[i];
      if (k == partner(i)) w += qik;
      w *= 2.0 * inv_m;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = double(z.at(i, c)) - double(z.at(k, c));
        g[i * d + c] += w * diff;
        g[k * d + c] -= w * diff;
      }
    }
  out.grad = Tensor<T>(z.shape());
  for (std::size_t i = 0; i < m * d; ++i) out.grad[i] = static_cast<T>(g[i]);
  return out;
}

}  // namespace

template <typename T>
double nt_xent_loss(const Tensor<T>& z, double temperature) {
  return nt_xent(z, temperature, false).loss;
}

template <typename T>
double cauchy_contrastive_loss(const Tensor<T>& z) {
  return cauchy(z, false).loss;
}

template <typename T>
LossAndGrad<T> contrastive_loss(LossKind kind, const Tensor<T>& z, double temperature) {
  return kind == LossKind::kNtXent ? nt_xent(z, temperature, true) : cauchy(z, true);
}

template double nt_xent_loss<float>(const Tensor<float>&, double);
template double nt_xent_loss<double>(const Tensor<double>&, double);
template double cauchy_contrastive_loss<float>(const Tensor<float>&);
template double cauchy_contrastive_loss<double>(const Tensor<double>&);
template LossAndGrad<float> contrastive_loss<float>(LossKind, const Tensor<float>&, double);
template LossAndGrad<double> contrastive_loss<double>(LossKind, const Tensor<double>&, double);

}  // namespace bagclr
