#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "bagclr/tensor.hpp"

namespace bagclr::test_support {

template <typename T>
Tensor<T> random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo = -1.0,
                        double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Central differences of f with respect to every entry of x.
inline Tensor<double> numeric_gradient(Tensor<double>& x, const std::function<double()>& f,
                                       double h = 1e-6) {
  Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// |a - b| / max(|a|, |b|) over whole vectors; 0 when both vanish.
inline double relative_error(const Tensor<double>& a, const Tensor<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

}  // namespace bagclr::test_support
