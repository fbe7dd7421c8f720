#include "bagclr/layers.hpp"

#include <Eigen/Core>
#include <cmath>

namespace bagclr {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_rank4(const std::vector<std::size_t>& shape, int channels, const char* what) {
  if (shape.size() != 4 || static_cast<int>(shape[1]) != channels)
    throw ShapeError(std::string(what) + ": expected N x " + std::to_string(channels) +
                     " x H x W input, got " + shape_string(shape));
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel,
                  int stride, bool with_bias)
    : weight(name + ".weight",
             {static_cast<std::size_t>(out_channels), static_cast<std::size_t>(in_channels),
              static_cast<std::size_t>(kernel), static_cast<std::size_t>(kernel)}),
      in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      has_bias_(with_bias) {
  if (with_bias) bias = Parameter<T>(name + ".bias", {static_cast<std::size_t>(out_channels)}, true);
}

template <typename T>
void Conv2d<T>::init(std::mt19937_64& rng) {
  // He-normal, fan-in.
  const double fan_in = static_cast<double>(in_) * kernel_ * kernel_;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (auto& v : weight.value.values()) v = static_cast<T>(dist(rng));
  if (has_bias_) bias.value.fill(T{0});
}

template <typename T>
kernels::ConvShape Conv2d<T>::shape_for(const Tensor<T>& x) const {
  require_rank4(x.shape(), in_, "conv2d");
  kernels::ConvShape s;
  s.batch = static_cast<int>(x.dim(0));
  s.in_channels = in_;
  s.height = static_cast<int>(x.dim(2));
  s.width = static_cast<int>(x.dim(3));
  s.out_channels = out_;
  s.kernel = kernel_;
  s.stride = stride_;
  s.pad = (kernel_ - 1) / 2;
  return s;
}

template <typename T>
Tensor<T> Conv2d<T>::apply(const Tensor<T>& x) const {
  const auto s = shape_for(x);
  Tensor<T> y({x.dim(0), static_cast<std::size_t>(out_), static_cast<std::size_t>(s.out_height()),
               static_cast<std::size_t>(s.out_width())});
  kernels::conv2d_forward<T>(s, x.values(), weight.value.values(),
                             has_bias_ ? bias.value.values() : std::span<const T>{}, y.values());
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, bool keep_for_backward) {
  Tensor<T> y = apply(x);
  if (keep_for_backward) input_ = x;
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out, bool need_input_grad) {
  if (input_.empty()) throw TrainingError(weight.name + ": backward without cached forward");
  const auto s = shape_for(input_);
  if (grad_out.size() != s.output_size())
    throw ShapeError(weight.name + ": gradient shape " + shape_string(grad_out.shape()));
  kernels::conv2d_backward_params<T>(s, input_.values(), grad_out.values(), weight.grad.values(),
                                     has_bias_ ? bias.grad.values() : std::span<T>{});
  Tensor<T> gx;
  if (need_input_grad) {
    gx = Tensor<T>(input_.shape());
    kernels::conv2d_backward_input<T>(s, grad_out.values(), weight.value.values(), gx.values());
  }
  input_ = Tensor<T>();
  return gx;
}

template <typename T>
void Conv2d<T>::collect(ParameterList<T>& out) {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias);
}

// ----------------------------------------------------------- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(const std::string& name, int channels)
    : gamma(name + ".gamma", {static_cast<std::size_t>(channels)}, true),
      beta(name + ".beta", {static_cast<std::size_t>(channels)}, true),
      running_mean{name + ".running_mean", Tensor<T>({static_cast<std::size_t>(channels)})},
      running_var{name + ".running_var", Tensor<T>({static_cast<std::size_t>(channels)}, T{1})},
      channels_(channels) {
  gamma.value.fill(T{1});
}

template <typename T>
Tensor<T> BatchNorm2d<T>::apply(const Tensor<T>& x) const {
  require_rank4(x.shape(), channels_, "batchnorm");
  const std::size_t n = x.dim(0), plane = x.dim(2) * x.dim(3);
  Tensor<T> y(x.shape());
  for (int c = 0; c < channels_; ++c) {
    const T scale = static_cast<T>(gamma.value[c] / std::sqrt(double(running_var.value[c]) + kEps));
    const T shift = beta.value[c] - scale * running_mean.value[c];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * channels_ + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) y[off + p] = scale * x[off + p] + shift;
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Mode mode, bool keep_for_backward) {
  require_rank4(x.shape(), channels_, "batchnorm");
  const std::size_t n = x.dim(0), plane = x.dim(2) * x.dim(3);
  const double count = static_cast<double>(n * plane);
  Tensor<T> y(x.shape());
  Tensor<T> xhat(keep_for_backward ? x.shape() : std::vector<std::size_t>{0});
  std::vector<T> inv_std(channels_);

#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels_; ++c) {
    double mean = 0.0, var = 0.0;
    if (mode == Mode::kTrain) {
      for (std::size_t i = 0; i < n; ++i) {
        const T* src = x.data() + (i * channels_ + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) mean += src[p];
      }
      mean /= count;
      for (std::size_t i = 0; i < n; ++i) {
        const T* src = x.data() + (i * channels_ + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          const double d = src[p] - mean;
          var += d * d;
        }
      }
      var /= count;
      const double unbiased = count > 1 ? var * count / (count - 1) : var;
      running_mean.value[c] =
          static_cast<T>((1 - kMomentum) * running_mean.value[c] + kMomentum * mean);
      running_var.value[c] =
          static_cast<T>((1 - kMomentum) * running_var.value[c] + kMomentum * unbiased);
    } else {
      mean = running_mean.value[c];
      var = running_var.value[c];
    }
    const double istd = 1.0 / std::sqrt(var + kEps);
    inv_std[c] = static_cast<T>(istd);
    const T g = gamma.value[c], b = beta.value[c];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * channels_ + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const T h = static_cast<T>((x[off + p] - mean) * istd);
        if (keep_for_backward) xhat[off + p] = h;
        y[off + p] = g * h + b;
      }
    }
  }
  if (keep_for_backward) {
    xhat_ = std::move(xhat);
    inv_std_ = std::move(inv_std);
    cached_mode_ = mode;
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& grad_out) {
  if (xhat_.empty()) throw TrainingError(gamma.name + ": backward without cached forward");
  const std::size_t n = grad_out.dim(0), plane = grad_out.dim(2) * grad_out.dim(3);
  const double count = static_cast<double>(n * plane);
  Tensor<T> gx(grad_out.shape());

#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels_; ++c) {
    double sum_g = 0.0, sum_gh = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * channels_ + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        sum_g += grad_out[off + p];
        sum_gh += double(grad_out[off + p]) * xhat_[off + p];
      }
    }
    gamma.grad[c] += static_cast<T>(sum_gh);
    beta.grad[c] += static_cast<T>(sum_g);
    const double scale = double(gamma.value[c]) * inv_std_[c];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * channels_ + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        if (cached_mode_ == Mode::kTrain)
          gx[off + p] = static_cast<T>(
              scale * (grad_out[off + p] - sum_g / count - xhat_[off + p] * sum_gh / count));
        else
          gx[off + p] = static_cast<T>(scale * grad_out[off + p]);
      }
    }
  }
  xhat_ = Tensor<T>();
  return gx;
}

template <typename T>
void BatchNorm2d<T>::collect(ParameterList<T>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

template <typename T>
void BatchNorm2d<T>::collect_buffers(BufferList<T>& out) {
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(const std::string& name, int in_features, int out_features)
    : weight(name + ".weight",
             {static_cast<std::size_t>(out_features), static_cast<std::size_t>(in_features)}),
      bias(name + ".bias", {static_cast<std::size_t>(out_features)}, true),
      in_(in_features),
      out_(out_features) {}

template <typename T>
void Linear<T>::init(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : weight.value.values()) v = static_cast<T>(dist(rng));
  for (auto& v : bias.value.values()) v = static_cast<T>(dist(rng));
}

template <typename T>
void Linear<T>::init_normal(std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : weight.value.values()) v = static_cast<T>(dist(rng));
  bias.value.fill(T{0});
}

template <typename T>
Tensor<T> Linear<T>::apply(const Tensor<T>& x) const {
  if (x.rank() != 2 || static_cast<int>(x.dim(1)) != in_)
    throw ShapeError(weight.name + ": expected N x " + std::to_string(in_) + " input, got " +
                     shape_string(x.shape()));
  const auto rows = static_cast<Eigen::Index>(x.dim(0));
  Tensor<T> y({x.dim(0), static_cast<std::size_t>(out_)});
  Eigen::Map<const RowMat<T>> xm(x.data(), rows, in_);
  Eigen::Map<const RowMat<T>> wm(weight.value.data(), out_, in_);
  Eigen::Map<RowMat<T>> ym(y.data(), rows, out_);
  // Row by row, so a sample's output never depends on the rest of the batch.
  for (Eigen::Index r = 0; r < rows; ++r) {
    ym.row(r).noalias() = xm.row(r) * wm.transpose();
    for (int o = 0; o < out_; ++o) ym(r, o) += bias.value[o];
  }
  return y;
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, bool keep_for_backward) {
  Tensor<T> y = apply(x);
  if (keep_for_backward) input_ = x;
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out, bool need_input_grad) {
  if (input_.empty()) throw TrainingError(weight.name + ": backward without cached forward");
  const auto rows = static_cast<Eigen::Index>(input_.dim(0));
  Eigen::Map<const RowMat<T>> xm(input_.data(), rows, in_);
  Eigen::Map<const RowMat<T>> gm(grad_out.data(), rows, out_);
  Eigen::Map<RowMat<T>> gw(weight.grad.data(), out_, in_);
  gw.noalias() += gm.transpose() * xm;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (int o = 0; o < out_; ++o) bias.grad[o] += gm(r, o);
  Tensor<T> gx;
  if (need_input_grad) {
    gx = Tensor<T>({input_.dim(0), static_cast<std::size_t>(in_)});
    Eigen::Map<const RowMat<T>> wm(weight.value.data(), out_, in_);
    Eigen::Map<RowMat<T>>(gx.data(), rows, in_).noalias() = gm * wm;
  }
  input_ = Tensor<T>();
  return gx;
}

template <typename T>
void Linear<T>::collect(ParameterList<T>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ------------------------------------------------------------------ ReLU

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (auto& v : x.values()) v = v > T{0} ? v : T{0};
}

template <typename T>
void relu_backward_inplace(Tensor<T>& grad, const Tensor<T>& activation) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(activation[i] > T{0})) grad[i] = T{0};
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class Linear<float>;
template class Linear<double>;
template void relu_inplace<float>(Tensor<float>&);
template void relu_inplace<double>(Tensor<double>&);
template void relu_backward_inplace<float>(Tensor<float>&, const Tensor<float>&);
template void relu_backward_inplace<double>(Tensor<double>&, const Tensor<double>&);

}  // namespace bagclr
