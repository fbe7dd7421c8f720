#include "bagclr/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <vector>

namespace bagclr::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::kParallel};
}

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

namespace reference {

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y) {
  const int oh = s.out_height(), ow = s.out_width();
  for (int n = 0; n < s.batch; ++n)
    for (int co = 0; co < s.out_channels; ++co)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          T acc = bias.empty() ? T{0} : bias[co];
          for (int ci = 0; ci < s.in_channels; ++ci)
            for (int ki = 0; ki < s.kernel; ++ki)
              for (int kj = 0; kj < s.kernel; ++kj) {
                const int r = i * s.stride - s.pad + ki;
                const int c = j * s.stride - s.pad + kj;
                if (r < 0 || r >= s.height || c < 0 || c >= s.width) continue;
                acc += w[((co * s.in_channels + ci) * s.kernel + ki) * s.kernel + kj] *
                       x[((n * s.in_channels + ci) * s.height + r) * s.width + c];
              }
          y[((n * s.out_channels + co) * oh + i) * ow + j] = acc;
        }
}

template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> gy,
                           std::span<const T> w, std::span<T> gx) {
  const int oh = s.out_height(), ow = s.out_width();
  std::fill(gx.begin(), gx.end(), T{0});
  for (int n = 0; n < s.batch; ++n)
    for (int co = 0; co < s.out_channels; ++co)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          const T g = gy[((n * s.out_channels + co) * oh + i) * ow + j];
          for (int ci = 0; ci < s.in_channels; ++ci)
            for (int ki = 0; ki < s.kernel; ++ki)
              for (int kj = 0; kj < s.kernel; ++kj) {
                const int r = i * s.stride - s.pad + ki;
                const int c = j * s.stride - s.pad + kj;
                if (r < 0 || r >= s.height || c < 0 || c >= s.width) continue;
                gx[((n * s.in_channels + ci) * s.height + r) * s.width + c] +=
                    g * w[((co * s.in_channels + ci) * s.kernel + ki) * s.kernel + kj];
              }
        }
}

template <typename T>
void conv2d_backward_params(const ConvShape& s, std::span<const T> x,
                            std::span<const T> gy, std::span<T> gw, std::span<T> gb) {
  const int oh = s.out_height(), ow = s.out_width();
  for (int n = 0; n < s.batch; ++n)
    for (int co = 0; co < s.out_channels; ++co)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          const T g = gy[((n * s.out_channels + co) * oh + i) * ow + j];
          if (!gb.empty()) gb[co] += g;
          for (int ci = 0; ci < s.in_channels; ++ci)
            for (int ki = 0; ki < s.kernel; ++ki)
              for (int kj = 0; kj < s.kernel; ++kj) {
                const int r = i * s.stride - s.pad + ki;
                const int c = j * s.stride - s.pad + kj;
                if (r < 0 || r >= s.height || c < 0 || c >= s.width) continue;
                gw[((co * s.in_channels + ci) * s.kernel + ki) * s.kernel + kj] +=
                    g * x[((n * s.in_channels + ci) * s.height + r) * s.width + c];
              }
        }
}

}  // namespace reference

namespace parallel {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

bool is_pointwise(const ConvShape& s) {
  return s.kernel == 1 && s.stride == 1 && s.pad == 0;
}

// col has shape (in_channels * k * k) x (oh * ow).
template <typename T>
void im2col(const ConvShape& s, const T* x, T* col) {
  const int oh = s.out_height(), ow = s.out_width();
  const int plane = oh * ow;
  for (int ci = 0; ci < s.in_channels; ++ci)
    for (int ki = 0; ki < s.kernel; ++ki)
      for (int kj = 0; kj < s.kernel; ++kj) {
        T* row = col + static_cast<std::size_t>((ci * s.kernel + ki) * s.kernel + kj) * plane;
        const T* src = x + static_cast<std::size_t>(ci) * s.height * s.width;
        for (int i = 0; i < oh; ++i) {
          const int r = i * s.stride - s.pad + ki;
          T* dst = row + i * ow;
          if (r < 0 || r >= s.height) {
            std::fill(dst, dst + ow, T{0});
            continue;
          }
          for (int j = 0; j < ow; ++j) {
            const int c = j * s.stride - s.pad + kj;
            dst[j] = (c < 0 || c >= s.width) ? T{0} : src[r * s.width + c];
          }
        }
      }
}

template <typename T>
void col2im(const ConvShape& s, const T* col, T* x) {
  const int oh = s.out_height(), ow = s.out_width();
  const int plane = oh * ow;
  std::fill(x, x + static_cast<std::size_t>(s.in_channels) * s.height * s.width, T{0});
  for (int ci = 0; ci < s.in_channels; ++ci)
    for (int ki = 0; ki < s.kernel; ++ki)
      for (int kj = 0; kj < s.kernel; ++kj) {
        const T* row =
            col + static_cast<std::size_t>((ci * s.kernel + ki) * s.kernel + kj) * plane;
        T* dst = x + static_cast<std::size_t>(ci) * s.height * s.width;
        for (int i = 0; i < oh; ++i) {
          const int r = i * s.stride - s.pad + ki;
          if (r < 0 || r >= s.height) continue;
          for (int j = 0; j < ow; ++j) {
            const int c = j * s.stride - s.pad + kj;
            if (c >= 0 && c < s.width) dst[r * s.width + c] += row[i * ow + j];
          }
        }
      }
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y) {
  const int plane = s.out_height() * s.out_width();
  const int kdim = s.in_channels * s.kernel * s.kernel;
  const std::size_t in_stride = static_cast<std::size_t>(s.in_channels) * s.height * s.width;
  const std::size_t out_stride = static_cast<std::size_t>(s.out_channels) * plane;
  const bool pointwise = is_pointwise(s);
  ConstMap<T> wm(w.data(), s.out_channels, kdim);

#pragma omp parallel
  {
    std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * plane);
#pragma omp for schedule(static)
    for (int n = 0; n < s.batch; ++n) {
      const T* xn = x.data() + n * in_stride;
      MutMap<T> yn(y.data() + n * out_stride, s.out_channels, plane);
      if (pointwise) {
        yn.noalias() = wm * ConstMap<T>(xn, kdim, plane);
      } else {
        im2col(s, xn, col.data());
        yn.noalias() = wm * ConstMap<T>(col.data(), kdim, plane);
      }
      if (!bias.empty())
        for (int co = 0; co < s.out_channels; ++co) yn.row(co).array() += bias[co];
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> gy,
                           std::span<const T> w, std::span<T> gx) {
  const int plane = s.out_height() * s.out_width();
  const int kdim = s.in_channels * s.kernel * s.kernel;
  const std::size_t in_stride = static_cast<std::size_t>(s.in_channels) * s.height * s.width;
  const std::size_t out_stride = static_cast<std::size_t>(s.out_channels) * plane;
  const bool pointwise = is_pointwise(s);
  ConstMap<T> wm(w.data(), s.out_channels, kdim);

#pragma omp parallel
  {
    std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * plane);
#pragma omp for schedule(static)
    for (int n = 0; n < s.batch; ++n) {
      ConstMap<T> gyn(gy.data() + n * out_stride, s.out_channels, plane);
      T* gxn = gx.data() + n * in_stride;
      if (pointwise) {
        MutMap<T>(gxn, kdim, plane).noalias() = wm.transpose() * gyn;
      } else {
        MutMap<T>(col.data(), kdim, plane).noalias() = wm.transpose() * gyn;
        col2im(s, col.data(), gxn);
      }
    }
  }
}

template <typename T>
void conv2d_backward_params(const ConvShape& s, std::span<const T> x,
                            std::span<const T> gy, std::span<T> gw, std::span<T> gb) {
  const int plane = s.out_height() * s.out_width();
  const int kdim = s.in_channels * s.kernel * s.kernel;
  const std::size_t in_stride = static_cast<std::size_t>(s.in_channels) * s.height * s.width;
  const std::size_t out_stride = static_cast<std::size_t>(s.out_channels) * plane;
  const std::size_t wsize = s.weight_size();
  const bool pointwise = is_pointwise(s);
  constexpr int kGroup = 16;

  std::vector<T> partial(static_cast<std::size_t>(kGroup) * wsize);
  for (int base = 0; base < s.batch; base += kGroup) {
    const int count = std::min(kGroup, s.batch - base);
#pragma omp parallel
    {
      std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * plane);
#pragma omp for schedule(static)
      for (int g = 0; g < count; ++g) {
        const int n = base + g;
        ConstMap<T> gyn(gy.data() + n * out_stride, s.out_channels, plane);
        MutMap<T> pw(partial.data() + g * wsize, s.out_channels, kdim);
        const T* xn = x.data() + n * in_stride;
        if (pointwise) {
          pw.noalias() = gyn * ConstMap<T>(xn, kdim, plane).transpose();
        } else {
          im2col(s, xn, col.data());
          pw.noalias() = gyn * ConstMap<T>(col.data(), kdim, plane).transpose();
        }
      }
    }
    for (int g = 0; g < count; ++g) {
      const T* pw = partial.data() + g * wsize;
      for (std::size_t i = 0; i < wsize; ++i) gw[i] += pw[i];
    }
  }

  if (!gb.empty()) {
    for (int n = 0; n < s.batch; ++n)
      for (int co = 0; co < s.out_channels; ++co) {
        const T* row = gy.data() + n * out_stride + static_cast<std::size_t>(co) * plane;
        T acc{0};
        for (int p = 0; p < plane; ++p) acc += row[p];
        gb[co] += acc;
      }
  }
}

}  // namespace parallel

#define BAGCLR_INSTANTIATE(T)                                                          \
  template void reference::conv2d_forward<T>(const ConvShape&, std::span<const T>,     \
                                             std::span<const T>, std::span<const T>,   \
                                             std::span<T>);                            \
  template void reference::conv2d_backward_input<T>(                                   \
      const ConvShape&, std::span<const T>, std::span<const T>, std::span<T>);         \
  template void reference::conv2d_backward_params<T>(                                  \
      const ConvShape&, std::span<const T>, std::span<const T>, std::span<T>,          \
      std::span<T>);                                                                   \
  template void parallel::conv2d_forward<T>(const ConvShape&, std::span<const T>,      \
                                            std::span<const T>, std::span<const T>,    \
                                            std::span<T>);                             \
  template void parallel::conv2d_backward_input<T>(                                    \
      const ConvShape&, std::span<const T>, std::span<const T>, std::span<T>);         \
  template void parallel::conv2d_backward_params<T>(                                   \
      const ConvShape&, std::span<const T>, std::span<const T>, std::span<T>,          \
      std::span<T>);

BAGCLR_INSTANTIATE(float)
BAGCLR_INSTANTIATE(double)

#undef BAGCLR_INSTANTIATE

}  // namespace bagclr::kernels
