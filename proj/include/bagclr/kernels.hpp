#pragma once

#include <cstddef>
#include <span>

namespace bagclr::kernels {

/// Geometry of one 2-D convolution over an NCHW batch. Padding is symmetric.
struct ConvShape {
  int batch = 1;
  int in_channels = 1;
  int height = 1;
  int width = 1;
  int out_channels = 1;
  int kernel = 1;
  int stride = 1;
  int pad = 0;

  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t input_size() const {
    return static_cast<std::size_t>(batch) * in_channels * height * width;
  }
  std::size_t output_size() const {
    return static_cast<std::size_t>(batch) * out_channels * out_height() * out_width();
  }
  std::size_t weight_size() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
};

enum class Backend { kReference, kParallel };

/// Process-wide kernel selection. Layers dispatch through this; tests and the
/// benchmark switch it to compare the two paths.
void set_backend(Backend backend);
Backend backend();

// Serial, loop-for-loop definitions. Kept as the ground truth for the
// parallel kernels.
namespace reference {

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y);

template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> gy,
                           std::span<const T> w, std::span<T> gx);

// Accumulates into gw and gb (gb may be empty).
template <typename T>
void conv2d_backward_params(const ConvShape& s, std::span<const T> x,
                            std::span<const T> gy, std::span<T> gw, std::span<T> gb);

}  // namespace reference

// im2col + GEMM, OpenMP-parallel over the batch. Per-image weight gradients
// are reduced in image order, so results do not depend on the thread count.
namespace parallel {

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y);

template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> gy,
                           std::span<const T> w, std::span<T> gx);

template <typename T>
void conv2d_backward_params(const ConvShape& s, std::span<const T> x,
                            std::span<const T> gy, std::span<T> gw, std::span<T> gb);

}  // namespace parallel

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y) {
  if (backend() == Backend::kReference)
    reference::conv2d_forward(s, x, w, bias, y);
  else
    parallel::conv2d_forward(s, x, w, bias, y);
}

template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> gy,
                           std::span<const T> w, std::span<T> gx) {
  if (backend() == Backend::kReference)
    reference::conv2d_backward_input(s, gy, w, gx);
  else
    parallel::conv2d_backward_input(s, gy, w, gx);
}

template <typename T>
void conv2d_backward_params(const ConvShape& s, std::span<const T> x,
                            std::span<const T> gy, std::span<T> gw, std::span<T> gb) {
  if (backend() == Backend::kReference)
    reference::conv2d_backward_params(s, x, gy, gw, gb);
  else
    parallel::conv2d_backward_params(s, x, gy, gw, gb);
}

}  // namespace bagclr::kernels
