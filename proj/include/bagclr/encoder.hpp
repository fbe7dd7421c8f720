#pragma once

#include <cstdint>
#include <vector>

#include "bagclr/layers.hpp"

namespace bagclr {

/// Inclusive pixel rectangle.
struct PixelRect {
  int top = 0, left = 0, bottom = 0, right = 0;
  bool contains(int r, int c) const { return r >= top && r <= bottom && c >= left && c <= right; }
  int height() const { return bottom - top + 1; }
  int width() const { return right - left + 1; }
};

/// Maps feature-map positions back to the image pixels they can see. With
/// "same" padding throughout, position (i, j) is centered on pixel
/// (i * stride, j * stride).
struct PatchGeometry {
  int receptive_field = 1;
  int stride = 1;
  int image_height = 0;
  int image_width = 0;
  int rows = 0;
  int cols = 0;

  PixelRect rect(int i, int j) const;
  // True when the unclipped rectangle lies fully inside the image.
  bool interior(int i, int j) const;
};

/// Scaled-down bag-of-local-features network: a 3x3 stem followed by four
/// bottleneck stages with strides (2, 2, 2, 1). The first block of a stage uses
/// a 3x3 middle convolution only when the receptive-field budget asks for it,
/// so the field grows by 2, 4, 8, 16 pixels per 3x3 stage on top of the stem's 3.
struct EncoderConfig {
  int input_channels = 3;
  int image_size = 64;
  int receptive_field = 9;
  int stem_channels = 16;
  std::vector<int> stage_channels = {16, 32, 32, 64};
  int blocks_per_stage = 1;
  int bottleneck_divisor = 2;

  int feature_dim() const { return stage_channels.empty() ? 0 : stage_channels.back(); }
  // Throws ConfigError listing realizable fields when this one is not.
  void validate() const;
  // Which stages get a 3x3 middle convolution.
  std::vector<bool> stage_uses_3x3() const;
};

std::vector<int> realizable_receptive_fields();

/// Analytic field/stride propagation over the configured layer plan.
PatchGeometry compute_geometry(const EncoderConfig& config);

/// N x D x h x w activations (NCHW storage) plus their pixel geometry.
template <typename T>
struct FeatureMap {
  Tensor<T> values;
  PatchGeometry geometry;

  std::size_t batch() const { return values.dim(0); }
  std::size_t channels() const { return values.dim(1); }
  std::size_t rows() const { return values.dim(2); }
  std::size_t cols() const { return values.dim(3); }
  // Descriptor element d at patch (i, j) of image n.
  T at(std::size_t n, std::size_t i, std::size_t j, std::size_t d) const {
    return values.at(n, d, i, j);
  }
};

template <typename T>
class Bottleneck {
 public:
  Bottleneck() = default;
  Bottleneck(const std::string& name, int in_channels, int out_channels, int mid_channels,
             int kernel, int stride);

  void init(std::mt19937_64& rng);
  Tensor<T> apply(const Tensor<T>& x) const;
  Tensor<T> forward(const Tensor<T>& x, Mode mode, bool keep_for_backward);
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad);
  void collect(ParameterList<T>& out);
  void collect_buffers(BufferList<T>& out);

 private:
  Conv2d<T> conv_a_, conv_b_, conv_c_, conv_s_;
  BatchNorm2d<T> bn_a_, bn_b_, bn_c_, bn_s_;
  bool projection_shortcut_ = false;
  Tensor<T> act_a_, act_b_, act_out_;
};

template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& config, std::uint64_t init_seed);

  const EncoderConfig& config() const { return config_; }
  const PatchGeometry& geometry() const { return geometry_; }

  // Eval-mode pass with frozen running statistics; no state is touched.
  FeatureMap<T> encode(const Tensor<T>& images) const;
  FeatureMap<T> forward(const Tensor<T>& images, Mode mode, bool keep_for_backward);
  // Accumulates parameter gradients; returns the input gradient when asked.
  Tensor<T> backward(const Tensor<T>& grad_features, bool need_input_grad);

  void collect(ParameterList<T>& out);
  void collect_buffers(BufferList<T>& out);
  ParameterList<T> parameters();

 private:
  void check_input(const Tensor<T>& images) const;

  EncoderConfig config_;
  PatchGeometry geometry_;
  Conv2d<T> stem_conv_;
  BatchNorm2d<T> stem_bn_;
  std::vector<Bottleneck<T>> blocks_;
  Tensor<T> stem_act_;
};

/// values[n, d] = spatial mean of fm[n, :, :, d].
template <typename T>
Tensor<T> global_average_pool(const FeatureMap<T>& fm);

/// Spreads a pooled-gradient N x D back over an N x D x h x w map.
template <typename T>
Tensor<T> global_average_pool_backward(const Tensor<T>& grad_pooled, std::size_t rows,
                                       std::size_t cols);

}  // namespace bagclr
