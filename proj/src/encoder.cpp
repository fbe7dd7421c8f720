#include "bagclr/encoder.hpp"

#include <algorithm>
#include <sstream>

namespace bagclr {

namespace {
constexpr int kStageStrides[4] = {2, 2, 2, 1};
constexpr int kStemField = 3;
}  // namespace

PixelRect PatchGeometry::rect(int i, int j) const {
  const int half = (receptive_field - 1) / 2;
  PixelRect r;
  r.top = std::max(0, i * stride - half);
  r.left = std::max(0, j * stride - half);
  r.bottom = std::min(image_height - 1, i * stride + half);
  r.right = std::min(image_width - 1, j * stride + half);
  return r;
}

bool PatchGeometry::interior(int i, int j) const {
  const int half = (receptive_field - 1) / 2;
  return i * stride - half >= 0 && j * stride - half >= 0 &&
         i * stride + half < image_height && j * stride + half < image_width;
}

std::vector<int> realizable_receptive_fields() {
  std::vector<int> out;
  for (int mask = 0; mask < 16; ++mask) {
    int rf = kStemField, jump = 1;
    for (int s = 0; s < 4; ++s) {
      if (mask & (1 << s)) rf += 2 * jump;
      jump *= kStageStrides[s];
    }
    out.push_back(rf);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<bool> EncoderConfig::stage_uses_3x3() const {
  // Stage s adds 2 * jump(s) = 2^(s+1) pixels, so the plan is the binary
  // expansion of (rf - 3) / 2.
  std::vector<bool> flags(4, false);
  const int budget = (receptive_field - kStemField) / 2;
  for (int s = 0; s < 4; ++s) flags[s] = (budget >> s) & 1;
  return flags;
}

void EncoderConfig::validate() const {
  const auto fields = realizable_receptive_fields();
  if (std::find(fields.begin(), fields.end(), receptive_field) == fields.end()) {
    std::ostringstream msg;
    msg << "receptive field " << receptive_field << " is not realizable; choose one of {";
    for (std::size_t i = 0; i < fields.size(); ++i) msg << (i ? ", " : "") << fields[i];
    msg << "}";
    throw ConfigError(msg.str());
  }
  if (stage_channels.size() != 4) throw ConfigError("encoder needs exactly four stage widths");
  if (input_channels < 1 || stem_channels < 1 || blocks_per_stage < 1 || bottleneck_divisor < 1)
    throw ConfigError("encoder widths and block counts must be positive");
  for (int c : stage_channels)
    if (c < bottleneck_divisor) throw ConfigError("stage width smaller than bottleneck divisor");
  if (image_size < receptive_field)
    throw ConfigError("image_size smaller than the receptive field");
}

PatchGeometry compute_geometry(const EncoderConfig& config) {
  config.validate();
  const auto flags = config.stage_uses_3x3();
  int rf = 1, jump = 1, size = config.image_size;
  rf += 2 * jump;  // stem
  for (int s = 0; s < 4; ++s) {
    const int k = flags[s] ? 3 : 1;
    rf += (k - 1) * jump;
    jump *= kStageStrides[s];
    size = (size - 1) / kStageStrides[s] + 1;
  }
  PatchGeometry g;
  g.receptive_field = rf;
  g.stride = jump;
  g.image_height = g.image_width = config.image_size;
  g.rows = g.cols = size;
  return g;
}

// ------------------------------------------------------------ Bottleneck

template <typename T>
Bottleneck<T>::Bottleneck(const std::string& name, int in_channels, int out_channels,
                          int mid_channels, int kernel, int stride)
    : conv_a_(name + ".conv_a", in_channels, mid_channels, 1, 1, false),
      conv_b_(name + ".conv_b", mid_channels, mid_channels, kernel, stride, false),
      conv_c_(name + ".conv_c", mid_channels, out_channels, 1, 1, false),
      bn_a_(name + ".bn_a", mid_channels),
      bn_b_(name + ".bn_b", mid_channels),
      bn_c_(name + ".bn_c", out_channels),
      projection_shortcut_(stride != 1 || in_channels != out_channels) {
  if (projection_shortcut_) {
    conv_s_ = Conv2d<T>(name + ".conv_s", in_channels, out_channels, 1, stride, false);
    bn_s_ = BatchNorm2d<T>(name + ".bn_s", out_channels);
  }
}

template <typename T>
void Bottleneck<T>::init(std::mt19937_64& rng) {
  conv_a_.init(rng);
  conv_b_.init(rng);
  conv_c_.init(rng);
  if (projection_shortcut_) conv_s_.init(rng);
}

template <typename T>
Tensor<T> Bottleneck<T>::apply(const Tensor<T>& x) const {
  Tensor<T> a = bn_a_.apply(conv_a_.apply(x));
  relu_inplace(a);
  Tensor<T> b = bn_b_.apply(conv_b_.apply(a));
  relu_inplace(b);
  Tensor<T> c = bn_c_.apply(conv_c_.apply(b));
  if (projection_shortcut_) {
    const Tensor<T> s = bn_s_.apply(conv_s_.apply(x));
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += s[i];
  } else {
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += x[i];
  }
  relu_inplace(c);
  return c;
}

template <typename T>
Tensor<T> Bottleneck<T>::forward(const Tensor<T>& x, Mode mode, bool keep) {
  Tensor<T> a = bn_a_.forward(conv_a_.forward(x, keep), mode, keep);
  relu_inplace(a);
  Tensor<T> b = bn_b_.forward(conv_b_.forward(a, keep), mode, keep);
  relu_inplace(b);
  Tensor<T> c = bn_c_.forward(conv_c_.forward(b, keep), mode, keep);
  if (projection_shortcut_) {
    const Tensor<T> s = bn_s_.forward(conv_s_.forward(x, keep), mode, keep);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += s[i];
  } else {
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += x[i];
  }
  relu_inplace(c);
  if (keep) {
    act_a_ = std::move(a);
    act_b_ = std::move(b);
    act_out_ = c;
  }
  return c;
}

template <typename T>
Tensor<T> Bottleneck<T>::backward(const Tensor<T>& grad_out, bool need_input_grad) {
  Tensor<T> g = grad_out;
  relu_backward_inplace(g, act_out_);
  Tensor<T> gb = bn_c_.backward(g);
  gb = conv_c_.backward(gb, true);
  relu_backward_inplace(gb, act_b_);
  Tensor<T> ga = conv_b_.backward(bn_b_.backward(gb), true);
  relu_backward_inplace(ga, act_a_);
  Tensor<T> gx = conv_a_.backward(bn_a_.backward(ga), need_input_grad);
  if (projection_shortcut_) {
    Tensor<T> gs = conv_s_.backward(bn_s_.backward(g), need_input_grad);
    if (need_input_grad)
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gs[i];
  } else if (need_input_grad) {
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  }
  act_a_ = act_b_ = act_out_ = Tensor<T>();
  return gx;
}

template <typename T>
void Bottleneck<T>::collect(ParameterList<T>& out) {
  conv_a_.collect(out);
  bn_a_.collect(out);
  conv_b_.collect(out);
  bn_b_.collect(out);
  conv_c_.collect(out);
  bn_c_.collect(out);
  if (projection_shortcut_) {
    conv_s_.collect(out);
    bn_s_.collect(out);
  }
}

template <typename T>
void Bottleneck<T>::collect_buffers(BufferList<T>& out) {
  bn_a_.collect_buffers(out);
  bn_b_.collect_buffers(out);
  bn_c_.collect_buffers(out);
  if (projection_shortcut_) bn_s_.collect_buffers(out);
}

// --------------------------------------------------------------- Encoder

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& config, std::uint64_t init_seed)
    : config_(config),
      geometry_(compute_geometry(config)),
      stem_conv_("encoder.stem.conv", config.input_channels, config.stem_channels, 3, 1, false),
      stem_bn_("encoder.stem.bn", config.stem_channels) {
  const auto flags = config.stage_uses_3x3();
  int in = config.stem_channels;
  for (int s = 0; s < 4; ++s) {
    const int out = config.stage_channels[s];
    const int mid = std::max(1, out / config.bottleneck_divisor);
    for (int b = 0; b < config.blocks_per_stage; ++b) {
      const std::string name =
          "encoder.stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      const bool first = b == 0;
      blocks_.emplace_back(name, in, out, mid, first && flags[s] ? 3 : 1,
                           first ? kStageStrides[s] : 1);
      in = out;
    }
  }
  std::mt19937_64 rng(init_seed);
  stem_conv_.init(rng);
  for (auto& b : blocks_) b.init(rng);
}

template <typename T>
void Encoder<T>::check_input(const Tensor<T>& images) const {
  const auto& s = images.shape();
  const auto c = static_cast<std::size_t>(config_.input_channels);
  const auto hw = static_cast<std::size_t>(config_.image_size);
  if (s.size() != 4 || s[1] != c || s[2] != hw || s[3] != hw)
    throw ShapeError("encoder expected N x " + std::to_string(c) + " x " + std::to_string(hw) +
                     " x " + std::to_string(hw) + " images, got " + shape_string(s));
}

template <typename T>
FeatureMap<T> Encoder<T>::encode(const Tensor<T>& images) const {
  check_input(images);
  Tensor<T> x = stem_bn_.apply(stem_conv_.apply(images));
  relu_inplace(x);
  for (const auto& b : blocks_) x = b.apply(x);
  return {std::move(x), geometry_};
}

template <typename T>
FeatureMap<T> Encoder<T>::forward(const Tensor<T>& images, Mode mode, bool keep) {
  check_input(images);
  Tensor<T> x = stem_bn_.forward(stem_conv_.forward(images, keep), mode, keep);
  relu_inplace(x);
  if (keep) stem_act_ = x;
  for (auto& b : blocks_) x = b.forward(x, mode, keep);
  return {std::move(x), geometry_};
}

template <typename T>
Tensor<T> Encoder<T>::backward(const Tensor<T>& grad_features, bool need_input_grad) {
  Tensor<T> g = grad_features;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = it->backward(g, true);
  relu_backward_inplace(g, stem_act_);
  stem_act_ = Tensor<T>();
  return stem_conv_.backward(stem_bn_.backward(g), need_input_grad);
}

template <typename T>
void Encoder<T>::collect(ParameterList<T>& out) {
  stem_conv_.collect(out);
  stem_bn_.collect(out);
  for (auto& b : blocks_) b.collect(out);
}

template <typename T>
void Encoder<T>::collect_buffers(BufferList<T>& out) {
  stem_bn_.collect_buffers(out);
  for (auto& b : blocks_) b.collect_buffers(out);
}

template <typename T>
ParameterList<T> Encoder<T>::parameters() {
  ParameterList<T> out;
  collect(out);
  return out;
}

// ----------------------------------------------------------------- pooling

template <typename T>
Tensor<T> global_average_pool(const FeatureMap<T>& fm) {
  const std::size_t n = fm.batch(), d = fm.channels(), plane = fm.rows() * fm.cols();
  if (plane == 0) throw ShapeError("global_average_pool: empty spatial map");
  Tensor<T> out({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      const T* src = fm.values.data() + (i * d + c) * plane;
      double acc = 0.0;
      for (std::size_t p = 0; p < plane; ++p) acc += src[p];
      out.at(i, c) = static_cast<T>(acc / static_cast<double>(plane));
    }
  return out;
}

template <typename T>
Tensor<T> global_average_pool_backward(const Tensor<T>& grad_pooled, std::size_t rows,
                                       std::size_t cols) {
  const std::size_t n = grad_pooled.dim(0), d = grad_pooled.dim(1), plane = rows * cols;
  Tensor<T> g({n, d, rows, cols});
  const T inv = static_cast<T>(1.0 / static_cast<double>(plane));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      const T v = grad_pooled.at(i, c) * inv;
      T* dst = g.data() + (i * d + c) * plane;
      std::fill(dst, dst + plane, v);
    }
  return g;
}

template class Bottleneck<float>;
template class Bottleneck<double>;
template class Encoder<float>;
template class Encoder<double>;
template Tensor<float> global_average_pool<float>(const FeatureMap<float>&);
template Tensor<double> global_average_pool<double>(const FeatureMap<double>&);
template Tensor<float> global_average_pool_backward<float>(const Tensor<float>&, std::size_t,
                                                           std::size_t);
template Tensor<double> global_average_pool_backward<double>(const Tensor<double>&, std::size_t,
                                                             std::size_t);

}  // namespace bagclr
