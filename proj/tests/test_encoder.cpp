#include <gtest/gtest.h>

#include "bagclr/encoder.hpp"
#include "bagclr/kernels.hpp"
#include "test_util.hpp"

using namespace bagclr;
using test_support::random_tensor;

namespace {

EncoderConfig small(int rf, int size) {
  EncoderConfig c;
  c.image_size = size;
  c.receptive_field = rf;
  c.stem_channels = 4;
  c.stage_channels = {4, 6, 6, 8};
  return c;
}

TEST(Encoder, RealizableFields) {
  const auto f = realizable_receptive_fields();
  ASSERT_EQ(f.size(), 16u);
  EXPECT_EQ(f.front(), 3);
  EXPECT_EQ(f.back(), 33);
  for (int rf : {9, 17, 33}) EXPECT_NE(std::find(f.begin(), f.end(), rf), f.end());
  EncoderConfig c = small(10, 64);
  try {
    c.validate();
    FAIL() << "even field accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("9"), std::string::npos);
  }
  EXPECT_THROW(small(35, 64).validate(), ConfigError);
  EXPECT_THROW(small(9, 8).validate(), ConfigError);
}

TEST(Encoder, DefaultGeometry) {
  EncoderConfig c;
  const PatchGeometry g = compute_geometry(c);
  EXPECT_EQ(g.receptive_field, 9);
  EXPECT_EQ(g.stride, 8);
  EXPECT_EQ(g.rows, 8);
  EXPECT_EQ(g.cols, 8);
  const PixelRect r = g.rect(2, 3);
  EXPECT_EQ(r.top, 12);
  EXPECT_EQ(r.bottom, 20);
  EXPECT_EQ(r.left, 20);
  EXPECT_EQ(r.right, 28);
  EXPECT_FALSE(g.interior(0, 0));
  EXPECT_TRUE(g.interior(1, 1));
  const PixelRect corner = g.rect(0, 0);
  EXPECT_EQ(corner.top, 0);
  EXPECT_EQ(corner.bottom, 4);
}

TEST(Encoder, GeometryMatchesForwardShape) {
  for (int rf : {3, 9, 17, 33}) {
    Encoder<float> enc(small(rf, 40), 1);
    std::mt19937_64 rng(2);
    const auto fm = enc.encode(random_tensor<float>({1, 3, 40, 40}, rng, 0, 1));
    EXPECT_EQ(static_cast<int>(fm.rows()), enc.geometry().rows);
    EXPECT_EQ(fm.channels(), 8u);
    EXPECT_EQ(fm.geometry.receptive_field, rf);
  }
}

// The input-gradient support of one output position is the receptive field.
// Four-channel stages leave too many dead ReLU paths in eval mode, so this
// uses the default widths.
TEST(Encoder, EmpiricalReceptiveFieldMatchesGeometry) {
  for (int rf : {5, 9, 17}) {
    EncoderConfig c;
    c.image_size = 40;
    c.receptive_field = rf;
    Encoder<double> enc(c, 3);
    std::mt19937_64 rng(4);
    const Tensor<double> x = random_tensor<double>({1, 3, 40, 40}, rng, 0.2, 1.0);
    const auto fm = enc.forward(x, Mode::kEval, true);
    const int i = 2, j = 2;
    Tensor<double> g(fm.values.shape());
    for (std::size_t d = 0; d < fm.channels(); ++d) g.at(0, d, i, j) = 1.0 + d;
    const Tensor<double> gx = enc.backward(g, true);
    const PixelRect want = fm.geometry.rect(i, j);
    int top = 99, bottom = -1, left = 99, right = -1;
    for (int r = 0; r < 40; ++r)
      for (int c = 0; c < 40; ++c) {
        double s = 0;
        for (int ch = 0; ch < 3; ++ch) s += std::abs(gx.at(0, ch, r, c));
        if (s != 0.0) {
          top = std::min(top, r), bottom = std::max(bottom, r);
          left = std::min(left, c), right = std::max(right, c);
        }
      }
    EXPECT_EQ(top, want.top) << rf;
    EXPECT_EQ(bottom, want.bottom) << rf;
    EXPECT_EQ(left, want.left) << rf;
    EXPECT_EQ(right, want.right) << rf;
  }
}

TEST(Encoder, OutOfFieldPerturbationLeavesPatchUnchanged) {
  Encoder<float> enc(EncoderConfig{}, 5);
  std::mt19937_64 rng(6);
  const Tensor<float> x = random_tensor<float>({1, 3, 64, 64}, rng, 0, 1);
  const auto base = enc.encode(x);
  const PixelRect r = base.geometry.rect(3, 4);
  Tensor<float> y = x;
  y.at(0, 1, r.bottom + 1, r.left) += 0.5f;
  y.at(0, 0, r.top, r.right + 1) -= 0.5f;
  const auto moved = enc.encode(y);
  for (std::size_t d = 0; d < base.channels(); ++d) EXPECT_EQ(base.at(0, 3, 4, d), moved.at(0, 3, 4, d));
  Tensor<float> z = x;
  z.at(0, 2, r.top, r.left) += 0.5f;
  const auto inside = enc.encode(z);
  double change = 0;
  for (std::size_t d = 0; d < base.channels(); ++d) change += std::abs(base.at(0, 3, 4, d) - inside.at(0, 3, 4, d));
  EXPECT_GT(change, 1e-6);
}

TEST(Encoder, ConstantImageGivesConstantInterior) {
  Encoder<double> enc(EncoderConfig{}, 7);
  Tensor<double> x({1, 3, 64, 64}, 0.37);
  const auto fm = enc.encode(x);
  const auto& g = fm.geometry;
  for (std::size_t d = 0; d < fm.channels(); ++d)
    for (int i = 0; i < g.rows; ++i)
      for (int j = 0; j < g.cols; ++j)
        if (g.interior(i, j)) EXPECT_NEAR(fm.at(0, i, j, d), fm.at(0, 1, 1, d), 1e-12);
}

TEST(Encoder, ShapeMismatchNamesBothShapes) {
  Encoder<float> enc(EncoderConfig{}, 8);
  try {
    enc.encode(Tensor<float>({1, 3, 32, 32}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("64"), std::string::npos);
    EXPECT_NE(msg.find("32"), std::string::npos);
  }
}

TEST(Encoder, SeedDeterminesInitialization) {
  Encoder<float> a(EncoderConfig{}, 9), b(EncoderConfig{}, 9), c(EncoderConfig{}, 10);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->value, pb[i]->value);
    differs |= !(pa[i]->value == pc[i]->value);
  }
  EXPECT_TRUE(differs);
}

TEST(Encoder, BatchCompositionDoesNotChangeOutputs) {
  Encoder<float> enc(EncoderConfig{}, 11);
  std::mt19937_64 rng(12);
  const Tensor<float> x = random_tensor<float>({5, 3, 64, 64}, rng, 0, 1);
  const auto all = enc.encode(x);
  Tensor<float> one({1, 3, 64, 64});
  std::copy_n(x.data() + 3 * one.size(), one.size(), one.data());
  const auto single = enc.encode(one);
  const std::size_t per = single.values.size();
  for (std::size_t i = 0; i < per; ++i) EXPECT_EQ(single.values[i], all.values[3 * per + i]);
}

TEST(Encoder, EncodeLeavesRunningStatisticsAlone) {
  Encoder<float> enc(EncoderConfig{}, 13);
  BufferList<float> buffers;
  enc.collect_buffers(buffers);
  std::vector<Tensor<float>> before;
  for (auto* b : buffers) before.push_back(b->value);
  std::mt19937_64 rng(14);
  enc.encode(random_tensor<float>({2, 3, 64, 64}, rng, 0, 1));
  for (std::size_t i = 0; i < buffers.size(); ++i) EXPECT_EQ(buffers[i]->value, before[i]);
  enc.forward(random_tensor<float>({2, 3, 64, 64}, rng, 0, 1), Mode::kTrain, false);
  bool moved = false;
  for (std::size_t i = 0; i < buffers.size(); ++i) moved |= !(buffers[i]->value == before[i]);
  EXPECT_TRUE(moved);
}

TEST(Encoder, BackendsAgree) {
  Encoder<double> enc(small(9, 24), 15);
  std::mt19937_64 rng(16);
  const Tensor<double> x = random_tensor<double>({3, 3, 24, 24}, rng, 0, 1);
  kernels::set_backend(kernels::Backend::kReference);
  const auto ref = enc.forward(x, Mode::kTrain, false);
  kernels::set_backend(kernels::Backend::kParallel);
  const auto par = enc.forward(x, Mode::kTrain, false);
  for (std::size_t i = 0; i < ref.values.size(); ++i) EXPECT_NEAR(ref.values[i], par.values[i], 1e-10);
}

TEST(Encoder, GlobalAveragePool) {
  FeatureMap<float> fm{Tensor<float>({1, 2, 2, 2}), {}};
  for (std::size_t i = 0; i < 8; ++i) fm.values[i] = static_cast<float>(i);
  const Tensor<float> p = global_average_pool(fm);
  EXPECT_FLOAT_EQ(p.at(0, 0), 1.5f);
  EXPECT_FLOAT_EQ(p.at(0, 1), 5.5f);
}

}  // namespace
