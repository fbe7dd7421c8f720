#include <gtest/gtest.h>

#include "bagclr/kernels.hpp"
#include "test_util.hpp"

using namespace bagclr;

namespace {

using T = double;

struct Case {
  int batch, cin, h, w, cout, k, stride;
};

class KernelParity : public ::testing::TestWithParam<Case> {};

kernels::ConvShape shape_of(const Case& c) {
  kernels::ConvShape s;
  s.batch = c.batch;
  s.in_channels = c.cin;
  s.height = c.h;
  s.width = c.w;
  s.out_channels = c.cout;
  s.kernel = c.k;
  s.stride = c.stride;
  s.pad = c.k / 2;
  return s;
}

TEST_P(KernelParity, ParallelMatchesReference) {
  const kernels::ConvShape s = shape_of(GetParam());
  std::mt19937_64 rng(5);
  auto x = test_support::random_tensor<double>({s.input_size()}, rng);
  auto w = test_support::random_tensor<double>({s.weight_size()}, rng);
  auto b = test_support::random_tensor<double>({static_cast<std::size_t>(s.out_channels)}, rng);
  auto gy = test_support::random_tensor<double>({s.output_size()}, rng);

  std::vector<double> y_ref(s.output_size()), y_par(s.output_size());
  kernels::reference::conv2d_forward<T>(s, x.values(), w.values(), b.values(), y_ref);
  kernels::parallel::conv2d_forward<T>(s, x.values(), w.values(), b.values(), y_par);
  for (std::size_t i = 0; i < y_ref.size(); ++i) EXPECT_NEAR(y_ref[i], y_par[i], 1e-12);

  std::vector<double> gx_ref(s.input_size()), gx_par(s.input_size());
  kernels::reference::conv2d_backward_input<T>(s, gy.values(), w.values(), gx_ref);
  kernels::parallel::conv2d_backward_input<T>(s, gy.values(), w.values(), gx_par);
  for (std::size_t i = 0; i < gx_ref.size(); ++i) EXPECT_NEAR(gx_ref[i], gx_par[i], 1e-12);

  std::vector<double> gw_ref(s.weight_size(), 0.0), gw_par(s.weight_size(), 0.0);
  std::vector<double> gb_ref(s.out_channels, 0.0), gb_par(s.out_channels, 0.0);
  kernels::reference::conv2d_backward_params<T>(s, x.values(), gy.values(), gw_ref, gb_ref);
  kernels::parallel::conv2d_backward_params<T>(s, x.values(), gy.values(), gw_par, gb_par);
  for (std::size_t i = 0; i < gw_ref.size(); ++i) EXPECT_NEAR(gw_ref[i], gw_par[i], 1e-10);
  for (std::size_t i = 0; i < gb_ref.size(); ++i) EXPECT_NEAR(gb_ref[i], gb_par[i], 1e-10);
}

INSTANTIATE_TEST_SUITE_P(Shapes, KernelParity,
                         ::testing::Values(Case{2, 3, 9, 9, 4, 3, 1}, Case{3, 4, 8, 8, 5, 3, 2},
                                           Case{2, 5, 7, 6, 3, 1, 1}, Case{4, 6, 9, 8, 7, 1, 2},
                                           Case{1, 2, 5, 5, 2, 5, 1}, Case{17, 3, 6, 6, 4, 3, 2}));

TEST(Kernels, ForwardMatchesDirectSum) {
  // 1 image, 1 channel, 3x3 identity-centered kernel: output equals input.
  kernels::ConvShape s = shape_of({1, 1, 4, 4, 1, 3, 1});
  std::vector<double> x(16), w(9, 0.0), y(16);
  for (int i = 0; i < 16; ++i) x[i] = i;
  w[4] = 1.0;
  kernels::reference::conv2d_forward<T>(s, x, w, {}, y);
  EXPECT_EQ(x, y);
  // All-ones kernel: corner sums four neighbors under zero padding.
  std::fill(w.begin(), w.end(), 1.0);
  kernels::reference::conv2d_forward<T>(s, x, w, {}, y);
  EXPECT_DOUBLE_EQ(y[0], 0 + 1 + 4 + 5);
  EXPECT_DOUBLE_EQ(y[5], 0 + 1 + 2 + 4 + 5 + 6 + 8 + 9 + 10);
}

TEST(Kernels, StrideTwoOutputSize) {
  kernels::ConvShape s = shape_of({1, 1, 9, 9, 1, 3, 2});
  EXPECT_EQ(s.out_height(), 5);
  EXPECT_EQ(s.out_width(), 5);
}

TEST(Kernels, ParallelIsDeterministic) {
  const kernels::ConvShape s = shape_of({33, 4, 8, 8, 6, 3, 1});
  std::mt19937_64 rng(9);
  auto x = test_support::random_tensor<float>({s.input_size()}, rng);
  auto gy = test_support::random_tensor<float>({s.output_size()}, rng);
  std::vector<float> a(s.weight_size(), 0.f), b(s.weight_size(), 0.f);
  kernels::parallel::conv2d_backward_params<float>(s, x.values(), gy.values(), a, {});
  kernels::parallel::conv2d_backward_params<float>(s, x.values(), gy.values(), b, {});
  EXPECT_EQ(a, b);
}

}  // namespace
