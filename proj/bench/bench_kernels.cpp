#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "bagclr/encoder.hpp"
#include "bagclr/kernels.hpp"

using namespace bagclr;
using kernels::Backend;
using kernels::ConvShape;

namespace {

// Shapes the default encoder runs at batch 32 on 64 x 64 inputs.
ConvShape shape(int index) {
  ConvShape s;
  s.batch = 32;
  switch (index) {
    case 0:  // stem 3x3
      s.in_channels = 3, s.height = s.width = 64, s.out_channels = 16, s.kernel = 3, s.pad = 1;
      break;
    case 1:  // stage-1 middle 3x3, stride 2
      s.in_channels = 8, s.height = s.width = 64, s.out_channels = 8, s.kernel = 3, s.stride = 2, s.pad = 1;
      break;
    default:  // stage-4 1x1
      s.in_channels = 64, s.height = s.width = 8, s.out_channels = 32, s.kernel = 1;
      break;
  }
  return s;
}

const char* kShapeNames[] = {"stem3x3", "mid3x3_s2", "pw1x1"};

struct Buffers {
  std::vector<float> x, w, b, y, gy, gx, gw, gb;
  explicit Buffers(const ConvShape& s)
      : x(s.input_size()), w(s.weight_size()), b(s.out_channels), y(s.output_size()),
        gy(s.output_size()), gx(s.input_size()), gw(s.weight_size()), gb(s.out_channels) {
    std::mt19937 rng(1);
    std::uniform_real_distribution<float> u(-1.f, 1.f);
    for (auto* v : {&x, &w, &b, &gy})
      for (auto& e : *v) e = u(rng);
  }
};

template <Backend B>
void BM_ConvForward(benchmark::State& state) {
  const ConvShape s = shape(static_cast<int>(state.range(0)));
  Buffers buf(s);
  kernels::set_backend(B);
  for (auto _ : state) {
    kernels::conv2d_forward<float>(s, buf.x, buf.w, buf.b, buf.y);
    benchmark::DoNotOptimize(buf.y.data());
  }
  state.SetLabel(kShapeNames[state.range(0)]);
  state.SetItemsProcessed(state.iterations() * s.batch);
}

template <Backend B>
void BM_ConvBackward(benchmark::State& state) {
  const ConvShape s = shape(static_cast<int>(state.range(0)));
  Buffers buf(s);
  kernels::set_backend(B);
  for (auto _ : state) {
    kernels::conv2d_backward_input<float>(s, buf.gy, buf.w, buf.gx);
    kernels::conv2d_backward_params<float>(s, buf.x, buf.gy, buf.gw, buf.gb);
    benchmark::DoNotOptimize(buf.gx.data());
    benchmark::DoNotOptimize(buf.gw.data());
  }
  state.SetLabel(kShapeNames[state.range(0)]);
  state.SetItemsProcessed(state.iterations() * s.batch);
}

// One training step of the default encoder (forward + backward), batch 16.
template <Backend B>
void BM_EncoderStep(benchmark::State& state) {
  kernels::set_backend(B);
  Encoder<float> enc(EncoderConfig{}, 1);
  Tensor<float> x({16, 3, 64, 64});
  std::mt19937 rng(2);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (auto& v : x.values()) v = u(rng);
  for (auto _ : state) {
    const FeatureMap<float> fm = enc.forward(x, Mode::kTrain, true);
    Tensor<float> g(fm.values.shape());
    g.fill(1e-3f);
    enc.backward(g, false);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * 16);
}

}  // namespace

BENCHMARK(BM_ConvForward<Backend::kReference>)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<Backend::kParallel>)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<Backend::kReference>)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<Backend::kParallel>)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EncoderStep<Backend::kReference>)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EncoderStep<Backend::kParallel>)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
