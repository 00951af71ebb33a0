#include <benchmark/benchmark.h>

#include "fetrack/model.hpp"
#include "fetrack/rng.hpp"

namespace {

using namespace fetrack;

Tensor random_tensor(Shape shape, Rng& rng, double scale = 0.3) {
  std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
  for (double& v : data) v = rng.normal(0.0, scale);
  return Tensor::from_data(std::move(shape), std::move(data));
}

void Conv2dForward(benchmark::State& state) {
  Rng rng(1);
  const auto c = state.range(0);
  auto x = random_tensor({1, c, 32, 32}, rng);
  auto w = random_tensor({c, c, 3, 3}, rng);
  auto b = random_tensor({c}, rng);
  NoGradGuard ng;
  for (auto _ : state) {
    auto y = conv2d(x, w, b, 1, 1);
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(Conv2dForward)->Arg(16)->Arg(32)->Arg(64);

void CdfiForwardToy(benchmark::State& state) {
  ModelConfig cfg = ModelConfig::toy(0);
  cfg.cdfi.n_bins = static_cast<int>(state.range(0));
  TrackerModel model(cfg);
  model.set_training(false);
  Rng rng(2);
  auto frame = random_tensor({1, 1, 96, 128}, rng);
  std::vector<Tensor> bins;
  for (int i = 0; i < cfg.cdfi.n_bins; ++i) bins.push_back(random_tensor({1, 1, 96, 128}, rng));
  NoGradGuard ng;
  for (auto _ : state) {
    auto k = model.cdfi().forward(frame, bins);
    benchmark::DoNotOptimize(k.low.data().data());
  }
}
BENCHMARK(CdfiForwardToy)->DenseRange(1, 6);

void RegionPool(benchmark::State& state) {
  Rng rng(3);
  auto feat = random_tensor({1, 16, 16, 12}, rng);
  auto boxes = Tensor::from_data({10, 4}, [&] {
    std::vector<double> v;
    for (int i = 0; i < 10; ++i) {
      v.insert(v.end(), {rng.uniform(4.0, 60.0), rng.uniform(4.0, 40.0),
                         rng.uniform(8.0, 30.0), rng.uniform(8.0, 30.0)});
    }
    return v;
  }());
  NoGradGuard ng;
  for (auto _ : state) {
    auto out = region_pool(feat, boxes, 5, 5, 0.125, 2, 0.4375);
    benchmark::DoNotOptimize(out.data().data());
  }
}
BENCHMARK(RegionPool);

}  // namespace
