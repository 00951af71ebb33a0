#include <benchmark/benchmark.h>

#include "fetrack/aggregation.hpp"
#include "fetrack/rng.hpp"

namespace {

using namespace fetrack;

EventStream make_stream(std::int64_t count) {
  Rng rng(42);
  EventStream s;
  s.width = 346;
  s.height = 260;
  std::vector<std::uint64_t> times(static_cast<std::size_t>(count));
  for (auto& t : times) t = static_cast<std::uint64_t>(rng.uniform_int(0, 25000));
  std::sort(times.begin(), times.end());
  for (std::int64_t i = 0; i < count; ++i) {
    s.events.push_back({times[static_cast<std::size_t>(i)],
                        static_cast<std::uint16_t>(rng.uniform_int(0, s.width - 1)),
                        static_cast<std::uint16_t>(rng.uniform_int(0, s.height - 1)),
                        rng.uniform() < 0.5 ? std::int8_t{1} : std::int8_t{-1}});
  }
  return s;
}

void LatestPolarity(benchmark::State& state) {
  const EventStream s = make_stream(state.range(0));
  for (auto _ : state) {
    auto img = aggregate_latest_polarity(s, s.width, s.height);
    benchmark::DoNotOptimize(img.pixels.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(LatestPolarity)->Arg(10000)->Arg(100000)->Arg(1000000);

void BinEvents(benchmark::State& state) {
  const EventStream s = make_stream(state.range(0));
  const BinSpec spec{0, 25000, 3};
  for (auto _ : state) {
    auto bins = bin_events(s, spec);
    benchmark::DoNotOptimize(bins.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BinEvents)->Arg(10000)->Arg(100000)->Arg(1000000);

void InterframeSweepN(benchmark::State& state) {
  const EventStream s = make_stream(200000);
  const int n = static_cast<int>(state.range(0));
  for (auto _ : state) {
    auto agg = aggregate_interframe(s, 0, 25000, n);
    benchmark::DoNotOptimize(agg.frames.data());
  }
  state.SetItemsProcessed(state.iterations() * 200000);
}
BENCHMARK(InterframeSweepN)->DenseRange(1, 6);

void TimeSurface(benchmark::State& state) {
  const EventStream s = make_stream(state.range(0));
  for (auto _ : state) {
    auto frames =
        aggregate_baseline(s, AggregationMethod::TimeSurface, {}, s.width, s.height, 0, 25000);
    benchmark::DoNotOptimize(frames.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(TimeSurface)->Arg(100000);

}  // namespace
