#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fetrack/aggregation.hpp"
#include "fetrack/errors.hpp"
#include "fetrack/rng.hpp"

using namespace fetrack;

namespace {

EventStream random_stream(Rng& rng, int w, int h, int count, std::uint64_t t_max) {
  EventStream s;
  s.width = w;
  s.height = h;
  std::vector<std::uint64_t> times(count);
  for (auto& t : times) t = static_cast<std::uint64_t>(rng.uniform_int(0, static_cast<std::int64_t>(t_max)));
  std::sort(times.begin(), times.end());
  for (int i = 0; i < count; ++i) {
    s.events.push_back({times[static_cast<std::size_t>(i)],
                        static_cast<std::uint16_t>(rng.uniform_int(0, w - 1)),
                        static_cast<std::uint16_t>(rng.uniform_int(0, h - 1)),
                        rng.uniform() < 0.5 ? std::int8_t{1} : std::int8_t{-1}});
  }
  return s;
}

// Brute-force per-pixel latest-timestamp scan straight from the definition.
Image8 latest_polarity_oracle(const EventStream& bin, int w, int h) {
  Image8 out(w, h, 127);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      bool found = false;
      std::uint64_t best_t = 0;
      int best_p = 0;
      for (const Event& e : bin.events) {
        if (e.x != x || e.y != y) continue;
        if (!found || e.t >= best_t) {
          found = true;
          best_t = e.t;
          best_p = e.p;
        }
      }
      if (found) out.at(x, y) = best_p > 0 ? 255 : 0;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("bin_events: enumerated example and identity case") {
  EventStream s;
  s.width = 4;
  s.height = 4;
  s.events = {{0, 0, 0, 1}, {10, 1, 1, 1}, {20, 2, 2, -1}, {29, 3, 3, 1}};

  auto bins = bin_events(s, BinSpec{0, 30, 3});
  REQUIRE(bins.size() == 3);
  CHECK(bins[0].size() == 1);
  CHECK(bins[0].events[0].t == 0);
  CHECK(bins[1].size() == 1);
  CHECK(bins[1].events[0].t == 10);
  CHECK(bins[2].size() == 2);

  auto single = bin_events(s, BinSpec{0, 30, 1});
  CHECK(single[0].events == slice(s, 0, 30, true).events);

  CHECK_THROWS_AS(bin_events(s, BinSpec{30, 30, 3}), RangeError);
  CHECK_THROWS_AS(bin_events(s, BinSpec{0, 30, 0}), RangeError);
}

TEST_CASE("bin_events: matches per-event floor((t-t0)/B) oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_stream(rng, 16, 12, 10000, 100000);
    const int n = static_cast<int>(rng.uniform_int(1, 6));
    const BinSpec spec{1000, 99000, n};
    const auto bins = bin_events(s, spec);

    std::vector<std::vector<Event>> expect(static_cast<std::size_t>(n));
    const double b = spec.bin_width();
    for (const Event& e : s.events) {
      if (e.t < spec.t_start || e.t > spec.t_end) continue;
      auto idx = static_cast<std::int64_t>(
          std::floor(static_cast<double>(e.t - spec.t_start) / b));
      idx = std::clamp<std::int64_t>(idx, 0, n - 1);
      expect[static_cast<std::size_t>(idx)].push_back(e);
    }
    for (int i = 0; i < n; ++i) CHECK(bins[static_cast<std::size_t>(i)].events == expect[static_cast<std::size_t>(i)]);

    // Union preserves every in-range event.
    std::size_t total = 0;
    for (const auto& bin : bins) total += bin.size();
    CHECK(total == slice(s, spec.t_start, spec.t_end, true).size());
  }
}

TEST_CASE("latest polarity: enumerated base cases") {
  EventStream empty;
  empty.width = 8;
  empty.height = 8;
  auto img = aggregate_latest_polarity(empty, 8, 8);
  CHECK(std::all_of(img.pixels.begin(), img.pixels.end(),
                    [](std::uint8_t v) { return v == 127; }));

  EventStream one = empty;
  one.events = {{5, 5, 5, 1}};
  img = aggregate_latest_polarity(one, 8, 8);
  CHECK(img.at(5, 5) == 255);
  CHECK(img.at(0, 0) == 127);

  EventStream two = empty;
  two.events = {{10, 3, 3, -1}, {20, 3, 3, 1}};
  img = aggregate_latest_polarity(two, 8, 8);
  CHECK(img.at(3, 3) == 255);

  // Equal timestamps: last in stream order wins.
  EventStream tied = empty;
  tied.events = {{10, 3, 3, 1}, {10, 3, 3, -1}};
  img = aggregate_latest_polarity(tied, 8, 8);
  CHECK(img.at(3, 3) == 0);
}

TEST_CASE("latest polarity: matches per-pixel scan oracle; range is {0,127,255}") {
  Rng rng(5);
  const auto s = random_stream(rng, 24, 18, 10000, 50000);
  const auto img = aggregate_latest_polarity(s, 24, 18);
  CHECK(img == latest_polarity_oracle(s, 24, 18));
  for (std::uint8_t v : img.pixels) CHECK((v == 0 || v == 127 || v == 255));
}

TEST_CASE("latest polarity: permutation of non-conflicting events is invariant") {
  Rng rng(9);
  auto s = random_stream(rng, 16, 16, 500, 20000);
  const auto base = aggregate_latest_polarity(s, 16, 16);
  // Reverse groups of events with distinct (pixel, t) keys: a full reverse may
  // swap tied events, so shuffle only strictly unique ones.
  std::vector<Event> shuffled = s.events;
  for (int i = 0; i + 3 < static_cast<int>(shuffled.size()); i += 4) {
    const auto key = [](const Event& e) {
      return std::tuple(e.x, e.y, e.t);
    };
    if (key(shuffled[i]) != key(shuffled[i + 1])) std::swap(shuffled[i], shuffled[i + 1]);
  }
  EventStream p = s;
  p.events = shuffled;
  CHECK(aggregate_latest_polarity(p, 16, 16) == base);
}

TEST_CASE("event_count: empty bin gives zeros; random bins match histogram oracle") {
  EventStream empty;
  empty.width = 6;
  empty.height = 6;
  auto frames = aggregate_baseline(empty, AggregationMethod::EventCount, {}, 6, 6, 0, 100);
  REQUIRE(frames.size() == 2);
  for (const auto& f : frames) {
    CHECK(std::all_of(f.pixels.begin(), f.pixels.end(), [](std::uint8_t v) { return v == 0; }));
  }

  Rng rng(13);
  const auto s = random_stream(rng, 12, 10, 3000, 10000);
  frames = aggregate_baseline(s, AggregationMethod::EventCount, {}, 12, 10, 0, 10000);
  std::vector<std::int64_t> pos(120, 0), neg(120, 0);
  for (const Event& e : s.events) (e.p > 0 ? pos : neg)[e.y * 12 + e.x]++;
  std::int64_t max_count = 0;
  for (std::size_t i = 0; i < pos.size(); ++i) max_count = std::max({max_count, pos[i], neg[i]});
  for (std::size_t i = 0; i < pos.size(); ++i) {
    CHECK(frames[0].pixels[i] ==
          static_cast<std::uint8_t>(std::lround(255.0 * static_cast<double>(pos[i]) / static_cast<double>(max_count))));
    CHECK(frames[1].pixels[i] ==
          static_cast<std::uint8_t>(std::lround(255.0 * static_cast<double>(neg[i]) / static_cast<double>(max_count))));
  }
}

TEST_CASE("time_surface: event at bin end has zero decay") {
  EventStream s;
  s.width = 4;
  s.height = 4;
  s.events = {{1000, 2, 2, 1}};
  const auto frames =
      aggregate_baseline(s, AggregationMethod::TimeSurface, {}, 4, 4, 0, 1000);
  CHECK(frames[0].at(2, 2) == 255);
  CHECK(frames[1].at(2, 2) == 0);
}

TEST_CASE("aggregate_interframe: empty interval and n=1 identity") {
  EventStream s;
  s.width = 8;
  s.height = 8;
  s.events = {{100, 1, 1, 1}};

  auto agg = aggregate_interframe(s, 5000, 8000, 3);
  CHECK(agg.bins == 3);
  for (const auto& f : agg.frames) {
    CHECK(std::all_of(f.pixels.begin(), f.pixels.end(), [](std::uint8_t v) { return v == 127; }));
  }

  auto one = aggregate_interframe(s, 0, 1000, 1);
  CHECK(one.frame(0) == aggregate_latest_polarity(slice(s, 0, 1000, true), 8, 8));
}

TEST_CASE("aggregate_interframe: equals sequential composition oracle") {
  Rng rng(17);
  const auto s = random_stream(rng, 20, 14, 5000, 60000);
  const int n = 3;
  const auto agg = aggregate_interframe(s, 10000, 55000, n);
  const auto bins = bin_events(s, BinSpec{10000, 55000, n});
  for (int i = 0; i < n; ++i) {
    CHECK(agg.frame(i) == aggregate_latest_polarity(bins[static_cast<std::size_t>(i)], 20, 14));
  }
}

TEST_CASE("zhu_voxel: matches bilinear splat oracle") {
  Rng rng(23);
  const auto s = random_stream(rng, 10, 8, 2000, 30000);
  const int n = 4;
  const BinSpec spec{0, 30000, n};
  const auto agg = aggregate_interframe(s, 0, 30000, n, AggregationMethod::ZhuVoxel);

  for (int i = 0; i < n; ++i) {
    std::vector<double> acc(80, 0.0);
    for (const Event& e : s.events) {
      const double tn = (n - 1) * static_cast<double>(e.t) / 30000.0;
      const double w = std::max(0.0, 1.0 - std::abs(tn - i));
      acc[e.y * 10 + e.x] += w * e.p;
    }
    double max_abs = 0.0;
    for (double v : acc) max_abs = std::max(max_abs, std::abs(v));
    for (std::size_t k = 0; k < acc.size(); ++k) {
      const auto expect = max_abs == 0.0
                              ? std::uint8_t{127}
                              : static_cast<std::uint8_t>(std::clamp(
                                    std::lround(127.0 + 128.0 * acc[k] / max_abs), 0L, 255L));
      CHECK(agg.frame(i).pixels[k] == expect);
    }
  }
}

TEST_CASE("unknown aggregation method name raises ConfigError") {
  CHECK_THROWS_AS(aggregation_method_from_string("fancy"), ConfigError);
}
