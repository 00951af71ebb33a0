#include "fetrack/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fetrack/errors.hpp"

namespace fetrack {

void BinSpec::check() const {
  if (t_end <= t_start) throw RangeError("BinSpec: t_end must exceed t_start");
  if (n < 1) throw RangeError("BinSpec: n must be >= 1");
}

int BinSpec::bin_index(std::uint64_t t) const {
  const double b = bin_width();
  const auto idx = static_cast<std::int64_t>(std::floor(static_cast<double>(t - t_start) / b));
  return static_cast<int>(std::clamp<std::int64_t>(idx, 0, n - 1));
}

AggregationMethod aggregation_method_from_string(const std::string& name) {
  if (name == "latest_polarity") return AggregationMethod::LatestPolarity;
  if (name == "event_count") return AggregationMethod::EventCount;
  if (name == "event_frame") return AggregationMethod::EventFrame;
  if (name == "time_surface") return AggregationMethod::TimeSurface;
  if (name == "tsltd") return AggregationMethod::Tsltd;
  if (name == "zhu_voxel") return AggregationMethod::ZhuVoxel;
  throw ConfigError("unknown aggregation method: " + name);
}

std::string to_string(AggregationMethod method) {
  switch (method) {
    case AggregationMethod::LatestPolarity: return "latest_polarity";
    case AggregationMethod::EventCount: return "event_count";
    case AggregationMethod::EventFrame: return "event_frame";
    case AggregationMethod::TimeSurface: return "time_surface";
    case AggregationMethod::Tsltd: return "tsltd";
    case AggregationMethod::ZhuVoxel: return "zhu_voxel";
  }
  throw ConfigError("unknown aggregation method");
}

int channels_per_bin(AggregationMethod method) {
  switch (method) {
    case AggregationMethod::EventCount:
    case AggregationMethod::TimeSurface:
    case AggregationMethod::Tsltd:
      return 2;
    default:
      return 1;
  }
}

std::vector<EventStream> bin_events(const EventStream& stream, const BinSpec& spec) {
  spec.check();
  std::vector<EventStream> bins(spec.n);
  for (EventStream& b : bins) {
    b.width = stream.width;
    b.height = stream.height;
  }
  for (const Event& e : stream.events) {
    if (e.t < spec.t_start || e.t > spec.t_end) continue;
    bins[spec.bin_index(e.t)].events.push_back(e);
  }
  return bins;
}

Image8 aggregate_latest_polarity(const EventStream& bin, int width, int height) {
  Image8 out(width, height, 127);
  std::vector<std::uint64_t> latest(static_cast<std::size_t>(width) * height, 0);
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(width) * height, 0);
  for (const Event& e : bin.events) {
    const std::size_t idx = static_cast<std::size_t>(e.y) * width + e.x;
    if (!seen[idx] || e.t >= latest[idx]) {
      seen[idx] = 1;
      latest[idx] = e.t;
      // floor((p * 1 + 1) / 2 * 255): +1 -> 255, -1 -> 0.
      out.pixels[idx] = e.p > 0 ? 255 : 0;
    }
  }
  return out;
}

namespace {

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

std::vector<Image8> event_count_frames(const EventStream& bin, int width, int height) {
  std::vector<std::int64_t> pos(static_cast<std::size_t>(width) * height, 0);
  std::vector<std::int64_t> neg(pos.size(), 0);
  for (const Event& e : bin.events) {
    const std::size_t idx = static_cast<std::size_t>(e.y) * width + e.x;
    (e.p > 0 ? pos : neg)[idx]++;
  }
  std::int64_t max_count = 0;
  for (std::size_t i = 0; i < pos.size(); ++i) max_count = std::max({max_count, pos[i], neg[i]});
  std::vector<Image8> out(2, Image8(width, height, 0));
  if (max_count == 0) return out;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    out[0].pixels[i] = quantize(255.0 * static_cast<double>(pos[i]) / max_count);
    out[1].pixels[i] = quantize(255.0 * static_cast<double>(neg[i]) / max_count);
  }
  return out;
}

std::vector<Image8> event_frame_frames(const EventStream& bin, int width, int height) {
  std::vector<std::int64_t> acc(static_cast<std::size_t>(width) * height, 0);
  for (const Event& e : bin.events) {
    acc[static_cast<std::size_t>(e.y) * width + e.x] += e.p;
  }
  std::int64_t max_abs = 0;
  for (std::int64_t v : acc) max_abs = std::max<std::int64_t>(max_abs, std::llabs(v));
  std::vector<Image8> out(1, Image8(width, height, 127));
  if (max_abs == 0) return out;
  for (std::size_t i = 0; i < acc.size(); ++i) {
    out[0].pixels[i] = quantize(127.0 + 128.0 * static_cast<double>(acc[i]) / max_abs);
  }
  return out;
}

std::vector<Image8> time_surface_frames(const EventStream& bin, int width, int height,
                                        double t_end, double tau) {
  std::vector<double> latest_pos(static_cast<std::size_t>(width) * height, -1.0);
  std::vector<double> latest_neg(latest_pos.size(), -1.0);
  for (const Event& e : bin.events) {
    const std::size_t idx = static_cast<std::size_t>(e.y) * width + e.x;
    auto& slot = e.p > 0 ? latest_pos[idx] : latest_neg[idx];
    slot = std::max(slot, static_cast<double>(e.t));
  }
  std::vector<Image8> out(2, Image8(width, height, 0));
  for (std::size_t i = 0; i < latest_pos.size(); ++i) {
    if (latest_pos[i] >= 0.0) {
      out[0].pixels[i] = quantize(255.0 * std::exp(-std::max(0.0, t_end - latest_pos[i]) / tau));
    }
    if (latest_neg[i] >= 0.0) {
      out[1].pixels[i] = quantize(255.0 * std::exp(-std::max(0.0, t_end - latest_neg[i]) / tau));
    }
  }
  return out;
}

std::vector<Image8> tsltd_frames(const EventStream& bin, int width, int height, double t_end,
                                 double span) {
  std::vector<double> latest_pos(static_cast<std::size_t>(width) * height, -1.0);
  std::vector<double> latest_neg(latest_pos.size(), -1.0);
  for (const Event& e : bin.events) {
    const std::size_t idx = static_cast<std::size_t>(e.y) * width + e.x;
    auto& slot = e.p > 0 ? latest_pos[idx] : latest_neg[idx];
    slot = std::max(slot, static_cast<double>(e.t));
  }
  std::vector<Image8> out(2, Image8(width, height, 0));
  for (std::size_t i = 0; i < latest_pos.size(); ++i) {
    if (latest_pos[i] >= 0.0) {
      const double decay = std::max(0.0, 1.0 - std::max(0.0, t_end - latest_pos[i]) / span);
      out[0].pixels[i] = quantize(255.0 * decay);
    }
    if (latest_neg[i] >= 0.0) {
      const double decay = std::max(0.0, 1.0 - std::max(0.0, t_end - latest_neg[i]) / span);
      out[1].pixels[i] = quantize(255.0 * decay);
    }
  }
  return out;
}

// Bilinear-in-time polarity splat over the full interval; emits one slice.
std::vector<Image8> zhu_voxel_frame(const EventStream& interval_events, const BinSpec& spec,
                                    int bin_index, int width, int height) {
  std::vector<double> acc(static_cast<std::size_t>(width) * height, 0.0);
  const double denom = static_cast<double>(spec.t_end - spec.t_start);
  double max_abs = 0.0;
  // Bin centers sit at normalized integer positions 0..n-1 (n=1: everything
  // lands on the single bin).
  for (const Event& e : interval_events.events) {
    if (e.t < spec.t_start || e.t > spec.t_end) continue;
    const double tn = spec.n == 1
                          ? 0.0
                          : (spec.n - 1) * static_cast<double>(e.t - spec.t_start) / denom;
    const double w = std::max(0.0, 1.0 - std::abs(tn - bin_index));
    if (w == 0.0) continue;
    acc[static_cast<std::size_t>(e.y) * width + e.x] += w * e.p;
  }
  for (double v : acc) max_abs = std::max(max_abs, std::abs(v));
  std::vector<Image8> out(1, Image8(width, height, 127));
  if (max_abs == 0.0) return out;
  for (std::size_t i = 0; i < acc.size(); ++i) {
    out[0].pixels[i] = quantize(127.0 + 128.0 * acc[i] / max_abs);
  }
  return out;
}

}  // namespace

std::vector<Image8> aggregate_baseline(const EventStream& bin, AggregationMethod method,
                                       const AggregationParams& params, int width, int height,
                                       double bin_t_start, double bin_t_end,
                                       const BinSpec* interval, int bin_index) {
  switch (method) {
    case AggregationMethod::LatestPolarity:
      return {aggregate_latest_polarity(bin, width, height)};
    case AggregationMethod::EventCount:
      return event_count_frames(bin, width, height);
    case AggregationMethod::EventFrame:
      return event_frame_frames(bin, width, height);
    case AggregationMethod::TimeSurface: {
      const double tau = params.tau > 0.0 ? params.tau : (bin_t_end - bin_t_start) / 3.0;
      return time_surface_frames(bin, width, height, bin_t_end, tau);
    }
    case AggregationMethod::Tsltd:
      return tsltd_frames(bin, width, height, bin_t_end, bin_t_end - bin_t_start);
    case AggregationMethod::ZhuVoxel: {
      if (interval == nullptr) throw ConfigError("zhu_voxel needs the full interval spec");
      return zhu_voxel_frame(bin, *interval, bin_index, width, height);
    }
  }
  throw ConfigError("unknown aggregation method");
}

AggregatedFrames aggregate_interframe(const EventStream& stream, std::uint64_t t_j,
                                      std::uint64_t t_j1, int n, AggregationMethod method,
                                      const AggregationParams& params) {
  BinSpec spec{t_j, t_j1, n};
  spec.check();

  AggregatedFrames out;
  out.width = stream.width;
  out.height = stream.height;
  out.bins = n;
  out.channels = channels_per_bin(method);
  out.method = method;
  out.spec = spec;

  if (method == AggregationMethod::ZhuVoxel) {
    // The bilinear kernel reaches across bin boundaries, so every slice sees
    // the whole interval.
    const EventStream window = slice(stream, t_j, t_j1, /*closed_end=*/true);
    for (int i = 0; i < n; ++i) {
      auto frames = aggregate_baseline(window, method, params, out.width, out.height,
                                       spec.bin_start(i), spec.bin_end(i), &spec, i);
      for (auto& f : frames) out.frames.push_back(std::move(f));
    }
    return out;
  }

  const std::vector<EventStream> bins = bin_events(stream, spec);
  for (int i = 0; i < n; ++i) {
    auto frames = aggregate_baseline(bins[i], method, params, out.width, out.height,
                                     spec.bin_start(i), spec.bin_end(i), &spec, i);
    for (auto& f : frames) out.frames.push_back(std::move(f));
  }
  return out;
}

}  // namespace fetrack
