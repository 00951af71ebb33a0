#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fetrack/event_stream.hpp"

namespace fetrack {

/// Temporal discretization of one inter-frame interval into n equal bins.
struct BinSpec {
  std::uint64_t t_start = 0;
  std::uint64_t t_end = 0;
  int n = 1;

  double bin_width() const { return static_cast<double>(t_end - t_start) / n; }
  void check() const;

  /// Bin index of an event: floor((t - t_start) / B), clamped to [0, n-1].
  int bin_index(std::uint64_t t) const;
  double bin_start(int i) const { return static_cast<double>(t_start) + i * bin_width(); }
  double bin_end(int i) const { return static_cast<double>(t_start) + (i + 1) * bin_width(); }
};

enum class AggregationMethod {
  LatestPolarity,  // per-pixel polarity of the latest event, scaled to {0,127,255}
  EventCount,      // per-polarity event counts rescaled to [0,255]
  EventFrame,      // per-pixel polarity sum, affine-mapped with 0 -> 127
  TimeSurface,     // per-polarity exponential decay from the bin end
  Tsltd,           // per-polarity linear time decay over the interval
  ZhuVoxel,        // bilinear temporal accumulation of polarity across bins
};

AggregationMethod aggregation_method_from_string(const std::string& name);
std::string to_string(AggregationMethod method);

/// Channels each bin produces under a method (1 or 2).
int channels_per_bin(AggregationMethod method);

struct AggregationParams {
  double tau = 0.0;  // TimeSurface decay; <= 0 means (t_end - t_start) / 3
};

/// n per-bin frame groups; `frames` holds n * channels images in bin-major
/// order. 8-bit storage; consumers divide by 255.
struct AggregatedFrames {
  int width = 0;
  int height = 0;
  int bins = 0;
  int channels = 0;  // per bin
  AggregationMethod method = AggregationMethod::LatestPolarity;
  BinSpec spec;
  std::vector<Image8> frames;

  const Image8& frame(int bin, int channel = 0) const {
    return frames[static_cast<std::size_t>(bin) * channels + channel];
  }
};

/// Split a stream's events in [t_start, t_end] into n sub-streams by bin
/// index. Events outside the interval are excluded.
std::vector<EventStream> bin_events(const EventStream& stream, const BinSpec& spec);

/// Latest-timestamp polarity image: no event -> 127, latest p=+1 -> 255,
/// latest p=-1 -> 0. Among equal timestamps at a pixel, later stream order wins.
Image8 aggregate_latest_polarity(const EventStream& bin, int width, int height);

/// One of the five baseline representations for a single bin. For ZhuVoxel the
/// `bin` argument must contain the full interval's events; bin_index selects
/// the output slice (the bilinear kernel spans neighboring bins).
std::vector<Image8> aggregate_baseline(const EventStream& bin, AggregationMethod method,
                                       const AggregationParams& params, int width, int height,
                                       double bin_t_start, double bin_t_end,
                                       const BinSpec* interval = nullptr, int bin_index = 0);

/// bin_events + per-bin aggregation over [t_j, t_j1].
AggregatedFrames aggregate_interframe(const EventStream& stream, std::uint64_t t_j,
                                      std::uint64_t t_j1, int n,
                                      AggregationMethod method = AggregationMethod::LatestPolarity,
                                      const AggregationParams& params = {});

}  // namespace fetrack
