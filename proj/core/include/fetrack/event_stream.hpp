#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fetrack/geometry.hpp"
#include "fetrack/image.hpp"

namespace fetrack {

/// One polarity impulse from the sensor. Timestamps are integer microseconds.
struct Event {
  std::uint64_t t = 0;  // microseconds
  std::uint16_t x = 0;  // column
  std::uint16_t y = 0;  // row
  std::int8_t p = 1;    // polarity, -1 or +1

  bool operator==(const Event& o) const = default;
};

/// Time-sorted event sequence with the sensor geometry it was captured on.
struct EventStream {
  int width = 0;
  int height = 0;
  std::vector<Event> events;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }
  bool operator==(const EventStream& o) const = default;
};

/// One conventional (APS) frame with its timestamp.
struct FrameRecord {
  int index = 0;
  std::uint64_t t = 0;  // microseconds
  Image8 image;

  bool operator==(const FrameRecord& o) const = default;
};

/// Per-frame annotation boxes keyed by frame index.
struct GroundTruth {
  std::map<int, BBox> boxes;

  bool has(int frame) const { return boxes.count(frame) != 0; }
  const BBox& at(int frame) const;
  bool operator==(const GroundTruth& o) const = default;
};

struct SequenceMeta {
  int width = 0;
  int height = 0;
  double fps = 0.0;
  std::string attribute;  // optional degraded-condition tag ("LL", "HDR", "FWB", ...)
};

struct Sequence {
  SequenceMeta meta;
  EventStream stream;
  std::vector<FrameRecord> frames;
  GroundTruth gt;
  std::string name;
};

/// Stream invariant violations found by validate().
struct ValidationIssue {
  enum class Kind { Unsorted, OutOfBounds, BadPolarity };
  Kind kind;
  std::size_t index;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  std::size_t unsorted = 0;
  std::size_t out_of_bounds = 0;
  std::size_t bad_polarity = 0;

  bool ok() const { return issues.empty(); }
};

/// Scan the stream for sortedness, bounds and polarity violations.
ValidationReport validate(const EventStream& stream);

/// Events with t in [t0, t1) — or [t0, t1] when closed_end. Requires a
/// time-sorted stream; order and geometry are preserved.
EventStream slice(const EventStream& stream, std::uint64_t t0, std::uint64_t t1,
                  bool closed_end = false);

/// Frame period in integer microseconds for a given frame rate.
std::uint64_t frame_period_us(double fps);

/// Load a sequence directory: meta.json, frames/%06d.pgm, events.evt or
/// events.csv, gt.txt. Events outside [T_first - period, T_last] are dropped.
Sequence load_sequence(const std::filesystem::path& dir);

enum class EventFileFormat { Evt, Csv };

/// Write a sequence in the on-disk layout load_sequence() reads. Round-trips
/// bit-exactly (gt floats are printed with max_digits10).
void write_sequence(const std::filesystem::path& dir, const Sequence& seq,
                    EventFileFormat format = EventFileFormat::Evt);

}  // namespace fetrack
