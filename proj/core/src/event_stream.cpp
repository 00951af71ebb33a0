#include "fetrack/event_stream.hpp"

#include <algorithm>
#include <charconv>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "fetrack/errors.hpp"

namespace fetrack {

namespace fs = std::filesystem;
using nlohmann::json;

const BBox& GroundTruth::at(int frame) const {
  auto it = boxes.find(frame);
  if (it == boxes.end()) throw DataError("no ground truth for frame " + std::to_string(frame));
  return it->second;
}

ValidationReport validate(const EventStream& stream) {
  ValidationReport report;
  auto push = [&](ValidationIssue::Kind kind, std::size_t index, std::string msg) {
    if (report.issues.size() < 64) {
      report.issues.push_back({kind, index, std::move(msg)});
    } else if (report.issues.size() == 64) {
      report.issues.push_back({kind, index, "further issues suppressed"});
    }
  };
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    const Event& e = stream.events[i];
    if (i > 0 && e.t < stream.events[i - 1].t) {
      ++report.unsorted;
      push(ValidationIssue::Kind::Unsorted, i,
           "t decreases at index " + std::to_string(i));
    }
    if (e.x >= stream.width || e.y >= stream.height) {
      ++report.out_of_bounds;
      push(ValidationIssue::Kind::OutOfBounds, i,
           "event " + std::to_string(i) + " outside sensor bounds");
    }
    if (e.p != 1 && e.p != -1) {
      ++report.bad_polarity;
      push(ValidationIssue::Kind::BadPolarity, i,
           "event " + std::to_string(i) + " polarity " + std::to_string(e.p));
    }
  }
  // Keep issues only when something is actually wrong.
  if (report.unsorted + report.out_of_bounds + report.bad_polarity == 0) report.issues.clear();
  return report;
}

EventStream slice(const EventStream& stream, std::uint64_t t0, std::uint64_t t1, bool closed_end) {
  if (t0 > t1) throw RangeError("slice: t0 > t1");
  EventStream out;
  out.width = stream.width;
  out.height = stream.height;
  auto lo = std::lower_bound(stream.events.begin(), stream.events.end(), t0,
                             [](const Event& e, std::uint64_t t) { return e.t < t; });
  auto hi = closed_end
                ? std::upper_bound(lo, stream.events.end(), t1,
                                   [](std::uint64_t t, const Event& e) { return t < e.t; })
                : std::lower_bound(lo, stream.events.end(), t1,
                                   [](const Event& e, std::uint64_t t) { return e.t < t; });
  out.events.assign(lo, hi);
  return out;
}

std::uint64_t frame_period_us(double fps) {
  if (fps <= 0.0) throw ConfigError("fps must be positive");
  return static_cast<std::uint64_t>(std::llround(1e6 / fps));
}

namespace {

constexpr char kEvtMagic[4] = {'F', 'E', '0', '1'};

void put_u16(std::ostream& out, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::vector<Event> read_events_evt(const fs::path& path, int width, int height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kEvtMagic, 4) != 0) {
    throw ParseError("bad magic in " + path.string());
  }
  unsigned char head[8];
  in.read(reinterpret_cast<char*>(head), 8);
  if (in.gcount() != 8) throw ParseError("truncated header in " + path.string());
  const std::uint32_t w = get_u32(head);
  const std::uint32_t h = get_u32(head + 4);
  if (static_cast<int>(w) != width || static_cast<int>(h) != height) {
    throw GeometryError("events.evt geometry " + std::to_string(w) + "x" + std::to_string(h) +
                        " does not match meta " + std::to_string(width) + "x" +
                        std::to_string(height));
  }
  std::vector<Event> events;
  unsigned char rec[13];
  while (in.read(reinterpret_cast<char*>(rec), 13)) {
    Event e;
    e.t = get_u64(rec);
    e.x = get_u16(rec + 8);
    e.y = get_u16(rec + 10);
    e.p = static_cast<std::int8_t>(rec[12]);
    events.push_back(e);
  }
  if (in.gcount() != 0) throw ParseError("truncated record at end of " + path.string());
  return events;
}

std::vector<Event> read_events_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path.string());
  std::string line;
  long line_no = 0;
  if (!std::getline(in, line)) throw ParseError("empty events file " + path.string(), 1);
  ++line_no;
  if (line.size() && line.back() == '\r') line.pop_back();
  if (line != "t_us,x,y,p") throw ParseError("bad header in " + path.string(), line_no);
  std::vector<Event> events;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.size() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    long long t = 0, x = 0, y = 0, p = 0;
    if (std::sscanf(line.c_str(), "%lld,%lld,%lld,%lld", &t, &x, &y, &p) != 4) {
      throw ParseError("malformed event in " + path.string(), line_no);
    }
    if (t < 0 || x < 0 || y < 0 || x > 0xffff || y > 0xffff) {
      throw ParseError("event field out of range in " + path.string(), line_no);
    }
    if (p != 1 && p != -1) {
      throw ParseError("polarity must be -1 or 1 in " + path.string(), line_no);
    }
    events.push_back({static_cast<std::uint64_t>(t), static_cast<std::uint16_t>(x),
                      static_cast<std::uint16_t>(y), static_cast<std::int8_t>(p)});
  }
  return events;
}

GroundTruth read_gt(const fs::path& path, int frame_count) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path.string());
  GroundTruth gt;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.size() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    long long idx = 0;
    double x = 0.0, y = 0.0, w = 0.0, h = 0.0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf", &idx, &x, &y, &w, &h) != 5) {
      throw ParseError("malformed ground-truth line in " + path.string(), line_no);
    }
    if (idx < 0 || idx >= frame_count) {
      throw ParseError("ground truth references missing frame " + std::to_string(idx) + " in " +
                           path.string(),
                       line_no);
    }
    if (!(w > 0.0) || !(h > 0.0)) {
      throw ParseError("ground-truth box must have positive extent in " + path.string(), line_no);
    }
    gt.boxes[static_cast<int>(idx)] = BBox{x, y, w, h};
  }
  return gt;
}

}  // namespace

Sequence load_sequence(const fs::path& dir) {
  Sequence seq;
  seq.name = dir.filename().string();

  const fs::path meta_path = dir / "meta.json";
  if (!fs::exists(meta_path)) throw NotFoundError("missing " + meta_path.string());
  json meta;
  try {
    std::ifstream in(meta_path);
    in >> meta;
  } catch (const std::exception& e) {
    throw ParseError("bad meta.json in " + dir.string() + ": " + e.what());
  }
  if (!meta.contains("width") || !meta.contains("height") || !meta.contains("fps")) {
    throw ParseError("meta.json must contain width, height, fps (" + dir.string() + ")");
  }
  seq.meta.width = meta["width"].get<int>();
  seq.meta.height = meta["height"].get<int>();
  seq.meta.fps = meta["fps"].get<double>();
  if (meta.contains("attribute")) seq.meta.attribute = meta["attribute"].get<std::string>();
  if (seq.meta.width <= 0 || seq.meta.height <= 0) {
    throw GeometryError("non-positive geometry in " + meta_path.string());
  }

  const fs::path frames_dir = dir / "frames";
  if (!fs::exists(frames_dir)) throw NotFoundError("missing " + frames_dir.string());
  const std::uint64_t period = frame_period_us(seq.meta.fps);
  for (int i = 0;; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.pgm", i);
    const fs::path frame_path = frames_dir / name;
    if (!fs::exists(frame_path)) {
      if (i == 0) throw NotFoundError("no frames in " + frames_dir.string());
      break;
    }
    FrameRecord rec;
    rec.index = i;
    rec.t = static_cast<std::uint64_t>(i) * period;
    rec.image = read_pgm(frame_path);
    if (rec.image.width != seq.meta.width || rec.image.height != seq.meta.height) {
      throw GeometryError("frame " + frame_path.string() + " geometry mismatch");
    }
    seq.frames.push_back(std::move(rec));
  }

  seq.stream.width = seq.meta.width;
  seq.stream.height = seq.meta.height;
  const fs::path evt_path = dir / "events.evt";
  const fs::path csv_path = dir / "events.csv";
  if (fs::exists(evt_path)) {
    seq.stream.events = read_events_evt(evt_path, seq.meta.width, seq.meta.height);
  } else if (fs::exists(csv_path)) {
    seq.stream.events = read_events_csv(csv_path);
  } else {
    throw NotFoundError("missing events.evt / events.csv in " + dir.string());
  }

  const ValidationReport report = validate(seq.stream);
  if (!report.ok()) {
    throw ParseError("invalid event stream in " + dir.string() + ": " +
                     report.issues.front().message);
  }

  // Keep events in [T_first - period, T_last]; pre-first-frame and trailing
  // events carry no usable annotation window.
  const std::uint64_t t_first = seq.frames.front().t;
  const std::uint64_t t_last = seq.frames.back().t;
  const std::uint64_t lo = t_first > period ? t_first - period : 0;
  seq.stream = slice(seq.stream, lo, t_last, /*closed_end=*/true);

  seq.gt = read_gt(dir / "gt.txt", static_cast<int>(seq.frames.size()));
  return seq;
}

void write_sequence(const fs::path& dir, const Sequence& seq, EventFileFormat format) {
  fs::create_directories(dir / "frames");

  {
    json meta;
    meta["width"] = seq.meta.width;
    meta["height"] = seq.meta.height;
    meta["fps"] = seq.meta.fps;
    if (!seq.meta.attribute.empty()) meta["attribute"] = seq.meta.attribute;
    std::ofstream out(dir / "meta.json");
    if (!out) throw IoError("cannot write meta.json in " + dir.string());
    out << meta.dump(2) << "\n";
  }

  for (const FrameRecord& frame : seq.frames) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.pgm", frame.index);
    write_pgm(dir / "frames" / name, frame.image);
  }

  if (format == EventFileFormat::Evt) {
    std::ofstream out(dir / "events.evt", std::ios::binary);
    if (!out) throw IoError("cannot write events.evt in " + dir.string());
    out.write(kEvtMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(seq.meta.width));
    put_u32(out, static_cast<std::uint32_t>(seq.meta.height));
    for (const Event& e : seq.stream.events) {
      put_u64(out, e.t);
      put_u16(out, e.x);
      put_u16(out, e.y);
      out.put(static_cast<char>(e.p));
    }
  } else {
    std::ofstream out(dir / "events.csv");
    if (!out) throw IoError("cannot write events.csv in " + dir.string());
    out << "t_us,x,y,p\n";
    for (const Event& e : seq.stream.events) {
      out << e.t << "," << e.x << "," << e.y << "," << static_cast<int>(e.p) << "\n";
    }
  }

  {
    std::ofstream out(dir / "gt.txt");
    if (!out) throw IoError("cannot write gt.txt in " + dir.string());
    char buf[160];
    for (const auto& [idx, box] : seq.gt.boxes) {
      std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", idx, box.x, box.y, box.w,
                    box.h);
      out << buf;
    }
  }
}

}  // namespace fetrack
