#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fetrack/errors.hpp"
#include "fetrack/event_stream.hpp"
#include "fetrack/rng.hpp"

using namespace fetrack;
namespace fs = std::filesystem;

namespace {

EventStream make_stream(int w, int h, std::vector<Event> events) {
  EventStream s;
  s.width = w;
  s.height = h;
  s.events = std::move(events);
  return s;
}

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("fetrack_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Sequence tiny_sequence() {
  Sequence seq;
  seq.meta.width = 8;
  seq.meta.height = 6;
  seq.meta.fps = 40.0;
  seq.name = "tiny";
  for (int i = 0; i < 2; ++i) {
    FrameRecord rec;
    rec.index = i;
    rec.t = static_cast<std::uint64_t>(i) * 25000;
    rec.image = Image8(8, 6, static_cast<std::uint8_t>(10 * (i + 1)));
    seq.frames.push_back(rec);
  }
  seq.stream = make_stream(8, 6, {{100, 1, 2, 1}, {5000, 3, 3, -1}, {24999, 7, 5, 1}});
  seq.gt.boxes[0] = BBox{1.0, 1.0, 3.0, 2.0};
  seq.gt.boxes[1] = BBox{1.5, 1.25, 3.0, 2.0};
  return seq;
}

}  // namespace

TEST_CASE("validate: sorted in-bounds stream yields empty report") {
  auto s = make_stream(10, 10, {{1, 0, 0, 1}, {2, 5, 5, -1}, {2, 5, 5, 1}});
  const auto report = validate(s);
  CHECK(report.ok());
}

TEST_CASE("validate: detects descending timestamps") {
  auto s = make_stream(10, 10, {{5, 0, 0, 1}, {3, 1, 1, 1}});
  const auto report = validate(s);
  CHECK(report.unsorted == 1);
  CHECK(report.issues.size() == 1);
  CHECK(report.issues[0].index == 1);
}

TEST_CASE("validate: violation count equals brute-force descent count") {
  Rng rng(7);
  std::vector<Event> events;
  for (int i = 0; i < 1000; ++i) {
    events.push_back({static_cast<std::uint64_t>(rng.uniform_int(0, 100000)),
                      static_cast<std::uint16_t>(rng.uniform_int(0, 9)),
                      static_cast<std::uint16_t>(rng.uniform_int(0, 9)), 1});
  }
  std::size_t descents = 0;
  for (std::size_t i = 1; i < events.size(); ++i) {
    if (events[i].t < events[i - 1].t) ++descents;
  }
  const auto report = validate(make_stream(10, 10, events));
  CHECK(report.unsorted == descents);
}

TEST_CASE("slice: half-open by default, closed on request") {
  auto s = make_stream(32, 32, {{0, 0, 0, 1}, {10, 1, 1, 1}, {20, 2, 2, -1}, {29, 3, 3, 1}});
  auto open = slice(s, 10, 20, false);
  REQUIRE(open.size() == 1);
  CHECK(open.events[0].t == 10);

  auto closed = slice(s, 0, 0, true);
  REQUIRE(closed.size() == 1);
  CHECK(closed.events[0].t == 0);

  CHECK_THROWS_AS(slice(s, 5, 4), RangeError);
}

TEST_CASE("slice: matches filter-by-predicate oracle on random streams") {
  Rng rng(21);
  std::vector<Event> events;
  std::uint64_t t = 0;
  for (int i = 0; i < 500; ++i) {
    t += static_cast<std::uint64_t>(rng.uniform_int(0, 40));
    events.push_back({t, static_cast<std::uint16_t>(rng.uniform_int(0, 15)),
                      static_cast<std::uint16_t>(rng.uniform_int(0, 15)),
                      rng.uniform() < 0.5 ? std::int8_t{1} : std::int8_t{-1}});
  }
  const auto s = make_stream(16, 16, events);
  for (int trial = 0; trial < 50; ++trial) {
    std::uint64_t a = static_cast<std::uint64_t>(rng.uniform_int(0, static_cast<std::int64_t>(t)));
    std::uint64_t b = static_cast<std::uint64_t>(rng.uniform_int(0, static_cast<std::int64_t>(t)));
    if (a > b) std::swap(a, b);
    const bool closed = rng.uniform() < 0.5;
    const auto got = slice(s, a, b, closed);
    std::vector<Event> expect;
    for (const Event& e : events) {
      if (e.t >= a && (closed ? e.t <= b : e.t < b)) expect.push_back(e);
    }
    CHECK(got.events == expect);
  }
}

TEST_CASE("slice is idempotent") {
  Rng rng(3);
  std::vector<Event> events;
  std::uint64_t t = 0;
  for (int i = 0; i < 200; ++i) {
    t += static_cast<std::uint64_t>(rng.uniform_int(1, 30));
    events.push_back({t, 0, 0, 1});
  }
  const auto s = make_stream(4, 4, events);
  const auto once = slice(s, 100, 2000, false);
  const auto twice = slice(once, 100, 2000, false);
  CHECK(once == twice);
}

TEST_CASE("write_sequence/load_sequence round-trips bit-exactly (evt and csv)") {
  const Sequence seq = tiny_sequence();
  for (auto format : {EventFileFormat::Evt, EventFileFormat::Csv}) {
    const auto dir =
        temp_dir(format == EventFileFormat::Evt ? "roundtrip_evt" : "roundtrip_csv");
    write_sequence(dir, seq, format);
    const Sequence loaded = load_sequence(dir);
    CHECK(loaded.meta.width == seq.meta.width);
    CHECK(loaded.meta.height == seq.meta.height);
    CHECK(loaded.meta.fps == seq.meta.fps);
    CHECK(loaded.stream == seq.stream);
    CHECK(loaded.frames == seq.frames);
    CHECK(loaded.gt == seq.gt);
    fs::remove_all(dir);
  }
}

TEST_CASE("load_sequence: two frames and in-range events") {
  const auto dir = temp_dir("basic");
  write_sequence(dir, tiny_sequence());
  const Sequence loaded = load_sequence(dir);
  CHECK(loaded.frames.size() == 2);
  CHECK(loaded.frames[1].t == 25000);
  CHECK(loaded.stream.size() == 3);
  fs::remove_all(dir);
}

TEST_CASE("load_sequence: zero polarity reports the offending line") {
  const auto dir = temp_dir("badpol");
  Sequence seq = tiny_sequence();
  write_sequence(dir, seq, EventFileFormat::Csv);
  {
    // Rewrite events.csv with p=0 on line 7 (header + 6 records).
    std::ofstream out(dir / "events.csv");
    out << "t_us,x,y,p\n";
    for (int i = 0; i < 5; ++i) out << i * 10 << ",1,1,1\n";
    out << "60,1,1,0\n";
  }
  try {
    load_sequence(dir);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 7);
  }
  fs::remove_all(dir);
}

TEST_CASE("load_sequence: missing files raise NotFound") {
  const auto dir = temp_dir("missing");
  CHECK_THROWS_AS(load_sequence(dir / "nope"), NotFoundError);
  fs::remove_all(dir);
}

TEST_CASE("load_sequence: geometry mismatch raises GeometryError") {
  const auto dir = temp_dir("geom");
  Sequence seq = tiny_sequence();
  write_sequence(dir, seq);
  {
    std::ofstream out(dir / "meta.json");
    out << "{\"width\": 9, \"height\": 6, \"fps\": 40.0}\n";
  }
  CHECK_THROWS_AS(load_sequence(dir), GeometryError);
  fs::remove_all(dir);
}

TEST_CASE("load_sequence drops events outside the frame window") {
  const auto dir = temp_dir("window");
  Sequence seq = tiny_sequence();
  seq.stream.events.push_back({99000, 0, 0, 1});  // past the last frame at 25000
  write_sequence(dir, seq);
  const Sequence loaded = load_sequence(dir);
  CHECK(loaded.stream.size() == 3);
  fs::remove_all(dir);
}
