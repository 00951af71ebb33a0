#include "fetrack/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "fetrack/errors.hpp"
#include "fetrack/rng.hpp"

namespace fetrack {

using nlohmann::json;
namespace fs = std::filesystem;

DegradedMode degraded_mode_from_string(const std::string& name) {
  if (name == "none" || name.empty()) return DegradedMode::None;
  if (name == "LL") return DegradedMode::LowLight;
  if (name == "HDR") return DegradedMode::Hdr;
  if (name == "FWB") return DegradedMode::Fwb;
  throw ConfigError("unknown degraded mode: " + name);
}

std::string to_string(DegradedMode mode) {
  switch (mode) {
    case DegradedMode::None: return "none";
    case DegradedMode::LowLight: return "LL";
    case DegradedMode::Hdr: return "HDR";
    case DegradedMode::Fwb: return "FWB";
  }
  throw ConfigError("unknown degraded mode");
}

void SceneObject::position(double t_s, double& x, double& y) const {
  if (!waypoints.empty()) {
    if (t_s <= waypoints.front().t) {
      x = waypoints.front().x;
      y = waypoints.front().y;
      return;
    }
    if (t_s >= waypoints.back().t) {
      x = waypoints.back().x;
      y = waypoints.back().y;
      return;
    }
    for (std::size_t i = 1; i < waypoints.size(); ++i) {
      if (t_s <= waypoints[i].t) {
        const Waypoint& a = waypoints[i - 1];
        const Waypoint& b = waypoints[i];
        const double f = (t_s - a.t) / (b.t - a.t);
        x = a.x + f * (b.x - a.x);
        y = a.y + f * (b.y - a.y);
        return;
      }
    }
    x = waypoints.back().x;
    y = waypoints.back().y;
    return;
  }
  const double omega = 2.0 * M_PI / sin_period;
  x = sin_center_x + sin_amp_x * std::sin(omega * t_s + sin_phase_x);
  y = sin_center_y + sin_amp_y * std::sin(omega * t_s + sin_phase_y);
}

void SceneSpec::check() const {
  if (width <= 0 || height <= 0) throw ConfigError("scene geometry must be positive");
  if (fps <= 0.0) throw ConfigError("fps must be positive");
  if (duration <= 0.0) throw ConfigError("duration must be positive");
  if (substeps < 1) throw ConfigError("substeps must be >= 1");
  if (!(contrast_threshold > 0.0)) throw ConfigError("contrast threshold must be positive");
  if (noise_rate < 0.0) throw ConfigError("noise rate must be non-negative");
  if (objects.empty()) throw ConfigError("scene needs at least one object");
  const int frames = static_cast<int>(std::llround(duration * fps)) + 1;
  for (const SceneObject& obj : objects) {
    if (obj.width <= 0.0 || obj.height <= 0.0) throw ConfigError("object extent must be positive");
    if (obj.intensity < 0.0 || obj.intensity > 1.0) {
      throw ConfigError("object intensity must be in [0,1]");
    }
    for (int f = 0; f < frames; ++f) {
      double x, y;
      obj.position(f / fps, x, y);
      const double x0 = x - 0.5 * obj.width;
      const double y0 = y - 0.5 * obj.height;
      if (x0 + obj.width <= 0.0 || y0 + obj.height <= 0.0 || x0 >= width || y0 >= height) {
        throw ConfigError("object leaves the frame at t=" + std::to_string(f / fps));
      }
    }
  }
}

namespace {

constexpr double kLogEps = 1e-3;

double checker_color(const SceneObject& obj, double lx, double ly) {
  const double cell = std::max(2.0, std::min(obj.width, obj.height) / 4.0);
  const long parity = static_cast<long>(std::floor(lx / cell)) +
                      static_cast<long>(std::floor(ly / cell));
  const double alt = obj.intensity >= 0.5 ? obj.intensity - 0.3 : obj.intensity + 0.3;
  return (parity & 1) == 0 ? obj.intensity : alt;
}

// Latent intensity at pixel (px, py) center, antialiased object coverage.
double latent_at(const SceneSpec& spec, double t_s, int px, int py) {
  double intensity = spec.background;
  const double cx_px = px + 0.5;
  const double cy_px = py + 0.5;
  for (const SceneObject& obj : spec.objects) {
    double ox, oy;
    obj.position(t_s, ox, oy);
    const double hw = 0.5 * obj.width;
    const double hh = 0.5 * obj.height;
    double cov = 0.0;
    if (obj.shape == ObjectShape::Rect) {
      const double overlap_x =
          std::min<double>(px + 1.0, ox + hw) - std::max<double>(px, ox - hw);
      const double overlap_y =
          std::min<double>(py + 1.0, oy + hh) - std::max<double>(py, oy - hh);
      cov = std::clamp(overlap_x, 0.0, 1.0) * std::clamp(overlap_y, 0.0, 1.0);
    } else {
      const double r = 0.5 * std::min(obj.width, obj.height);
      const double dist = std::hypot(cx_px - ox, cy_px - oy);
      cov = std::clamp(0.5 + (r - dist), 0.0, 1.0);
    }
    if (cov <= 0.0) continue;
    double color = obj.intensity;
    if (obj.texture == ObjectTexture::Checker) {
      color = checker_color(obj, cx_px - (ox - hw), cy_px - (oy - hh));
    }
    intensity = intensity * (1.0 - cov) + color * cov;
  }
  return std::clamp(intensity, 0.0, 1.0);
}

struct DirtyRect {
  int x0, y0, x1, y1;  // half-open
  bool empty() const { return x0 >= x1 || y0 >= y1; }
};

DirtyRect dirty_region(const SceneSpec& spec, double t0_s, double t1_s) {
  double min_x = 1e30, min_y = 1e30, max_x = -1e30, max_y = -1e30;
  for (const SceneObject& obj : spec.objects) {
    for (double t : {t0_s, t1_s}) {
      double x, y;
      obj.position(t, x, y);
      min_x = std::min(min_x, x - 0.5 * obj.width);
      max_x = std::max(max_x, x + 0.5 * obj.width);
      min_y = std::min(min_y, y - 0.5 * obj.height);
      max_y = std::max(max_y, y + 0.5 * obj.height);
    }
  }
  const int margin = 4;
  DirtyRect r;
  r.x0 = std::clamp(static_cast<int>(std::floor(min_x)) - margin, 0, spec.width);
  r.x1 = std::clamp(static_cast<int>(std::ceil(max_x)) + margin, 0, spec.width);
  r.y0 = std::clamp(static_cast<int>(std::floor(min_y)) - margin, 0, spec.height);
  r.y1 = std::clamp(static_cast<int>(std::ceil(max_y)) + margin, 0, spec.height);
  return r;
}

Image8 quantize_frame(const SceneSpec& spec, const std::vector<double>& latent, Rng& noise_rng) {
  Image8 img(spec.width, spec.height);
  for (std::size_t i = 0; i < latent.size(); ++i) {
    double v = latent[i];
    switch (spec.mode) {
      case DegradedMode::LowLight:
        v = v * 0.15 + noise_rng.normal(0.0, 0.02);
        break;
      case DegradedMode::Hdr:
        // Overexposure: highlights clip at 60% of the latent range.
        v = std::min(v / 0.6, 1.0);
        break;
      default:
        break;
    }
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
  }
  return img;
}

}  // namespace

SimOutput simulate(const SceneSpec& spec) {
  spec.check();
  Rng rng(spec.seed ^ 0x73696dULL);
  Rng noise_rng = rng.fork(1);
  Rng frame_rng = rng.fork(2);

  const int frames = static_cast<int>(std::llround(spec.duration * spec.fps)) + 1;
  const std::uint64_t period = frame_period_us(spec.fps);
  const std::size_t npix = static_cast<std::size_t>(spec.width) * spec.height;

  SimOutput out;
  Sequence& seq = out.sequence;
  seq.meta.width = spec.width;
  seq.meta.height = spec.height;
  seq.meta.fps = spec.fps;
  seq.meta.attribute = spec.attribute();
  seq.stream.width = spec.width;
  seq.stream.height = spec.height;

  std::vector<double> latent(npix), latent_prev(npix);
  std::vector<double> log_ref(npix), log_prev(npix);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const double v = latent_at(spec, 0.0, x, y);
      latent[static_cast<std::size_t>(y) * spec.width + x] = v;
      log_ref[static_cast<std::size_t>(y) * spec.width + x] = std::log(v + kLogEps);
    }
  }
  log_prev = log_ref;
  if (spec.keep_latents) out.latents.push_back(latent);

  {
    FrameRecord rec;
    rec.index = 0;
    rec.t = 0;
    rec.image = quantize_frame(spec, latent, frame_rng);
    seq.frames.push_back(std::move(rec));
  }

  std::vector<Event> events;
  std::vector<double> blur_acc(npix, 0.0);

  for (int j = 1; j < frames; ++j) {
    std::fill(blur_acc.begin(), blur_acc.end(), 0.0);
    const double frame_t0 = (j - 1) * static_cast<double>(period);
    for (int s = 1; s <= spec.substeps; ++s) {
      const double t_prev_us = frame_t0 + (s - 1) * static_cast<double>(period) / spec.substeps;
      const double t_cur_us = frame_t0 + s * static_cast<double>(period) / spec.substeps;
      const double t_prev_s = t_prev_us * 1e-6;
      const double t_cur_s = t_cur_us * 1e-6;

      latent_prev.swap(latent);
      const DirtyRect dirty = dirty_region(spec, t_prev_s, t_cur_s);
      // Outside the dirty window the scene is static: reuse the old latent.
      std::copy(latent_prev.begin(), latent_prev.end(), latent.begin());
      for (int y = dirty.y0; y < dirty.y1; ++y) {
        for (int x = dirty.x0; x < dirty.x1; ++x) {
          const std::size_t idx = static_cast<std::size_t>(y) * spec.width + x;
          latent[idx] = latent_at(spec, t_cur_s, x, y);
          const double log_cur = std::log(latent[idx] + kLogEps);
          const double delta = log_cur - log_ref[idx];
          const double c = spec.contrast_threshold;
          if (std::abs(delta) >= c) {
            const auto count = static_cast<int>(std::floor(std::abs(delta) / c));
            const double sign = delta > 0.0 ? 1.0 : -1.0;
            const double lp = log_prev[idx];
            const double denom = log_cur - lp;
            for (int k = 1; k <= count; ++k) {
              const double threshold = log_ref[idx] + sign * c * k;
              double frac = denom != 0.0 ? (threshold - lp) / denom : 1.0;
              frac = std::clamp(frac, 0.0, 1.0);
              const double t_evt = t_prev_us + frac * (t_cur_us - t_prev_us);
              events.push_back({static_cast<std::uint64_t>(std::llround(t_evt)),
                                static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                                static_cast<std::int8_t>(sign > 0 ? 1 : -1)});
            }
            log_ref[idx] += sign * c * count;
          }
          log_prev[idx] = log_cur;
        }
      }

      if (spec.noise_rate > 0.0) {
        const double mean = spec.noise_rate * static_cast<double>(npix) * (t_cur_s - t_prev_s);
        const std::int64_t count = noise_rng.poisson(mean);
        for (std::int64_t k = 0; k < count; ++k) {
          const auto x = static_cast<std::uint16_t>(noise_rng.uniform_int(0, spec.width - 1));
          const auto y = static_cast<std::uint16_t>(noise_rng.uniform_int(0, spec.height - 1));
          const double t_evt = t_prev_us + noise_rng.uniform() * (t_cur_us - t_prev_us);
          events.push_back({static_cast<std::uint64_t>(std::llround(t_evt)), x, y,
                            noise_rng.uniform() < 0.5 ? std::int8_t{1} : std::int8_t{-1}});
        }
      }

      for (std::size_t i = 0; i < npix; ++i) blur_acc[i] += latent[i];
      if (spec.keep_latents) out.latents.push_back(latent);
    }

    FrameRecord rec;
    rec.index = j;
    rec.t = static_cast<std::uint64_t>(j) * period;
    if (spec.mode == DegradedMode::Fwb) {
      std::vector<double> blurred(npix);
      for (std::size_t i = 0; i < npix; ++i) blurred[i] = blur_acc[i] / spec.substeps;
      rec.image = quantize_frame(spec, blurred, frame_rng);
    } else {
      rec.image = quantize_frame(spec, latent, frame_rng);
    }
    seq.frames.push_back(std::move(rec));
  }

  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  seq.stream.events = std::move(events);

  // Ground truth: the first object is the target.
  const SceneObject& target = spec.objects.front();
  for (int j = 0; j < frames; ++j) {
    double x, y;
    target.position(j / spec.fps, x, y);
    seq.gt.boxes[j] = BBox{x - 0.5 * target.width, y - 0.5 * target.height, target.width,
                           target.height};
  }
  return out;
}

std::vector<std::string> make_dataset(const std::vector<SceneSpec>& specs, const fs::path& out_dir,
                                      EventFileFormat format) {
  fs::create_directories(out_dir);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    char name[16];
    std::snprintf(name, sizeof(name), "seq%03zu", i);
    SimOutput sim = simulate(specs[i]);
    sim.sequence.name = name;
    write_sequence(out_dir / name, sim.sequence, format);
    names.emplace_back(name);
  }
  return names;
}

// ---- JSON -------------------------------------------------------------------

namespace {

json object_to_json(const SceneObject& o) {
  json j;
  j["shape"] = o.shape == ObjectShape::Rect ? "rect" : "disk";
  j["texture"] = o.texture == ObjectTexture::Flat ? "flat" : "checker";
  j["intensity"] = o.intensity;
  j["width"] = o.width;
  j["height"] = o.height;
  if (!o.waypoints.empty()) {
    json w = json::array();
    for (const Waypoint& p : o.waypoints) w.push_back({{"t", p.t}, {"x", p.x}, {"y", p.y}});
    j["waypoints"] = w;
  } else {
    j["sinusoid"] = {{"cx", o.sin_center_x}, {"cy", o.sin_center_y}, {"ax", o.sin_amp_x},
                     {"ay", o.sin_amp_y},    {"period", o.sin_period}, {"phase_x", o.sin_phase_x},
                     {"phase_y", o.sin_phase_y}};
  }
  return j;
}

SceneObject object_from_json(const json& j) {
  SceneObject o;
  if (j.contains("shape")) {
    const auto s = j["shape"].get<std::string>();
    if (s == "rect") {
      o.shape = ObjectShape::Rect;
    } else if (s == "disk") {
      o.shape = ObjectShape::Disk;
    } else {
      throw ConfigError("unknown object shape: " + s);
    }
  }
  if (j.contains("texture")) {
    const auto s = j["texture"].get<std::string>();
    if (s == "flat") {
      o.texture = ObjectTexture::Flat;
    } else if (s == "checker") {
      o.texture = ObjectTexture::Checker;
    } else {
      throw ConfigError("unknown object texture: " + s);
    }
  }
  if (j.contains("intensity")) o.intensity = j["intensity"].get<double>();
  if (j.contains("width")) o.width = j["width"].get<double>();
  if (j.contains("height")) o.height = j["height"].get<double>();
  if (j.contains("waypoints")) {
    for (const json& p : j["waypoints"]) {
      o.waypoints.push_back(
          {p.at("t").get<double>(), p.at("x").get<double>(), p.at("y").get<double>()});
    }
  } else if (j.contains("sinusoid")) {
    const json& s = j["sinusoid"];
    o.sin_center_x = s.value("cx", 0.0);
    o.sin_center_y = s.value("cy", 0.0);
    o.sin_amp_x = s.value("ax", 0.0);
    o.sin_amp_y = s.value("ay", 0.0);
    o.sin_period = s.value("period", 1.0);
    o.sin_phase_x = s.value("phase_x", 0.0);
    o.sin_phase_y = s.value("phase_y", M_PI / 2.0);
  } else {
    throw ConfigError("object needs waypoints or a sinusoid");
  }
  return o;
}

json spec_to_json_obj(const SceneSpec& s) {
  json j;
  j["width"] = s.width;
  j["height"] = s.height;
  j["fps"] = s.fps;
  j["duration"] = s.duration;
  j["substeps"] = s.substeps;
  j["background"] = s.background;
  j["contrast_threshold"] = s.contrast_threshold;
  j["mode"] = to_string(s.mode);
  j["noise_rate"] = s.noise_rate;
  j["seed"] = s.seed;
  json objs = json::array();
  for (const SceneObject& o : s.objects) objs.push_back(object_to_json(o));
  j["objects"] = objs;
  return j;
}

SceneSpec spec_from_json_obj(const json& j) {
  SceneSpec s;
  if (j.contains("width")) s.width = j["width"].get<int>();
  if (j.contains("height")) s.height = j["height"].get<int>();
  if (j.contains("fps")) s.fps = j["fps"].get<double>();
  if (j.contains("duration")) s.duration = j["duration"].get<double>();
  if (j.contains("substeps")) s.substeps = j["substeps"].get<int>();
  if (j.contains("background")) s.background = j["background"].get<double>();
  if (j.contains("contrast_threshold")) {
    s.contrast_threshold = j["contrast_threshold"].get<double>();
  }
  if (j.contains("mode")) s.mode = degraded_mode_from_string(j["mode"].get<std::string>());
  if (j.contains("noise_rate")) s.noise_rate = j["noise_rate"].get<double>();
  if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("objects")) {
    for (const json& o : j["objects"]) s.objects.push_back(object_from_json(o));
  }
  s.check();
  return s;
}

}  // namespace

std::string SceneSpec::to_json() const { return spec_to_json_obj(*this).dump(2); }

SceneSpec SceneSpec::from_json_text(const std::string& text) {
  try {
    return spec_from_json_obj(json::parse(text));
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad scene spec: ") + e.what());
  }
}

std::vector<SceneSpec> SceneSpec::list_from_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open scene spec " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("bad scene spec " + path.string() + ": " + e.what());
  }
  std::vector<SceneSpec> specs;
  try {
    if (j.is_array()) {
      for (const json& item : j) specs.push_back(spec_from_json_obj(item));
    } else {
      specs.push_back(spec_from_json_obj(j));
    }
  } catch (const json::exception& e) {
    throw ParseError("bad scene spec " + path.string() + ": " + e.what());
  }
  return specs;
}

std::vector<SceneSpec> default_desk_specs(std::uint64_t seed) {
  std::vector<SceneSpec> specs;
  auto base = [&](std::uint64_t salt) {
    SceneSpec s;
    s.width = 128;
    s.height = 96;
    s.fps = 40.0;
    s.duration = 1.0;
    s.seed = seed * 1000 + salt;
    return s;
  };
  auto linear_object = [](ObjectShape shape, ObjectTexture tex, double intensity, double w,
                          double h, double x0, double y0, double x1, double y1, double duration) {
    SceneObject o;
    o.shape = shape;
    o.texture = tex;
    o.intensity = intensity;
    o.width = w;
    o.height = h;
    o.waypoints = {{0.0, x0, y0}, {duration, x1, y1}};
    return o;
  };
  auto sin_object = [](ObjectShape shape, ObjectTexture tex, double intensity, double w, double h,
                       double cx, double cy, double ax, double ay, double period) {
    SceneObject o;
    o.shape = shape;
    o.texture = tex;
    o.intensity = intensity;
    o.width = w;
    o.height = h;
    o.sin_center_x = cx;
    o.sin_center_y = cy;
    o.sin_amp_x = ax;
    o.sin_amp_y = ay;
    o.sin_period = period;
    return o;
  };

  {
    SceneSpec s = base(1);
    s.objects.push_back(linear_object(ObjectShape::Rect, ObjectTexture::Flat, 0.9, 24, 18, 30, 30,
                                      95, 60, s.duration));
    specs.push_back(s);
  }
  {
    SceneSpec s = base(2);
    s.objects.push_back(linear_object(ObjectShape::Disk, ObjectTexture::Flat, 0.05, 20, 20, 90, 65,
                                      35, 30, s.duration));
    specs.push_back(s);
  }
  {
    SceneSpec s = base(3);
    s.objects.push_back(
        sin_object(ObjectShape::Rect, ObjectTexture::Checker, 0.85, 26, 20, 64, 48, 30, 18, 1.6));
    specs.push_back(s);
  }
  {
    SceneSpec s = base(4);
    s.objects.push_back(linear_object(ObjectShape::Disk, ObjectTexture::Checker, 0.8, 22, 22, 28,
                                      64, 100, 28, s.duration));
    specs.push_back(s);
  }
  {
    SceneSpec s = base(5);
    s.mode = DegradedMode::LowLight;
    s.objects.push_back(linear_object(ObjectShape::Rect, ObjectTexture::Flat, 0.95, 24, 16, 95, 30,
                                      30, 60, s.duration));
    specs.push_back(s);
  }
  {
    SceneSpec s = base(6);
    s.mode = DegradedMode::Hdr;
    s.background = 0.55;
    s.objects.push_back(
        sin_object(ObjectShape::Disk, ObjectTexture::Flat, 0.95, 20, 20, 64, 48, 26, 20, 1.4));
    specs.push_back(s);
  }
  {
    // Fast motion with blur: frame-locked vibration smears the frames while
    // the events trace the sweep.
    SceneSpec s = base(7);
    s.mode = DegradedMode::Fwb;
    SceneObject o;
    o.shape = ObjectShape::Rect;
    o.texture = ObjectTexture::Checker;
    o.intensity = 0.5;
    o.width = 20;
    o.height = 18;
    for (int i = 0; i <= 80; ++i) {
      const double t = i * 0.0125;
      o.waypoints.push_back({t, 50.0 + ((i % 2) ? 12.0 : -12.0), 30.0 + 32.0 * t});
    }
    s.objects.push_back(o);
    specs.push_back(s);
  }
  {
    SceneSpec s = base(8);
    s.noise_rate = 2.0;
    s.objects.push_back(linear_object(ObjectShape::Disk, ObjectTexture::Flat, 0.9, 22, 22, 32, 32,
                                      92, 62, s.duration));
    specs.push_back(s);
  }
  return specs;
}

}  // namespace fetrack
