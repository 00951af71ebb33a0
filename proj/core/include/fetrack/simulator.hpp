#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fetrack/event_stream.hpp"

namespace fetrack {

enum class ObjectShape { Rect, Disk };
enum class ObjectTexture { Flat, Checker };
enum class DegradedMode { None, LowLight, Hdr, Fwb };

DegradedMode degraded_mode_from_string(const std::string& name);
std::string to_string(DegradedMode mode);

struct Waypoint {
  double t = 0.0;  // seconds
  double x = 0.0;  // center, pixels
  double y = 0.0;
};

struct SceneObject {
  ObjectShape shape = ObjectShape::Rect;
  ObjectTexture texture = ObjectTexture::Flat;
  double intensity = 0.9;
  double width = 24.0;
  double height = 18.0;
  // Piecewise-linear when waypoints are set; sinusoidal otherwise.
  std::vector<Waypoint> waypoints;
  double sin_center_x = 0.0, sin_center_y = 0.0;
  double sin_amp_x = 0.0, sin_amp_y = 0.0;
  double sin_period = 1.0;  // seconds
  double sin_phase_x = 0.0, sin_phase_y = 1.5707963267948966;

  void position(double t_s, double& x, double& y) const;
};

struct SceneSpec {
  int width = 346;
  int height = 260;
  double fps = 40.0;
  double duration = 1.0;  // seconds
  int substeps = 16;      // latent evaluations per frame interval
  double background = 0.35;
  double contrast_threshold = 0.15;  // log-intensity units
  DegradedMode mode = DegradedMode::None;
  double noise_rate = 0.0;  // spurious events / pixel / second
  std::uint64_t seed = 0;
  bool keep_latents = false;
  std::vector<SceneObject> objects;

  void check() const;
  std::string attribute() const { return mode == DegradedMode::None ? "" : to_string(mode); }

  std::string to_json() const;
  static SceneSpec from_json_text(const std::string& text);
  static std::vector<SceneSpec> list_from_json_file(const std::filesystem::path& path);
};

struct SimOutput {
  Sequence sequence;
  std::vector<std::vector<double>> latents;  // only when keep_latents
};

/// Render the scene at substep rate and emit contrast-threshold events with
/// interpolated timestamps. Frames are degraded per the mode; events always
/// come from the clean latent scene.
SimOutput simulate(const SceneSpec& spec);

/// Write one sequence directory per spec (seq000, seq001, ...). Deterministic
/// per seed; returns the directory names.
std::vector<std::string> make_dataset(const std::vector<SceneSpec>& specs,
                                      const std::filesystem::path& out_dir,
                                      EventFileFormat format = EventFileFormat::Evt);

/// Eight ready-made desk-scale specs (mixed shapes/trajectories/modes),
/// geometry 128x96 at 40 fps.
std::vector<SceneSpec> default_desk_specs(std::uint64_t seed);

}  // namespace fetrack
