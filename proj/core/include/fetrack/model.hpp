#pragma once

#include <filesystem>

#include "fetrack/cdfi.hpp"
#include "fetrack/heads.hpp"

namespace fetrack {

struct ModelConfig {
  CdfiConfig cdfi;
  HeadsConfig heads;
  std::uint64_t seed = 0;

  static ModelConfig toy(std::uint64_t seed = 0);

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  static ModelConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// CDFI + classifier + bbox regressor, the full trainable network.
class TrackerModel : public Module {
 public:
  explicit TrackerModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const Cdfi& cdfi() const { return *cdfi_; }
  const Classifier& classifier() const { return *classifier_; }
  const BboxRegressor& regressor() const { return *regressor_; }

  /// Component a parameter belongs to, by name prefix; drives per-component
  /// learning rates.
  enum class Group { Cdfi, Classifier, Regressor };
  static Group group_of(const std::string& parameter_name);

  /// Pads an image tensor to a multiple of 16 on the right/bottom (frames
  /// with 0.0, aggregated event maps with their neutral value).
  static Tensor pad_to_16(const Tensor& x, double fill);

 private:
  ModelConfig config_;
  Cdfi* cdfi_;
  Classifier* classifier_;
  BboxRegressor* regressor_;
};

}  // namespace fetrack
