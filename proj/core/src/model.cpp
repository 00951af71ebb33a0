#include "fetrack/model.hpp"

#include <fstream>

#include <json.hpp>

namespace fetrack {

using nlohmann::json;

ModelConfig ModelConfig::toy(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.cdfi.channels_low = 16;
  cfg.cdfi.channels_high = 32;
  cfg.seed = seed;
  return cfg;
}

std::string ModelConfig::to_json() const {
  json j;
  j["cdfi"] = {{"n_bins", cdfi.n_bins},
               {"channels_low", cdfi.channels_low},
               {"channels_high", cdfi.channels_high},
               {"input_mode", to_string(cdfi.input_mode)},
               {"use_eab", cdfi.use_eab},
               {"use_cdms", cdfi.use_cdms},
               {"use_self_attention", cdfi.use_self_attention},
               {"use_cross_attention", cdfi.use_cross_attention},
               {"use_adaptive_weighting", cdfi.use_adaptive_weighting},
               {"fixed_branch_weights", cdfi.fixed_branch_weights},
               {"aggregation", to_string(cdfi.aggregation)},
               {"time_surface_tau", cdfi.time_surface_tau}};
  j["heads"] = {{"filter_size", heads.filter_size},
                {"pool_low", heads.pool_low},
                {"pool_high", heads.pool_high},
                {"q_dim", heads.q_dim},
                {"feat_dim", heads.feat_dim},
                {"filter_opt_steps", heads.filter_opt_steps},
                {"stride_low", heads.stride_low},
                {"stride_high", heads.stride_high}};
  j["seed"] = seed;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ParseError(std::string("bad model config JSON: ") + e.what());
  }
  ModelConfig cfg;
  try {
    if (j.contains("cdfi")) {
      const json& c = j["cdfi"];
      if (c.contains("n_bins")) cfg.cdfi.n_bins = c["n_bins"].get<int>();
      if (c.contains("channels_low")) cfg.cdfi.channels_low = c["channels_low"].get<int>();
      if (c.contains("channels_high")) cfg.cdfi.channels_high = c["channels_high"].get<int>();
      if (c.contains("input_mode")) {
        cfg.cdfi.input_mode = input_mode_from_string(c["input_mode"].get<std::string>());
      }
      if (c.contains("use_eab")) cfg.cdfi.use_eab = c["use_eab"].get<bool>();
      if (c.contains("use_cdms")) cfg.cdfi.use_cdms = c["use_cdms"].get<bool>();
      if (c.contains("use_self_attention")) {
        cfg.cdfi.use_self_attention = c["use_self_attention"].get<bool>();
      }
      if (c.contains("use_cross_attention")) {
        cfg.cdfi.use_cross_attention = c["use_cross_attention"].get<bool>();
      }
      if (c.contains("use_adaptive_weighting")) {
        cfg.cdfi.use_adaptive_weighting = c["use_adaptive_weighting"].get<bool>();
      }
      if (c.contains("fixed_branch_weights")) {
        cfg.cdfi.fixed_branch_weights = c["fixed_branch_weights"].get<bool>();
      }
      if (c.contains("aggregation")) {
        cfg.cdfi.aggregation = aggregation_method_from_string(c["aggregation"].get<std::string>());
      }
      if (c.contains("time_surface_tau")) {
        cfg.cdfi.time_surface_tau = c["time_surface_tau"].get<double>();
      }
    }
    if (j.contains("heads")) {
      const json& h = j["heads"];
      if (h.contains("filter_size")) cfg.heads.filter_size = h["filter_size"].get<int>();
      if (h.contains("pool_low")) cfg.heads.pool_low = h["pool_low"].get<int>();
      if (h.contains("pool_high")) cfg.heads.pool_high = h["pool_high"].get<int>();
      if (h.contains("q_dim")) cfg.heads.q_dim = h["q_dim"].get<int>();
      if (h.contains("feat_dim")) cfg.heads.feat_dim = h["feat_dim"].get<int>();
      if (h.contains("filter_opt_steps")) {
        cfg.heads.filter_opt_steps = h["filter_opt_steps"].get<int>();
      }
      if (h.contains("stride_low")) cfg.heads.stride_low = h["stride_low"].get<int>();
      if (h.contains("stride_high")) cfg.heads.stride_high = h["stride_high"].get<int>();
    }
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad model config field: ") + e.what());
  }
  cfg.cdfi.check();
  return cfg;
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open model config " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text);
}

void ModelConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write model config " + path.string());
  out << to_json() << "\n";
}

TrackerModel::TrackerModel(const ModelConfig& config) : config_(config) {
  Rng rng(config.seed ^ 0x6d6f64656cULL);
  Rng cdfi_rng = rng.fork(1);
  Rng cls_rng = rng.fork(2);
  Rng reg_rng = rng.fork(3);
  cdfi_ = &add_module("cdfi", std::make_unique<Cdfi>(config.cdfi, cdfi_rng));
  classifier_ = &add_module(
      "classifier", std::make_unique<Classifier>(config.cdfi.channels_low, config.heads, cls_rng));
  regressor_ = &add_module(
      "regressor", std::make_unique<BboxRegressor>(config.cdfi.channels_low,
                                                   config.cdfi.channels_high, config.heads,
                                                   reg_rng));
}

TrackerModel::Group TrackerModel::group_of(const std::string& parameter_name) {
  if (parameter_name.rfind("classifier.", 0) == 0) return Group::Classifier;
  if (parameter_name.rfind("regressor.", 0) == 0) return Group::Regressor;
  return Group::Cdfi;
}

Tensor TrackerModel::pad_to_16(const Tensor& x, double fill) {
  if (x.rank() != 4) throw ShapeError("pad_to_16: rank-4 input required");
  const std::int64_t h = x.dim(2), w = x.dim(3);
  const std::int64_t ph = (16 - h % 16) % 16;
  const std::int64_t pw = (16 - w % 16) % 16;
  if (ph == 0 && pw == 0) return x;
  const std::int64_t n = x.dim(0), c = x.dim(1);
  const std::int64_t oh = h + ph, ow = w + pw;
  Tensor out = Tensor::full({n, c, oh, ow}, fill);
  auto dst = out.data();
  const auto src = x.data();
  for (std::int64_t p = 0; p < n * c; ++p) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t xx = 0; xx < w; ++xx) {
        dst[static_cast<std::size_t>((p * oh + y) * ow + xx)] =
            src[static_cast<std::size_t>((p * h + y) * w + xx)];
      }
    }
  }
  return out;
}

}  // namespace fetrack
