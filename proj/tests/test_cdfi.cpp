#include <doctest.h>

#include <cmath>
#include <cstring>
#include <map>

#include "fetrack/cdfi.hpp"
#include "fetrack/gradcheck.hpp"
#include "fetrack/rng.hpp"

using namespace fetrack;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
  for (double& v : data) v = rng.normal(0.0, scale);
  return Tensor::from_data(std::move(shape), std::move(data));
}

std::map<std::string, Tensor> param_map(const Module& m) {
  std::map<std::string, Tensor> out;
  for (const auto& nt : m.named_state()) out.emplace(nt.name, nt.tensor);
  return out;
}

CdfiConfig toy_config() {
  CdfiConfig cfg;
  cfg.channels_low = 8;
  cfg.channels_high = 16;
  cfg.n_bins = 3;
  return cfg;
}

std::uint64_t fnv1a(std::span<const double> values) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace

TEST_CASE("ffe: shape contract at 256x256 and determinism") {
  Rng rng(1);
  Ffe ffe(1, 16, 32, rng);
  ffe.set_training(false);
  Rng input_rng(2);
  auto img = random_tensor({1, 1, 256, 256}, input_rng, 0.3);
  const FeatureLevels out = ffe.forward(img);
  CHECK(out.low.shape() == Shape{1, 16, 32, 32});
  CHECK(out.high.shape() == Shape{1, 32, 16, 16});

  const FeatureLevels again = ffe.forward(img);
  for (std::size_t i = 0; i < out.low.data().size(); ++i) {
    CHECK(out.low.data()[i] == again.low.data()[i]);
  }

  // high extents = ceil(low / 2)
  CHECK(out.high.dim(2) == (out.low.dim(2) + 1) / 2);

  auto bad = random_tensor({1, 1, 100, 100}, input_rng);
  CHECK_THROWS_AS(ffe.forward(bad), ShapeError);
}

TEST_CASE("ffe: golden-value snapshot for fixed seed and input") {
  Rng rng(12345);
  Ffe ffe(1, 8, 16, rng);
  ffe.set_training(false);
  Rng input_rng(777);
  auto img = random_tensor({1, 1, 64, 64}, input_rng, 0.25);
  const FeatureLevels out = ffe.forward(img);
  const std::uint64_t h = fnv1a(out.low.data()) ^ fnv1a(out.high.data());
  // Snapshot recorded at first build; detects silent numeric drift.
  constexpr std::uint64_t kGolden = 5106686288683674129ULL;
  if (kGolden == 0) {
    MESSAGE("ffe golden hash: 0x", std::hex, h);
  } else {
    CHECK(h == kGolden);
  }
}

TEST_CASE("eab: zero input annihilates; gate strictly shrinks") {
  Rng rng(3);
  Eab eab(6, rng);
  eab.set_training(false);

  auto zero = Tensor::zeros({1, 6, 8, 8});
  auto out = eab.forward(zero);
  for (double v : out.data()) CHECK(v == 0.0);

  Rng input_rng(4);
  auto x = random_tensor({2, 6, 8, 8}, input_rng);
  out = eab.forward(x);
  for (std::size_t i = 0; i < x.data().size(); ++i) {
    const double xi = x.data()[i];
    const double ei = out.data()[i];
    if (xi != 0.0) {
      CHECK(std::abs(ei) < std::abs(xi));
      CHECK(ei * xi > 0.0);  // same sign
    }
  }
}

TEST_CASE("eab: equals step-by-step composition of its published form") {
  Rng rng(5);
  Eab eab(4, rng);
  eab.set_training(false);
  auto params = param_map(eab);
  const Tensor w = params.at("gate.weight");
  const Tensor b = params.at("gate.bias");

  Rng input_rng(6);
  auto kappa = random_tensor({1, 4, 5, 7}, input_rng);
  const Tensor got = eab.forward(kappa);

  Tensor channel_gate = sigmoid(adaptive_avg_pool(kappa));
  Tensor kappa_m = mul(kappa, channel_gate);
  Tensor summed = sum_channels(kappa_m);
  Tensor gate = sigmoid(conv2d(summed, w, b, 1, 0));
  Tensor expect = mul(kappa, gate);
  for (std::size_t i = 0; i < got.data().size(); ++i) {
    CHECK(got.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("cab: zero primary input gives zero output; cone bound holds") {
  Rng rng(7);
  Cab cab(5, true, true, rng);
  cab.set_training(false);
  Rng input_rng(8);
  auto d2 = random_tensor({1, 5, 6, 6}, input_rng);

  auto zero = Tensor::zeros({1, 5, 6, 6});
  auto out = cab.forward(zero, d2);
  for (double v : out.data()) CHECK(v == 0.0);

  auto d1 = random_tensor({1, 5, 6, 6}, input_rng);
  out = cab.forward(d1, d2);
  for (std::size_t i = 0; i < d1.data().size(); ++i) {
    if (std::abs(d1.data()[i]) > 1e-9) {
      const double ratio = out.data()[i] / d1.data()[i];
      CHECK(ratio > 1.0);
      CHECK(ratio < 3.0);
    }
  }
}

TEST_CASE("cab: ablation flags remove their gates") {
  Rng rng(9);
  Rng input_rng(10);
  auto d1 = random_tensor({1, 4, 6, 6}, input_rng);
  auto d2 = random_tensor({1, 4, 6, 6}, input_rng);

  Cab no_self(4, false, true, rng);
  no_self.set_training(false);
  auto out = no_self.forward(d1, d2);
  // Without self-attention the ratio is 1 + cross_gate in (1,2).
  for (std::size_t i = 0; i < d1.data().size(); ++i) {
    if (std::abs(d1.data()[i]) > 1e-9) {
      const double ratio = out.data()[i] / d1.data()[i];
      CHECK(ratio > 1.0);
      CHECK(ratio < 2.0);
    }
  }

  Cab no_cross(4, true, false, rng);
  no_cross.set_training(false);
  out = no_cross.forward(d1, d2);
  // The cross branch is gone: output is independent of d2.
  auto out2 = no_cross.forward(d1, random_tensor({1, 4, 6, 6}, input_rng));
  for (std::size_t i = 0; i < out.data().size(); ++i) CHECK(out.data()[i] == out2.data()[i]);

  Cab neither(4, false, false, rng);
  neither.set_training(false);
  out = neither.forward(d1, d2);
  for (std::size_t i = 0; i < out.data().size(); ++i) CHECK(out.data()[i] == d1.data()[i]);
  CHECK(neither.named_parameters().empty());
}

TEST_CASE("cab: equals independent term-by-term evaluation") {
  Rng rng(11);
  Cab cab(4, true, true, rng);
  cab.set_training(false);
  auto params = param_map(cab);

  Rng input_rng(12);
  auto d1 = random_tensor({1, 4, 5, 5}, input_rng);
  auto d2 = random_tensor({1, 4, 5, 5}, input_rng);
  const Tensor got = cab.forward(d1, d2);

  auto bn_eval = [&](const std::string& prefix, const Tensor& x) {
    return batchnorm(x, params.at(prefix + ".gamma"), params.at(prefix + ".beta"),
                     params.at(prefix + ".running_mean"), params.at(prefix + ".running_var"),
                     /*training=*/false);
  };
  Tensor t_self = mul(sigmoid(conv2d(d1, params.at("self_gate.weight"),
                                     params.at("self_gate.bias"), 1, 1)),
                      d1);
  Tensor a = relu(bn_eval("cross_a_bn", conv2d(d2, params.at("cross_a.weight"), Tensor(), 1, 0)));
  Tensor b = relu(bn_eval("cross_b_bn", conv2d(d2, params.at("cross_b.weight"), Tensor(), 1, 1)));
  Tensor c = relu(bn_eval("cross_c_bn", conv2d(d2, params.at("cross_c.weight"), Tensor(), 1, 2)));
  Tensor gate = sigmoid(conv2d(concat_channels({a, b, c}), params.at("cross_fuse.weight"),
                               params.at("cross_fuse.bias"), 1, 0));
  Tensor expect = add(add(t_self, mul(gate, d1)), d1);
  for (std::size_t i = 0; i < got.data().size(); ++i) {
    CHECK(got.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("adaptive weights: range and spatial permutation invariance") {
  Rng rng(13);
  AdaptiveWeightNet aw(6, rng);
  aw.set_training(false);
  Rng input_rng(14);
  auto x = random_tensor({2, 6, 4, 4}, input_rng);
  auto w = aw.forward(x);
  CHECK(w.shape() == Shape{2, 6, 1, 1});
  for (double v : w.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  // Reverse the spatial order of every channel: pooled stats are unchanged.
  auto permuted = x.clone_detached();
  for (std::int64_t p = 0; p < 12; ++p) {
    auto span = permuted.data().subspan(static_cast<std::size_t>(p) * 16, 16);
    std::reverse(span.begin(), span.end());
  }
  auto w2 = aw.forward(permuted);
  for (std::size_t i = 0; i < w.data().size(); ++i) {
    CHECK(w.data()[i] == doctest::Approx(w2.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("cdms: zero inputs give zero; AW off reproduces the unweighted sum") {
  Rng rng(15);
  Cdms with_aw(4, true, true, true, rng);
  with_aw.set_training(false);
  auto zero = Tensor::zeros({1, 4, 6, 6});
  auto out = with_aw.forward(zero, zero);
  for (double v : out.fused.data()) CHECK(v == 0.0);

  Rng rng2(16);
  Cdms no_aw(4, true, true, false, rng2);
  no_aw.set_training(false);
  Rng input_rng(17);
  auto f = random_tensor({1, 4, 6, 6}, input_rng);
  auto e = random_tensor({1, 4, 6, 6}, input_rng);
  auto fused = no_aw.forward(f, e);
  CHECK(fused.mean_weight_frame == 1.0);
  CHECK(fused.mean_weight_event == 1.0);

  // |K| <= 3(|F| + |E|) elementwise.
  for (std::size_t i = 0; i < fused.fused.data().size(); ++i) {
    CHECK(std::abs(fused.fused.data()[i]) <=
          3.0 * (std::abs(f.data()[i]) + std::abs(e.data()[i])) + 1e-12);
  }
}

TEST_CASE("efe: n=1 fusion is exactly w_1 * branch output") {
  Rng rng(18);
  Efe efe(1, 1, 8, 16, true, false, rng);
  efe.set_training(false);
  Rng input_rng(19);
  auto bin = random_tensor({1, 1, 32, 32}, input_rng, 0.3);
  const FeatureLevels fused = efe.forward({bin});
  const Efe::BranchOut branch = efe.branch_forward(0, bin);

  double w_low = 0.0, w_high = 0.0;
  for (const auto& nt : efe.named_parameters()) {
    if (nt.name == "w_low.0") w_low = nt.tensor.data()[0];
    if (nt.name == "w_high.0") w_high = nt.tensor.data()[0];
  }
  CHECK(w_low == 1.0);  // init 1/n with n=1
  for (std::size_t i = 0; i < fused.low.data().size(); ++i) {
    CHECK(fused.low.data()[i] == doctest::Approx(branch.low.data()[i] * w_low).epsilon(1e-12));
  }
  for (std::size_t i = 0; i < fused.high.data().size(); ++i) {
    CHECK(fused.high.data()[i] == doctest::Approx(branch.high.data()[i] * w_high).epsilon(1e-12));
  }
}

TEST_CASE("efe: n=3 equals the explicit weighted sum of branch outputs") {
  Rng rng(20);
  Efe efe(3, 1, 8, 16, true, false, rng);
  efe.set_training(false);
  Rng input_rng(21);
  std::vector<Tensor> bins;
  for (int i = 0; i < 3; ++i) bins.push_back(random_tensor({1, 1, 32, 32}, input_rng, 0.3));
  const FeatureLevels fused = efe.forward(bins);

  std::map<std::string, double> weights;
  for (const auto& nt : efe.named_parameters()) {
    if (nt.tensor.numel() == 1) weights[nt.name] = nt.tensor.data()[0];
  }
  std::vector<double> low_acc(fused.low.data().size(), 0.0);
  std::vector<double> high_acc(fused.high.data().size(), 0.0);
  for (int i = 0; i < 3; ++i) {
    const auto out = efe.branch_forward(i, bins[static_cast<std::size_t>(i)]);
    const double wl = weights.at("w_low." + std::to_string(i));
    const double wh = weights.at("w_high." + std::to_string(i));
    for (std::size_t k = 0; k < low_acc.size(); ++k) low_acc[k] += wl * out.low.data()[k];
    for (std::size_t k = 0; k < high_acc.size(); ++k) high_acc[k] += wh * out.high.data()[k];
  }
  for (std::size_t k = 0; k < low_acc.size(); ++k) {
    CHECK(fused.low.data()[k] == doctest::Approx(low_acc[k]).epsilon(1e-10));
  }
  for (std::size_t k = 0; k < high_acc.size(); ++k) {
    CHECK(fused.high.data()[k] == doctest::Approx(high_acc[k]).epsilon(1e-10));
  }

  CHECK_THROWS_AS(efe.forward({bins[0]}), ConfigError);
}

TEST_CASE("efe: fixed branch weights drop the weight parameters") {
  Rng rng(22);
  Efe fixed(3, 1, 8, 16, true, true, rng);
  for (const auto& nt : fixed.named_parameters()) {
    CHECK(nt.name.find("w_low") == std::string::npos);
    CHECK(nt.name.find("w_high") == std::string::npos);
  }
}

TEST_CASE("cdfi: bypass modes and fused composition oracle") {
  CdfiConfig cfg = toy_config();
  Rng input_rng(23);
  auto frame = random_tensor({1, 1, 64, 48}, input_rng, 0.3);
  std::vector<Tensor> bins;
  for (int i = 0; i < cfg.n_bins; ++i) bins.push_back(random_tensor({1, 1, 64, 48}, input_rng, 0.3));

  {
    CdfiConfig c = cfg;
    c.input_mode = InputMode::FrameOnly;
    Rng rng(24);
    Cdfi cdfi(c, rng);
    cdfi.set_training(false);
    const FusedFeatures k = cdfi.forward(frame, {});
    const FeatureLevels f = cdfi.ffe()->forward(frame);
    for (std::size_t i = 0; i < k.low.data().size(); ++i) {
      CHECK(k.low.data()[i] == f.low.data()[i]);
    }
    CHECK(k.weight_frame == 1.0);
    CHECK(k.weight_event == 0.0);
  }
  {
    CdfiConfig c = cfg;
    c.input_mode = InputMode::EventOnly;
    Rng rng(25);
    Cdfi cdfi(c, rng);
    cdfi.set_training(false);
    const FusedFeatures k = cdfi.forward(Tensor(), bins);
    const FeatureLevels e = cdfi.efe()->forward(bins);
    for (std::size_t i = 0; i < k.low.data().size(); ++i) {
      CHECK(k.low.data()[i] == e.low.data()[i]);
    }
  }
  {
    Rng rng(26);
    Cdfi cdfi(cfg, rng);
    cdfi.set_training(false);
    const FusedFeatures k = cdfi.forward(frame, bins);
    const FeatureLevels f = cdfi.ffe()->forward(frame);
    const FeatureLevels e = cdfi.efe()->forward(bins);
    const Cdms::Output low = cdfi.cdms_low()->forward(f.low, e.low);
    const Cdms::Output high = cdfi.cdms_high()->forward(f.high, e.high);
    for (std::size_t i = 0; i < k.low.data().size(); ++i) {
      CHECK(k.low.data()[i] == doctest::Approx(low.fused.data()[i]).epsilon(1e-12));
    }
    for (std::size_t i = 0; i < k.high.data().size(); ++i) {
      CHECK(k.high.data()[i] == doctest::Approx(high.fused.data()[i]).epsilon(1e-12));
    }
    CHECK(k.weight_frame == doctest::Approx(0.5 * (low.mean_weight_frame + high.mean_weight_frame)));
    // Adaptive weights strictly inside (0,1).
    CHECK(k.weight_frame > 0.0);
    CHECK(k.weight_frame < 1.0);
    CHECK(k.weight_event > 0.0);
    CHECK(k.weight_event < 1.0);
  }
  {
    CdfiConfig c = cfg;
    c.input_mode = InputMode::ConcatToFrame;
    Rng rng(27);
    Cdfi cdfi(c, rng);
    cdfi.set_training(false);
    const FusedFeatures k = cdfi.forward(frame, bins);
    CHECK(k.low.shape() == Shape{1, 8, 8, 6});

    CdfiConfig c2 = cfg;
    c2.input_mode = InputMode::ConcatToEvent;
    Rng rng2(28);
    Cdfi cdfi2(c2, rng2);
    cdfi2.set_training(false);
    const FusedFeatures k2 = cdfi2.forward(frame, bins);
    CHECK(k2.low.shape() == Shape{1, 8, 8, 6});
  }
}

TEST_CASE("cdfi: ablation flags change exactly the removed parameter subtrees") {
  CdfiConfig cfg = toy_config();
  auto keys_of = [](const CdfiConfig& c) {
    Rng rng(99);
    Cdfi cdfi(c, rng);
    std::vector<std::string> keys;
    for (const auto& nt : cdfi.named_state()) keys.push_back(nt.name);
    return keys;
  };
  const auto full = keys_of(cfg);

  auto diff = [&](const std::vector<std::string>& reduced) {
    std::vector<std::string> missing;
    for (const auto& k : full) {
      if (std::find(reduced.begin(), reduced.end(), k) == reduced.end()) missing.push_back(k);
    }
    // Nothing new may appear either.
    for (const auto& k : reduced) {
      CHECK(std::find(full.begin(), full.end(), k) != full.end());
    }
    return missing;
  };

  {
    CdfiConfig c = cfg;
    c.use_eab = false;
    for (const auto& k : diff(keys_of(c))) CHECK(k.find(".eab") != std::string::npos);
  }
  {
    CdfiConfig c = cfg;
    c.use_cdms = false;
    for (const auto& k : diff(keys_of(c))) CHECK(k.rfind("cdms_", 0) == 0);
  }
  {
    CdfiConfig c = cfg;
    c.use_self_attention = false;
    const auto missing = diff(keys_of(c));
    CHECK(!missing.empty());
    for (const auto& k : missing) CHECK(k.find("self_gate") != std::string::npos);
  }
  {
    CdfiConfig c = cfg;
    c.use_cross_attention = false;
    const auto missing = diff(keys_of(c));
    CHECK(!missing.empty());
    for (const auto& k : missing) CHECK(k.find(".cross_") != std::string::npos);
  }
  {
    CdfiConfig c = cfg;
    c.use_adaptive_weighting = false;
    const auto missing = diff(keys_of(c));
    CHECK(!missing.empty());
    for (const auto& k : missing) CHECK(k.find(".aw_") != std::string::npos);
  }
  {
    CdfiConfig c = cfg;
    c.fixed_branch_weights = true;
    const auto missing = diff(keys_of(c));
    CHECK(missing.size() == 6);  // w_low.0..2 + w_high.0..2
    for (const auto& k : missing) CHECK(k.find("efe.w_") != std::string::npos);
  }
}

TEST_CASE("cdfi: full forward passes a gradient check at toy scale") {
  CdfiConfig cfg;
  cfg.channels_low = 4;
  cfg.channels_high = 6;
  cfg.n_bins = 2;
  Rng rng(31);
  Cdfi cdfi(cfg, rng);
  cdfi.set_training(true);

  Rng input_rng(32);
  auto frame = random_tensor({2, 1, 32, 32}, input_rng, 0.3);
  std::vector<Tensor> bins;
  for (int i = 0; i < cfg.n_bins; ++i) bins.push_back(random_tensor({2, 1, 32, 32}, input_rng, 0.3));

  auto fn = [&] {
    const FusedFeatures k = cdfi.forward(frame, bins);
    return add(mean(square(k.low)), mean(square(k.high)));
  };
  // Checking every parameter is slow; probe a representative subset.
  std::vector<std::pair<std::string, Tensor>> probes;
  for (const auto& nt : cdfi.named_parameters()) {
    if (nt.name == "ffe.stage1.conv.weight" || nt.name == "efe.branch0.conv3.conv.weight" ||
        nt.name == "efe.branch1.eab1.gate.weight" || nt.name == "efe.w_low.0" ||
        nt.name == "cdms_low.cab_frame.self_gate.weight" ||
        nt.name == "cdms_low.cab_event.cross_fuse.weight" ||
        nt.name == "cdms_high.aw_frame.reduce.weight" ||
        nt.name == "ffe.stage4.bn.gamma") {
      probes.emplace_back(nt.name, nt.tensor);
    }
  }
  CHECK(probes.size() == 8);
  const auto report = grad_check(fn, probes, 1e-6, 1e-4, 24);
  for (const auto& e : report.entries) {
    INFO(e.name, " max_err=", e.max_error);
    CHECK(e.pass);
  }
}
