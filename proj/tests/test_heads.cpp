#include <doctest.h>

#include <cmath>
#include <map>

#include "fetrack/gradcheck.hpp"
#include "fetrack/heads.hpp"
#include "fetrack/loss.hpp"
#include "fetrack/rng.hpp"

using namespace fetrack;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
  for (double& v : data) v = rng.normal(0.0, scale);
  return Tensor::from_data(std::move(shape), std::move(data));
}

HeadsConfig toy_heads() {
  HeadsConfig cfg;
  cfg.q_dim = 16;
  cfg.feat_dim = 16;
  cfg.filter_size = 4;  // exercise the even-kernel classify path
  return cfg;
}

void zero_biases(Module& m) {
  for (auto& nt : m.named_parameters()) {
    if (nt.name.ends_with(".bias") || nt.name.ends_with(".beta")) {
      auto t = nt.tensor;
      std::fill(t.data().begin(), t.data().end(), 0.0);
    }
  }
}

double param_value(const Module& m, const std::string& name, std::size_t idx = 0) {
  for (const auto& nt : m.named_parameters()) {
    if (nt.name == name) return nt.tensor.data()[idx];
  }
  throw std::runtime_error("no parameter " + name);
}

}  // namespace

TEST_CASE("compute_modulation: zero features and biases give zero vectors") {
  Rng rng(1);
  BboxRegressor reg(6, 10, toy_heads(), rng);
  reg.set_training(false);
  zero_biases(reg);

  auto k_low = Tensor::zeros({1, 6, 16, 16});
  auto k_high = Tensor::zeros({1, 10, 8, 8});
  auto box = box_to_tensor(BBox{20, 20, 40, 30});
  const ModulationVectors v = reg.compute_modulation(k_low, k_high, box);
  CHECK(v.low.shape() == Shape{1, 6});
  CHECK(v.high.shape() == Shape{1, 10});
  for (double x : v.low.data()) CHECK(x == 0.0);
  for (double x : v.high.data()) CHECK(x == 0.0);
}

TEST_CASE("compute_modulation: equals region_pool -> flatten -> FC composition") {
  Rng rng(2);
  BboxRegressor reg(4, 6, toy_heads(), rng);
  reg.set_training(false);
  std::map<std::string, Tensor> params;
  for (const auto& nt : reg.named_state()) params.emplace(nt.name, nt.tensor);

  Rng input_rng(3);
  auto k_low = random_tensor({1, 4, 16, 16}, input_rng);
  auto k_high = random_tensor({1, 6, 8, 8}, input_rng);
  auto box = box_to_tensor(BBox{12.5, 17.0, 52.0, 44.0});
  const ModulationVectors got = reg.compute_modulation(k_low, k_high, box);

  // Pooling maps image coords onto receptive-field centers:
  // feature = image * scale + (0.5 - 0.5 * scale).
  Tensor pl = region_pool(conv2d(k_low, params.at("conv_ref_low.weight"),
                                 params.at("conv_ref_low.bias"), 1, 1),
                          box, 5, 5, 1.0 / 8, 2, 0.5 - 0.5 / 8);
  Tensor ph = region_pool(conv2d(k_high, params.at("conv_ref_high.weight"),
                                 params.at("conv_ref_high.bias"), 1, 1),
                          box, 3, 3, 1.0 / 16, 2, 0.5 - 0.5 / 16);
  Tensor q = concat_channels(
      {linear(flatten2(pl), params.at("fc_q.weight"), params.at("fc_q.bias")), flatten2(ph)});
  Tensor v_low = linear(q, params.at("fc_v_low.weight"), params.at("fc_v_low.bias"));
  for (std::size_t i = 0; i < v_low.data().size(); ++i) {
    CHECK(got.low.data()[i] == doctest::Approx(v_low.data()[i]).epsilon(1e-12));
  }

  auto degenerate = box_to_tensor(BBox{5, 5, 0, 10});
  CHECK_THROWS_AS(reg.compute_modulation(k_low, k_high, degenerate), BoxError);
}

TEST_CASE("predict_iou: zero modulation reduces to the final FC bias") {
  Rng rng(4);
  BboxRegressor reg(4, 6, toy_heads(), rng);
  reg.set_training(false);
  Rng input_rng(5);
  auto feats = reg.prepare_test(random_tensor({1, 4, 16, 16}, input_rng),
                                random_tensor({1, 6, 8, 8}, input_rng));
  ModulationVectors zero_v{Tensor::zeros({1, 4}), Tensor::zeros({1, 6})};
  auto box = box_to_tensor(BBox{30, 30, 50, 40});
  const double pred = reg.predict_iou(feats, zero_v, box).item();
  CHECK(pred == doctest::Approx(param_value(reg, "fc_iou.bias")).epsilon(1e-12));
}

TEST_CASE("predict_iou: finite on random boxes; box gradient passes finite differences") {
  Rng rng(6);
  BboxRegressor reg(4, 6, toy_heads(), rng);
  reg.set_training(false);
  Rng input_rng(7);
  auto feats = reg.prepare_test(random_tensor({1, 4, 16, 16}, input_rng),
                                random_tensor({1, 6, 8, 8}, input_rng));
  auto v = ModulationVectors{random_tensor({1, 4}, input_rng), random_tensor({1, 6}, input_rng)};

  std::vector<double> box_data;
  for (int i = 0; i < 100; ++i) {
    box_data = {input_rng.uniform(0.0, 80.0), input_rng.uniform(0.0, 80.0),
                input_rng.uniform(4.0, 40.0), input_rng.uniform(4.0, 40.0)};
    auto box = Tensor::from_data({1, 4}, box_data);
    CHECK(std::isfinite(reg.predict_iou(feats, v, box).item()));
  }

  for (int seed = 0; seed < 20; ++seed) {
    Rng local(1000 + static_cast<std::uint64_t>(seed));
    auto box = Tensor::from_data({1, 4},
                                 {local.uniform(5.0, 70.0), local.uniform(5.0, 70.0),
                                  local.uniform(6.0, 40.0), local.uniform(6.0, 40.0)},
                                 /*requires_grad=*/true);
    const auto report =
        grad_check([&] { return reg.predict_iou(feats, v, box); }, {{"box", box}});
    INFO("seed ", seed, " err ", report.max_error());
    CHECK(report.pass());
  }
}

TEST_CASE("make_label: peak 1 at center cell, symmetric, matches formula") {
  const GaussianLabel label = make_label(52.0, 36.0, 24.0, 18.0, 12, 16, 8);
  const auto& m = label.map;
  CHECK(m.shape() == Shape{1, 1, 12, 16});
  CHECK(m.data()[static_cast<std::size_t>(label.center_row) * 16 + label.center_col] == 1.0);

  // Symmetry around the snapped center.
  for (int d = 1; d < 4; ++d) {
    const int r = label.center_row;
    if (label.center_col - d >= 0 && label.center_col + d < 16) {
      CHECK(m.data()[static_cast<std::size_t>(r) * 16 + label.center_col - d] ==
            doctest::Approx(m.data()[static_cast<std::size_t>(r) * 16 + label.center_col + d]));
    }
  }

  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const double cx = rng.uniform(8.0, 120.0);
    const double cy = rng.uniform(8.0, 88.0);
    const double w = rng.uniform(8.0, 40.0);
    const double h = rng.uniform(8.0, 40.0);
    const GaussianLabel l = make_label(cx, cy, w, h, 12, 16, 8);
    const double sigma = std::max(1.0, 0.25 * std::sqrt(w * h) / 8.0);
    CHECK(l.sigma == doctest::Approx(sigma));
    for (int r = 0; r < 12; ++r) {
      for (int c = 0; c < 16; ++c) {
        const double dr = r - l.center_row;
        const double dc = c - l.center_col;
        const double expect = std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
        CHECK(l.map.data()[static_cast<std::size_t>(r) * 16 + c] == doctest::Approx(expect));
        CHECK(l.map.data()[static_cast<std::size_t>(r) * 16 + c] <= 1.0);
      }
    }
  }
}

TEST_CASE("init_filter: constant features give a constant filter; equals region_pool") {
  Rng rng(9);
  Classifier cls(4, toy_heads(), rng);
  cls.set_training(false);

  auto constant = Tensor::full({1, 4, 16, 16}, 2.5);
  auto box = box_to_tensor(BBox{20, 20, 48, 40});
  const Tensor filter = cls.init_filter(constant, box);
  CHECK(filter.shape() == Shape{1, 4, 4, 4});
  for (double v : filter.data()) CHECK(v == doctest::Approx(2.5));

  Rng input_rng(10);
  auto feat = random_tensor({1, 4, 16, 16}, input_rng);
  const Tensor got = cls.init_filter(feat, box);
  const Tensor expect = region_pool(feat, box, 4, 4, 1.0 / 8, 2, 0.5 - 0.5 / 8);
  for (std::size_t i = 0; i < got.data().size(); ++i) CHECK(got.data()[i] == expect.data()[i]);
}

TEST_CASE("classify: zero filter gives zero map; geometry preserved") {
  Rng rng(11);
  Classifier cls(4, toy_heads(), rng);
  cls.set_training(false);
  Rng input_rng(12);
  auto feat = random_tensor({1, 4, 12, 16}, input_rng);
  auto zero_filter = Tensor::zeros({1, 4, 4, 4});
  const Tensor scores = cls.classify(feat, zero_filter);
  CHECK(scores.shape() == Shape{1, 1, 12, 16});
  for (double v : scores.data()) CHECK(v == 0.0);
}

TEST_CASE("optimize_filter: identity at steps=0, frozen-model monotonicity, improvement") {
  Rng rng(13);
  Classifier cls(4, toy_heads(), rng);
  cls.set_training(false);
  Rng input_rng(14);

  // A synthetic separable scene: a bright blob of features at a known spot.
  auto feat = Tensor::zeros({1, 4, 12, 16});
  for (std::int64_t c = 0; c < 4; ++c) {
    for (std::int64_t r = 4; r < 8; ++r) {
      for (std::int64_t x = 6; x < 10; ++x) {
        feat.data()[static_cast<std::size_t>((c * 12 + r) * 16 + x)] =
            1.0 + 0.1 * static_cast<double>(c);
      }
    }
  }
  const BBox target{48.0, 32.0, 32.0, 32.0};  // image coords; stride 8
  auto box = box_to_tensor(target);
  const GaussianLabel label = make_label(target.cx(), target.cy(), target.w, target.h, 12, 16, 8);

  const Tensor f0 = cls.init_filter(feat, box);
  const Tensor same = cls.optimize_filter(f0, feat, label.map, 0);
  for (std::size_t i = 0; i < f0.data().size(); ++i) CHECK(same.data()[i] == f0.data()[i]);

  std::vector<double> trace;
  const Tensor refined = cls.optimize_filter(f0, feat, label.map, 5, &trace);
  REQUIRE(trace.size() == 10);  // pre/post per step
  for (std::size_t s = 0; s < 5; ++s) {
    CHECK(trace[2 * s + 1] <= trace[2 * s] + 1e-12);  // frozen-model decrease
  }

  // The optimized filter classifies the reference better than the initial one.
  auto loss_of = [&](const Tensor& f) {
    return classification_loss(cls.classify(feat, f), label.map).item();
  };
  CHECK(loss_of(refined) < loss_of(f0));

  // Score-map argmax lands within one cell of the label center.
  const Tensor scores = cls.classify(feat, refined);
  std::size_t argmax = 0;
  for (std::size_t i = 1; i < scores.data().size(); ++i) {
    if (scores.data()[i] > scores.data()[argmax]) argmax = i;
  }
  const int row = static_cast<int>(argmax / 16);
  const int col = static_cast<int>(argmax % 16);
  CHECK(std::abs(row - label.center_row) <= 1);
  CHECK(std::abs(col - label.center_col) <= 1);

  // Zero-gradient input: a perfectly matched map keeps the filter unchanged.
  auto matched_label = Tensor::full({1, 1, 12, 16}, 0.0);
  auto zero_feat = Tensor::zeros({1, 4, 12, 16});
  auto zero_filter = Tensor::zeros({1, 4, 4, 4});
  const Tensor untouched = cls.optimize_filter(zero_filter, zero_feat, matched_label, 3);
  for (double v : untouched.data()) CHECK(v == 0.0);
}

TEST_CASE("loss: hinge cases, identities, oracles") {
  CHECK(hinge_residual_value(0.7, 0.5) == doctest::Approx(0.2));
  CHECK(hinge_residual_value(-0.3, 0.01) == 0.0);
  CHECK(hinge_residual_value(0.4, 0.01) == doctest::Approx(0.4));

  // s == z with z > 0.05 everywhere -> zero loss.
  auto z = Tensor::full({1, 1, 4, 4}, 0.5);
  CHECK(classification_loss(z, z).item() == 0.0);

  // All background, all scores <= 0 -> zero loss.
  auto bg = Tensor::full({1, 1, 4, 4}, 0.01);
  auto s_neg = Tensor::full({1, 1, 4, 4}, -0.2);
  CHECK(classification_loss(s_neg, bg).item() == 0.0);

  // Random maps match a scalar-loop oracle.
  Rng rng(15);
  std::vector<double> sv(64), zv(64);
  for (auto& v : sv) v = rng.normal(0.0, 0.5);
  for (auto& v : zv) v = rng.uniform();
  auto s = Tensor::from_data({1, 1, 8, 8}, sv);
  auto zz = Tensor::from_data({1, 1, 8, 8}, zv);
  double expect = 0.0;
  for (std::size_t i = 0; i < 64; ++i) {
    const double r = hinge_residual_value(sv[i], zv[i]);
    expect += r * r;
  }
  expect /= 64.0;
  CHECK(classification_loss(s, zz).item() == doctest::Approx(expect).epsilon(1e-12));

  // bbox loss.
  auto p = Tensor::from_data({1, 1}, {0.3});
  auto t = Tensor::from_data({1, 1}, {0.5});
  CHECK(bbox_loss(p, t).item() == doctest::Approx(0.04));
  CHECK(bbox_loss(t, t).item() == 0.0);
  std::vector<double> pv(10), tv(10);
  for (auto& v : pv) v = rng.uniform();
  for (auto& v : tv) v = rng.uniform();
  double mse = 0.0;
  for (std::size_t i = 0; i < 10; ++i) mse += (pv[i] - tv[i]) * (pv[i] - tv[i]);
  mse /= 10.0;
  CHECK(bbox_loss(Tensor::from_data({10, 1}, pv), Tensor::from_data({10, 1}, tv)).item() ==
        doctest::Approx(mse).epsilon(1e-12));

  // Permutation invariance of L_b.
  std::vector<double> pv2(pv.rbegin(), pv.rend());
  std::vector<double> tv2(tv.rbegin(), tv.rend());
  CHECK(bbox_loss(Tensor::from_data({10, 1}, pv2), Tensor::from_data({10, 1}, tv2)).item() ==
        doctest::Approx(mse).epsilon(1e-12));

  // Total loss.
  CHECK(total_loss(Tensor::scalar(0.0), Tensor::scalar(0.0), 7.0).item() == 0.0);
  CHECK(total_loss(Tensor::scalar(1.0), Tensor::scalar(2.0), 1.0).item() == doctest::Approx(3.0));

  CHECK_THROWS_AS(classification_loss(s, Tensor::zeros({1, 1, 4, 4})), ShapeError);
  CHECK_THROWS_AS(bbox_loss(p, Tensor::zeros({3, 1})), ShapeError);
}

TEST_CASE("hinge closed form on a dense random sweep") {
  Rng rng(16);
  for (int i = 0; i < 10000; ++i) {
    const double s = rng.uniform(-2.0, 2.0);
    const double z = rng.uniform(0.0, 1.0);
    const double expect = z > 0.05 ? s - z : std::max(0.0, s);
    CHECK(hinge_residual_value(s, z) == expect);
  }
}
