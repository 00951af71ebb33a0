#include "fetrack/gradcheck_suite.hpp"

#include "fetrack/loss.hpp"
#include "fetrack/model.hpp"
#include "fetrack/rng.hpp"

namespace fetrack {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false, double scale = 1.0) {
  std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
  for (double& v : data) v = rng.normal(0.0, scale);
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

void merge(GradCheckReport& into, const std::string& name, const GradCheckReport& part) {
  GradCheckEntry entry;
  entry.name = name;
  for (const auto& e : part.entries) {
    entry.max_error = std::max(entry.max_error, e.max_error);
    entry.checked += e.checked;
    entry.pass = entry.pass && e.pass;
  }
  into.entries.push_back(std::move(entry));
}

}  // namespace

GradCheckReport run_standard_gradchecks(double h, double tolerance, int seeds) {
  GradCheckReport report;
  report.tolerance = tolerance;

  auto accumulate = [&](const std::string& name, auto make_check) {
    GradCheckReport combined;
    combined.tolerance = tolerance;
    for (int s = 0; s < seeds; ++s) {
      Rng rng(0x5eedULL * 1315423911ULL + static_cast<std::uint64_t>(s));
      const GradCheckReport part = make_check(rng);
      for (const auto& e : part.entries) combined.entries.push_back(e);
    }
    merge(report, name, combined);
  };

  accumulate("conv2d", [&](Rng& rng) {
    auto x = random_tensor({2, 3, 6, 6}, rng, true);
    auto w = random_tensor({4, 3, 3, 3}, rng, true);
    auto b = random_tensor({4}, rng, true);
    return grad_check([&] { return mean(square(conv2d(x, w, b, 2, 1))); },
                      {{"x", x}, {"w", w}, {"b", b}}, h, tolerance, 24);
  });
  accumulate("linear", [&](Rng& rng) {
    auto x = random_tensor({3, 5}, rng, true);
    auto w = random_tensor({4, 5}, rng, true);
    auto b = random_tensor({4}, rng, true);
    return grad_check([&] { return mean(square(linear(x, w, b))); },
                      {{"x", x}, {"w", w}, {"b", b}}, h, tolerance, 24);
  });
  accumulate("elementwise(add,mul,sigmoid,relu,scale)", [&](Rng& rng) {
    auto a = random_tensor({2, 3, 4, 4}, rng, true);
    auto b = random_tensor({2, 3, 1, 1}, rng, true);
    return grad_check(
        [&] { return mean(mul(sigmoid(a), add(relu(scale(a, 0.7)), b))); },
        {{"a", a}, {"b", b}}, h, tolerance, 24);
  });
  accumulate("pool(avg,max,adaptive)", [&](Rng& rng) {
    auto a = random_tensor({2, 3, 6, 6}, rng, true);
    return grad_check(
        [&] {
          return add(mean(square(avg_pool(a, 2, 2))),
                     add(mean(square(max_pool(a, 3, 1))), mean(square(adaptive_avg_pool(a)))));
        },
        {{"a", a}}, h, tolerance, 24);
  });
  accumulate("batchnorm(train)", [&](Rng& rng) {
    auto x = random_tensor({3, 4, 4, 4}, rng, true);
    auto g = random_tensor({4}, rng, true);
    auto b = random_tensor({4}, rng, true);
    auto rm = Tensor::zeros({4});
    auto rv = Tensor::full({4}, 1.0);
    return grad_check(
        [&] { return mean(square(batchnorm(x, g, b, rm, rv, true))); },
        {{"x", x}, {"gamma", g}, {"beta", b}}, h, tolerance, 24);
  });
  accumulate("batchnorm(eval)", [&](Rng& rng) {
    auto x = random_tensor({3, 4, 4, 4}, rng, true);
    auto g = random_tensor({4}, rng, true);
    auto b = random_tensor({4}, rng, true);
    auto rm = random_tensor({4}, rng, false, 0.2);
    auto rv = Tensor::full({4}, 1.0);
    // Eval mode reads fixed statistics; no in-place updates occur.
    return grad_check(
        [&] { return mean(square(batchnorm(x, g, b, rm, rv, false))); },
        {{"x", x}, {"gamma", g}, {"beta", b}}, h, tolerance, 24);
  });
  accumulate("concat+reductions", [&](Rng& rng) {
    auto a = random_tensor({1, 2, 4, 4}, rng, true);
    auto b = random_tensor({1, 3, 4, 4}, rng, true);
    return grad_check(
        [&] { return mean(square(sum_channels(concat_channels({a, b})))); },
        {{"a", a}, {"b", b}}, h, tolerance, 24);
  });
  accumulate("hinge_residual", [&](Rng& rng) {
    auto s = random_tensor({1, 1, 6, 6}, rng, true);
    std::vector<double> z(36);
    for (double& v : z) v = rng.uniform();
    auto labels = Tensor::from_data({1, 1, 6, 6}, std::move(z));
    return grad_check([&] { return mean(square(hinge_residual(s, labels))); }, {{"s", s}}, h,
                      tolerance, 24);
  });
  accumulate("region_pool(features+box)", [&](Rng& rng) {
    auto feat = random_tensor({1, 3, 12, 12}, rng, true);
    auto box = Tensor::from_data({1, 4},
                                 {rng.uniform(1.0, 4.0), rng.uniform(1.0, 4.0),
                                  rng.uniform(2.0, 6.0), rng.uniform(2.0, 6.0)},
                                 true);
    return grad_check(
        [&] { return mean(square(region_pool(feat, box, 4, 4, 0.5, 2, 0.25))); },
        {{"features", feat}, {"box", box}}, h, tolerance, 32);
  });

  // predict_iou box gradients on a toy regressor.
  accumulate("predict_iou(box)", [&](Rng& rng) {
    HeadsConfig hcfg;
    hcfg.q_dim = 16;
    hcfg.feat_dim = 16;
    Rng model_rng = rng.fork(1);
    BboxRegressor reg(4, 6, hcfg, model_rng);
    reg.set_training(false);
    auto feats = reg.prepare_test(random_tensor({1, 4, 16, 16}, rng),
                                  random_tensor({1, 6, 8, 8}, rng));
    ModulationVectors v{random_tensor({1, 4}, rng), random_tensor({1, 6}, rng)};
    auto box = Tensor::from_data({1, 4},
                                 {rng.uniform(5.0, 70.0), rng.uniform(5.0, 70.0),
                                  rng.uniform(6.0, 40.0), rng.uniform(6.0, 40.0)},
                                 true);
    return grad_check([&] { return reg.predict_iou(feats, v, box); }, {{"box", box}}, h,
                      tolerance, 4);
  });

  // Full CDFI + heads + loss composite at toy scale; probe a parameter
  // subset spanning every component.
  accumulate("composite(cdfi+heads+loss)", [&](Rng& rng) {
    ModelConfig mc;
    mc.cdfi.channels_low = 4;
    mc.cdfi.channels_high = 6;
    mc.cdfi.n_bins = 2;
    mc.heads.q_dim = 8;
    mc.heads.feat_dim = 8;
    mc.seed = rng.next_u64();
    TrackerModel model(mc);
    model.set_training(true);

    auto frame_r = random_tensor({2, 1, 32, 32}, rng, false, 0.3);
    auto frame_t = random_tensor({2, 1, 32, 32}, rng, false, 0.3);
    std::vector<Tensor> bins_r, bins_t;
    for (int i = 0; i < 2; ++i) {
      bins_r.push_back(random_tensor({2, 1, 32, 32}, rng, false, 0.3));
      bins_t.push_back(random_tensor({2, 1, 32, 32}, rng, false, 0.3));
    }
    auto boxes = Tensor::from_data({2, 4}, {6.0, 7.0, 12.0, 10.0, 10.0, 5.0, 14.0, 11.0});
    auto cand = Tensor::from_data({3, 4}, {5.5, 6.5, 12.0, 10.0, 7.0, 8.0, 13.0, 9.0,
                                           9.0, 6.0, 11.0, 12.0});
    auto targets = Tensor::from_data({3, 1}, {0.8, 0.5, 0.6});
    const GaussianLabel label = make_label(12.0, 12.0, 12.0, 10.0, 4, 4, 8);
    auto label_batch = concat_batch({label.map, label.map});

    auto fn = [&] {
      const FusedFeatures k_ref = model.cdfi().forward(frame_r, bins_r);
      const FusedFeatures k_test = model.cdfi().forward(frame_t, bins_t);
      Tensor feat_ref = model.classifier().features(k_ref.low);
      Tensor feat_test = model.classifier().features(k_test.low);
      Tensor filter = model.classifier().init_filter(feat_ref, boxes);
      Tensor l_cls = classification_loss(model.classifier().classify(feat_test, filter),
                                         label_batch);
      ModulationVectors v = model.regressor().compute_modulation(k_ref.low, k_ref.high, boxes);
      auto feats = model.regressor().prepare_test(k_test.low, k_test.high);
      ModulationVectors v0{slice_batch(v.low, 0), slice_batch(v.high, 0)};
      BboxRegressor::TestFeatures f0{slice_batch(feats.low, 0), slice_batch(feats.high, 0)};
      Tensor l_b = bbox_loss(model.regressor().predict_iou(f0, v0, cand), targets);
      return total_loss(l_cls, l_b, 0.01);
    };

    std::vector<std::pair<std::string, Tensor>> probes;
    const char* wanted[] = {"cdfi.ffe.stage1.conv.weight",
                            "cdfi.ffe.stage4.bn.gamma",
                            "cdfi.efe.branch0.conv3.conv.weight",
                            "cdfi.efe.branch1.eab1.gate.weight",
                            "cdfi.efe.w_low.0",
                            "cdfi.cdms_low.cab_frame.self_gate.weight",
                            "cdfi.cdms_low.cab_event.cross_fuse.weight",
                            "cdfi.cdms_high.aw_frame.reduce.weight",
                            "classifier.feat.weight",
                            "regressor.fc_iou.weight",
                            "regressor.conv_ref_low.weight",
                            "regressor.fc_v_low.bias"};
    for (const auto& nt : model.named_parameters()) {
      for (const char* name : wanted) {
        if (nt.name == name) probes.emplace_back(nt.name, nt.tensor);
      }
    }
    return grad_check(fn, probes, h, tolerance, 8);
  });

  return report;
}

}  // namespace fetrack
