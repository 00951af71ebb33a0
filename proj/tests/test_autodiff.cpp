#include <doctest.h>

#include <cmath>

#include "fetrack/checkpoint.hpp"
#include "fetrack/gradcheck.hpp"
#include "fetrack/nn.hpp"
#include "fetrack/rng.hpp"
#include "fetrack/tensor.hpp"

using namespace fetrack;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false, double scale = 1.0) {
  std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
  for (double& v : data) v = rng.normal(0.0, scale);
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// Direct six-loop convolution, no tricks.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                                int pad) {
  const auto N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const auto Ho = (H + 2 * pad - kh) / stride + 1;
  const auto Wo = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(N * Co * Ho * Wo), 0.0);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t co = 0; co < Co; ++co)
      for (std::int64_t oy = 0; oy < Ho; ++oy)
        for (std::int64_t ox = 0; ox < Wo; ++ox) {
          double acc = b.defined() ? b.data()[static_cast<std::size_t>(co)] : 0.0;
          for (std::int64_t ci = 0; ci < Ci; ++ci)
            for (std::int64_t ky = 0; ky < kh; ++ky)
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const std::int64_t iy = oy * stride + ky - pad;
                const std::int64_t ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x.data()[static_cast<std::size_t>(((n * Ci + ci) * H + iy) * W + ix)] *
                       w.data()[static_cast<std::size_t>(((co * Ci + ci) * kh + ky) * kw + kx)];
              }
          out[static_cast<std::size_t>(((n * Co + co) * Ho + oy) * Wo + ox)] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d: constant input, 1x1 kernel") {
  auto x = Tensor::full({1, 1, 3, 3}, 1.0);
  auto k = Tensor::full({1, 1, 1, 1}, 2.0);
  auto y = conv2d(x, k, Tensor(), 1, 0);
  for (double v : y.data()) CHECK(v == doctest::Approx(2.0));
}

TEST_CASE("conv2d: 3x3 delta kernel with padding 1 is identity") {
  Rng rng(2);
  auto x = random_tensor({2, 1, 5, 7}, rng);
  auto k = Tensor::zeros({1, 1, 3, 3});
  k.data()[4] = 1.0;  // center tap
  auto y = conv2d(x, k, Tensor(), 1, 1);
  REQUIRE(y.shape() == Shape{2, 1, 5, 7});
  for (std::size_t i = 0; i < y.data().size(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d: matches direct loop oracle on random tensors") {
  Rng rng(3);
  for (int trial = 0; trial < 8; ++trial) {
    const int stride = 1 + static_cast<int>(rng.uniform_int(0, 1));
    const int pad = static_cast<int>(rng.uniform_int(0, 2));
    const int k = 1 + 2 * static_cast<int>(rng.uniform_int(0, 2));  // 1,3,5
    auto x = random_tensor({2, 3, 8, 8}, rng);
    auto w = random_tensor({4, 3, k, k}, rng);
    auto b = random_tensor({4}, rng);
    auto y = conv2d(x, w, b, stride, pad);
    const auto expect = conv_oracle(x, w, b, stride, pad);
    REQUIRE(static_cast<std::size_t>(y.numel()) == expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) {
      CHECK(y.data()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d: shape mismatch raises ShapeError") {
  auto x = Tensor::zeros({1, 2, 4, 4});
  auto w = Tensor::zeros({1, 3, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w, Tensor(), 1, 1), ShapeError);
}

TEST_CASE("elementwise: sigmoid/relu basics and scalar-loop oracle") {
  auto z = Tensor::scalar(0.0);
  CHECK(sigmoid(z).item() == doctest::Approx(0.5));
  auto neg = Tensor::scalar(-3.0);
  auto pos = Tensor::scalar(3.0);
  CHECK(relu(neg).item() == 0.0);
  CHECK(relu(pos).item() == 3.0);

  Rng rng(4);
  auto a = random_tensor({2, 3, 4, 5}, rng);
  auto b = random_tensor({2, 3, 4, 5}, rng);
  auto s = add(a, b);
  auto m = mul(a, b);
  for (std::size_t i = 0; i < s.data().size(); ++i) {
    CHECK(s.data()[i] == a.data()[i] + b.data()[i]);
    CHECK(m.data()[i] == a.data()[i] * b.data()[i]);
  }
}

TEST_CASE("broadcast: channel vector and spatial map forms") {
  Rng rng(5);
  auto x = random_tensor({2, 3, 4, 4}, rng);
  auto cvec = random_tensor({2, 3, 1, 1}, rng);
  auto y = mul(x, cvec);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t i = 0; i < 16; ++i) {
        const auto idx = static_cast<std::size_t>((n * 3 + c) * 16 + i);
        CHECK(y.data()[idx] == x.data()[idx] * cvec.data()[static_cast<std::size_t>(n * 3 + c)]);
      }

  auto smap = random_tensor({2, 1, 4, 4}, rng);
  auto z = mul(x, smap);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t i = 0; i < 16; ++i) {
        const auto idx = static_cast<std::size_t>((n * 3 + c) * 16 + i);
        CHECK(z.data()[idx] == x.data()[idx] * smap.data()[static_cast<std::size_t>(n * 16 + i)]);
      }

  auto bad = random_tensor({2, 2, 4, 4}, rng);
  CHECK_THROWS_AS(add(x, bad), ShapeError);
}

TEST_CASE("pool: adaptive average equals per-channel mean") {
  auto x = Tensor::full({1, 1, 2, 2}, 4.0);
  CHECK(adaptive_avg_pool(x).item() == doctest::Approx(4.0));

  auto q = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(adaptive_avg_pool(q).item() == doctest::Approx(2.5));

  Rng rng(6);
  auto r = random_tensor({3, 5, 6, 7}, rng);
  auto pooled = adaptive_avg_pool(r);
  for (std::int64_t p = 0; p < 15; ++p) {
    double m = 0.0;
    for (std::int64_t i = 0; i < 42; ++i) m += r.data()[static_cast<std::size_t>(p * 42 + i)];
    m /= 42.0;
    CHECK(pooled.data()[static_cast<std::size_t>(p)] == doctest::Approx(m).epsilon(1e-12));
  }
}

TEST_CASE("batchnorm: normalized input passes through, gamma=0 gives beta") {
  // Build a batch that is already zero-mean unit-variance per channel.
  std::vector<double> data = {-1, 1, -1, 1, -1, 1, -1, 1};
  auto x = Tensor::from_data({2, 1, 2, 2}, data);
  auto gamma = Tensor::full({1}, 1.0);
  auto beta = Tensor::zeros({1});
  auto rm = Tensor::zeros({1});
  auto rv = Tensor::full({1}, 1.0);
  auto y = batchnorm(x, gamma, beta, rm, rv, /*training=*/true);
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(std::abs(y.data()[i] - data[i]) < 1e-5);
  }

  auto gamma0 = Tensor::zeros({1});
  auto beta2 = Tensor::full({1}, 2.0);
  auto y2 = batchnorm(x, gamma0, beta2, rm, rv, true);
  for (double v : y2.data()) CHECK(v == doctest::Approx(2.0));
}

TEST_CASE("batchnorm: random batch matches direct statistics oracle") {
  Rng rng(7);
  auto x = random_tensor({4, 3, 5, 5}, rng, false, 2.0);
  auto gamma = random_tensor({3}, rng);
  auto beta = random_tensor({3}, rng);
  auto rm = Tensor::zeros({3});
  auto rv = Tensor::full({3}, 1.0);
  auto y = batchnorm(x, gamma, beta, rm, rv, true);

  const std::int64_t count = 4 * 25;
  for (std::int64_t c = 0; c < 3; ++c) {
    double m = 0.0;
    for (std::int64_t n = 0; n < 4; ++n)
      for (std::int64_t i = 0; i < 25; ++i)
        m += x.data()[static_cast<std::size_t>((n * 3 + c) * 25 + i)];
    m /= count;
    double v = 0.0;
    for (std::int64_t n = 0; n < 4; ++n)
      for (std::int64_t i = 0; i < 25; ++i) {
        const double d = x.data()[static_cast<std::size_t>((n * 3 + c) * 25 + i)] - m;
        v += d * d;
      }
    v /= count;
    for (std::int64_t n = 0; n < 4; ++n)
      for (std::int64_t i = 0; i < 25; ++i) {
        const auto idx = static_cast<std::size_t>((n * 3 + c) * 25 + i);
        const double expect = gamma.data()[static_cast<std::size_t>(c)] *
                                  (x.data()[idx] - m) / std::sqrt(v + 1e-5) +
                              beta.data()[static_cast<std::size_t>(c)];
        CHECK(y.data()[idx] == doctest::Approx(expect).epsilon(1e-10));
      }
    // Running stats: momentum 0.1 from (0, 1) initialization.
    CHECK(rm.data()[static_cast<std::size_t>(c)] == doctest::Approx(0.1 * m).epsilon(1e-10));
    CHECK(rv.data()[static_cast<std::size_t>(c)] == doctest::Approx(0.9 + 0.1 * v).epsilon(1e-10));
  }

  CHECK_THROWS_AS(batchnorm(x, gamma, beta, Tensor(), Tensor(), false), StateError);
}

TEST_CASE("backward: x^2 and sigmoid'(0)") {
  auto x = Tensor::scalar(3.0, /*requires_grad=*/true);
  auto y = mul(x, x);
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(6.0));

  auto z = Tensor::scalar(0.0, true);
  auto s = sigmoid(z);
  s.backward();
  CHECK(z.grad()[0] == doctest::Approx(0.25));

  // Graph is consumed after backward.
  CHECK_THROWS_AS(s.backward(), StateError);

  auto vec = Tensor::from_data({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(mul(vec, vec).backward(), ShapeError);
}

TEST_CASE("grad check: every primitive op") {
  Rng rng(8);
  const double tol = 1e-4;

  for (int seed = 0; seed < 5; ++seed) {
    Rng local = rng.fork(static_cast<std::uint64_t>(seed));

    auto x = random_tensor({2, 3, 6, 6}, local, true);
    auto w = random_tensor({4, 3, 3, 3}, local, true);
    auto b = random_tensor({4}, local, true);
    auto report = grad_check(
        [&] { return mean(square(conv2d(x, w, b, 2, 1))); },
        {{"x", x}, {"w", w}, {"b", b}});
    CHECK(report.pass());

    auto a2 = random_tensor({2, 4}, local, true);
    auto w2 = random_tensor({3, 4}, local, true);
    auto b2 = random_tensor({3}, local, true);
    report = grad_check([&] { return mean(square(linear(a2, w2, b2))); },
                        {{"x", a2}, {"w", w2}, {"b", b2}});
    CHECK(report.pass());

    auto u = random_tensor({2, 3, 4, 4}, local, true);
    auto v = random_tensor({2, 3, 1, 1}, local, true);
    report = grad_check([&] { return mean(mul(sigmoid(u), v)); }, {{"u", u}, {"v", v}});
    CHECK(report.pass());

    auto r = random_tensor({1, 2, 5, 5}, local, true);
    report = grad_check([&] { return mean(square(relu(r))); }, {{"r", r}});
    CHECK(report.pass());

    report = grad_check([&] { return mean(square(avg_pool(u, 2, 2))); }, {{"u", u}});
    CHECK(report.pass());
    report = grad_check([&] { return mean(square(max_pool(u, 2, 2))); }, {{"u", u}});
    CHECK(report.pass());
    report = grad_check([&] { return mean(square(adaptive_avg_pool(u))); }, {{"u", u}});
    CHECK(report.pass());
    report = grad_check([&] { return mean(square(sum_channels(u))); }, {{"u", u}});
    CHECK(report.pass());

    auto g = random_tensor({3}, local, true);
    auto be = random_tensor({3}, local, true);
    auto xb = random_tensor({3, 3, 4, 4}, local, true);
    auto rm = Tensor::zeros({3});
    auto rv = Tensor::full({3}, 1.0);
    report = grad_check(
        [&] { return mean(square(batchnorm(xb, g, be, rm, rv, true))); },
        {{"x", xb}, {"gamma", g}, {"beta", be}});
    CHECK(report.pass());
    report = grad_check(
        [&] { return mean(square(batchnorm(xb, g, be, rm, rv, false))); },
        {{"x", xb}, {"gamma", g}, {"beta", be}});
    CHECK(report.pass());

    auto c1 = random_tensor({2, 2, 3, 3}, local, true);
    auto c2 = random_tensor({2, 3, 3, 3}, local, true);
    report = grad_check([&] { return mean(square(concat_channels({c1, c2}))); },
                        {{"c1", c1}, {"c2", c2}});
    CHECK(report.pass());

    auto scores = random_tensor({1, 1, 6, 6}, local, true);
    std::vector<double> zdata(36);
    for (double& z : zdata) z = local.uniform();
    auto labels = Tensor::from_data({1, 1, 6, 6}, std::move(zdata));
    report = grad_check([&] { return mean(square(hinge_residual(scores, labels))); },
                        {{"s", scores}});
    CHECK(report.pass());
  }
}

TEST_CASE("region_pool: constant map, aligned box, gradients") {
  // Constant feature map: any box pools to the constant.
  auto feat = Tensor::full({1, 2, 8, 8}, 3.25);
  auto box = box_to_tensor(BBox{1.3, 2.1, 4.4, 3.7});
  auto out = region_pool(feat, box, 3, 3, 1.0);
  for (double v : out.data()) CHECK(v == doctest::Approx(3.25));

  // Box aligned with a 2x2 block, out_size 1, sampled at cell centers.
  auto f = Tensor::from_data({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  auto aligned = box_to_tensor(BBox{0.0, 0.0, 2.0, 2.0});
  auto pooled = region_pool(f, aligned, 1, 1, 1.0, 2);
  CHECK(pooled.item() == doctest::Approx(2.5));

  auto degenerate = box_to_tensor(BBox{0.0, 0.0, 0.0, 2.0});
  CHECK_THROWS_AS(region_pool(f, degenerate, 1, 1, 1.0), BoxError);
}

TEST_CASE("region_pool: box-coordinate gradients match finite differences") {
  Rng rng(19);
  for (int seed = 0; seed < 10; ++seed) {
    Rng local = rng.fork(static_cast<std::uint64_t>(seed));
    auto feat = random_tensor({1, 3, 12, 12}, local, true);
    auto box = Tensor::from_data(
        {1, 4},
        {local.uniform(1.0, 4.0), local.uniform(1.0, 4.0), local.uniform(2.0, 6.0),
         local.uniform(2.0, 6.0)},
        true);
    auto report = grad_check(
        [&] { return mean(square(region_pool(feat, box, 4, 4, 0.5))); },
        {{"features", feat}, {"box", box}});
    CHECK(report.pass());
    if (!report.pass()) {
      for (const auto& e : report.entries) {
        MESSAGE(e.name, " max_err=", e.max_error);
      }
    }
  }
}

TEST_CASE("module registry and checkpoint round-trip") {
  struct Net : Module {
    Conv2d* conv;
    BatchNorm2d* bn;
    Linear* fc;
    explicit Net(Rng& rng) {
      conv = &add_module("conv", std::make_unique<Conv2d>(1, 2, 3, 1, 1, true, rng));
      bn = &add_module("bn", std::make_unique<BatchNorm2d>(2));
      fc = &add_module("fc", std::make_unique<Linear>(4, 2, true, rng));
    }
  };

  Rng rng(31);
  Net net(rng);
  auto names = net.named_state();
  std::vector<std::string> keys;
  for (const auto& nt : names) keys.push_back(nt.name);
  CHECK(keys == std::vector<std::string>{"conv.weight", "conv.bias", "bn.gamma", "bn.beta",
                                         "bn.running_mean", "bn.running_var", "fc.weight",
                                         "fc.bias"});

  const auto path = std::filesystem::temp_directory_path() / "fetrack_ckpt_test.fetw";
  save_checkpoint(path, net.named_state());

  Rng rng2(99);
  Net other(rng2);
  load_state(other, path);
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto a = names[i].tensor.data();
    const auto b = other.named_state()[i].tensor.data();
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == b[k]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("Adam: zero learning rate leaves parameters unchanged") {
  Rng rng(41);
  auto p = random_tensor({4}, rng, true);
  const std::vector<double> before(p.data().begin(), p.data().end());
  auto loss = mean(square(p));
  loss.backward();
  AdamOptimizer adam;
  adam.step({{"p", p}}, {0.0});
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(p.data()[i] == before[i]);

  // And a real step moves against the gradient.
  p.zero_grad();
  mean(square(p)).backward();
  adam.step({{"p", p}}, {0.01});
  double norm_after = 0.0, norm_before = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    norm_before += before[i] * before[i];
    norm_after += p.data()[i] * p.data()[i];
  }
  CHECK(norm_after < norm_before);
}
