#include <doctest.h>

#include "icehrnet/autograd.hpp"
#include "icehrnet/error.hpp"
#include "test_util.hpp"

using namespace icehrnet;
using namespace icehrnet::nn;
using testutil::random_tensor;

namespace {

Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor* b, ConvGeometry g) {
  const Shape xs = x.shape(), ws = w.shape();
  const int oh = conv_output_extent(xs.h, ws.h, g), ow = conv_output_extent(xs.w, ws.w, g);
  Tensor out({xs.n, ws.n, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < ws.n; ++o)
      for (int y = 0; y < oh; ++y)
        for (int x0 = 0; x0 < ow; ++x0) {
          double acc = b ? (*b)[o] : 0.0;
          for (int c = 0; c < xs.c; ++c)
            for (int ky = 0; ky < ws.h; ++ky)
              for (int kx = 0; kx < ws.w; ++kx) {
                const int iy = y * g.stride - g.padding + ky * g.dilation;
                const int ix = x0 * g.stride - g.padding + kx * g.dilation;
                if (iy < 0 || ix < 0 || iy >= xs.h || ix >= xs.w) continue;
                acc += x.at(n, c, iy, ix) * w.at(o, c, ky, kx);
              }
          out.at(n, o, y, x0) = acc;
        }
  return out;
}

std::vector<std::uint8_t> random_labels(std::size_t n, int classes, Rng& rng, double ignore_p = 0.0) {
  std::vector<std::uint8_t> l(n);
  for (auto& v : l) v = rng.bernoulli(ignore_p) ? kIgnoreLabel : static_cast<std::uint8_t>(rng.index(classes));
  return l;
}

}  // namespace

TEST_CASE("conv2d matches a direct loop for assorted geometries") {
  Rng rng(1);
  const ConvGeometry geoms[] = {{1, 0, 1}, {1, 1, 1}, {2, 1, 1}, {1, 2, 2}, {2, 3, 3}, {1, 0, 1}};
  const int kernels[] = {1, 3, 3, 3, 3, 3};
  for (int t = 0; t < 6; ++t) {
    const Tensor x = random_tensor({2, 3, 9, 7}, rng);
    const Tensor w = random_tensor({4, 3, kernels[t], kernels[t]}, rng);
    const Tensor b = random_tensor({1, 4, 1, 1}, rng);
    Tape tape(false);
    Var vx = tape.constant(x), vw = tape.constant(w), vb = tape.constant(b);
    const Tensor got = conv2d(vx, vw, &vb, geoms[t]).value();
    const Tensor want = naive_conv(x, w, &b, geoms[t]);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d rejects mismatched channels and empty outputs") {
  Tape tape(false);
  Var x = tape.constant(Tensor({1, 3, 4, 4}));
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor({2, 2, 3, 3})), nullptr, {}), ValidationError);
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor({2, 3, 5, 5})), nullptr, {}), ValidationError);
}

TEST_CASE("op gradients agree with central differences") {
  Rng rng(7);
  Parameter x{"x", random_tensor({2, 3, 6, 5}, rng), {}, true};
  Parameter w{"w", random_tensor({4, 3, 3, 3}, rng, 0.5), {}, true};
  Parameter b{"b", random_tensor({1, 4, 1, 1}, rng), {}, true};
  Parameter gamma{"g", random_tensor({1, 4, 1, 1}, rng), {}, true};
  Parameter beta{"bb", random_tensor({1, 4, 1, 1}, rng), {}, true};
  Parameter rm{"rm", Tensor({1, 4, 1, 1}), {}, false};
  Parameter rv{"rv", Tensor({1, 4, 1, 1}, 1.0), {}, false};
  const auto labels_full = random_labels(2 * 6 * 5, 4, rng, 0.2);

  SUBCASE("conv with bias, stride 1 and dilation 2") {
    for (ConvGeometry g : {ConvGeometry{1, 1, 1}, ConvGeometry{1, 2, 2}}) {
      auto r = testutil::grad_check(
          {&x, &w, &b},
          [&](Tape& t) {
            Var vb = t.param(b);
            return cross_entropy(conv2d(t.param(x), t.param(w), &vb, g), labels_full);
          },
          60, rng);
      CHECK(r.pass_rate() == 1.0);
    }
  }
  SUBCASE("strided conv") {
    const auto labels = random_labels(2 * 3 * 3, 4, rng);
    auto r = testutil::grad_check(
        {&x, &w},
        [&](Tape& t) { return cross_entropy(conv2d(t.param(x), t.param(w), nullptr, {2, 1, 1}), labels); }, 60, rng);
    CHECK(r.pass_rate() == 1.0);
  }
  SUBCASE("batch norm in training mode") {
    auto r = testutil::grad_check(
        {&x, &w, &gamma, &beta},
        [&](Tape& t) {
          Var y = conv2d(t.param(x), t.param(w), nullptr, {1, 1, 1});
          return cross_entropy(batch_norm(y, t.param(gamma), t.param(beta), rm, rv, {true}), labels_full);
        },
        80, rng);
    CHECK(r.pass_rate() == 1.0);
  }
  SUBCASE("relu, add and concat") {
    Parameter y{"y", random_tensor({2, 1, 6, 5}, rng), {}, true};
    auto r = testutil::grad_check(
        {&x, &y},
        [&](Tape& t) {
          Var vx = t.param(x);
          Var parts[] = {relu(add(vx, vx)), t.param(y)};
          return cross_entropy(concat_channels(parts), labels_full);
        },
        60, rng);
    CHECK(r.pass_rate() >= 0.98);  // relu kinks
  }
  SUBCASE("bilinear resize up and down") {
    for (auto [h, wd] : {std::pair{11, 9}, std::pair{3, 2}}) {
      const auto labels = random_labels(2 * h * wd, 3, rng);
      auto r = testutil::grad_check(
          {&x}, [&](Tape& t) { return cross_entropy(resize_bilinear(t.param(x), h, wd), labels); }, 60, rng);
      CHECK(r.pass_rate() == 1.0);
    }
  }
  SUBCASE("global pooling and mean") {
    const auto labels = random_labels(2, 3, rng);
    auto r = testutil::grad_check(
        {&x}, [&](Tape& t) { return cross_entropy(global_avg_pool(t.param(x)), labels); }, 40, rng);
    CHECK(r.pass_rate() == 1.0);
    Tape t;
    Var m = mean_all(t.param(x));
    x.grad = Tensor(x.value.shape());
    t.backward(m);
    for (double g : x.grad.values()) CHECK(g == doctest::Approx(1.0 / x.value.size()));
  }
}

TEST_CASE("cross entropy ignores 255 and rejects bad labels") {
  Tape tape(false);
  Tensor logits({1, 2, 1, 2});
  logits.at(0, 0, 0, 0) = 2.0;
  logits.at(0, 1, 0, 0) = 0.0;
  const std::uint8_t labels[] = {0, 255};
  const double got = cross_entropy(tape.constant(logits), labels).value()[0];
  CHECK(got == doctest::Approx(std::log1p(std::exp(-2.0))));
  const std::uint8_t all_ignored[] = {255, 255};
  CHECK_THROWS_AS(cross_entropy(tape.constant(logits), all_ignored), ValidationError);
  const std::uint8_t out_of_range[] = {0, 2};
  CHECK_THROWS_AS(cross_entropy(tape.constant(logits), out_of_range), ValidationError);
}

TEST_CASE("batch norm updates running statistics with momentum 0.1") {
  Rng rng(3);
  Tape tape;
  const Tensor x = random_tensor({4, 2, 3, 3}, rng, 2.0);
  Parameter rm{"rm", Tensor({1, 2, 1, 1}), {}, false}, rv{"rv", Tensor({1, 2, 1, 1}, 1.0), {}, false};
  batch_norm(tape.constant(x), tape.constant(Tensor({1, 2, 1, 1}, 1.0)), tape.constant(Tensor({1, 2, 1, 1})), rm, rv,
             {true});
  for (int c = 0; c < 2; ++c) {
    double mean = 0, sq = 0;
    const int count = 4 * 9;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) mean += x.plane(n, c)[i];
    mean /= count;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) sq += (x.plane(n, c)[i] - mean) * (x.plane(n, c)[i] - mean);
    CHECK(rm.value[c] == doctest::Approx(0.1 * mean));
    CHECK(rv.value[c] == doctest::Approx(0.9 + 0.1 * sq / (count - 1)));
  }
}

TEST_CASE("resize to the same size is the identity and half-pixel centers hold") {
  Tape tape(false);
  Tensor x({1, 1, 1, 2});
  x[0] = 0.0;
  x[1] = 4.0;
  Var v = tape.constant(x);
  CHECK(resize_bilinear(v, 1, 2).value()[1] == 4.0);
  const Tensor up = resize_bilinear(v, 1, 4).value();
  // Output centers map to source x = -0.25, 0.25, 0.75, 1.25 (clamped).
  CHECK(up[0] == doctest::Approx(0.0));
  CHECK(up[1] == doctest::Approx(1.0));
  CHECK(up[2] == doctest::Approx(3.0));
  CHECK(up[3] == doctest::Approx(4.0));
}

TEST_CASE("backward requires a scalar root") {
  Tape tape;
  Parameter p{"p", Tensor({1, 1, 2, 2}, 1.0), {}, true};
  Var v = tape.param(p);
  CHECK_THROWS(tape.backward(relu(v)));
}
