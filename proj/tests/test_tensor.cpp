#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>

#include "hitdvae/checkpoint.hpp"
#include "hitdvae/gradcheck.hpp"
#include "hitdvae/optim.hpp"
#include "hitdvae/random.hpp"
#include "hitdvae/tensor.hpp"

using namespace hitdvae;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

double central_difference(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                          std::size_t i, double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double up = f(x);
  x[i] = x0 - h;
  const double down = f(x);
  return (up - down) / (2 * h);
}

}  // namespace

TEST_CASE("forward ops on small literals") {
  const Tensor m = matmul(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::matrix({{3}, {4}}));
  CHECK(m.shape() == Shape{2, 1});
  CHECK(m[0] == 3.0);
  CHECK(m[1] == 4.0);

  const Tensor s = softmax(Tensor::from({3}, {0, 0, 0}), 0);
  for (double v : s.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  CHECK(sum(Tensor::full({2, 2}, 1.0)).item() == 4.0);
}

TEST_CASE("broadcasting, concat and slice") {
  const Tensor a = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  const Tensor b = Tensor::matrix({{10, 20, 30}});
  const Tensor c = add(a, b);
  CHECK(c.at(1, 2) == 36.0);
  const Tensor col = Tensor::matrix({{1}, {2}});
  CHECK(mul(a, col).at(1, 0) == 8.0);

  const Tensor cat = concat({a, b}, 0);
  CHECK(cat.shape() == Shape{3, 3});
  CHECK(cat.at(2, 1) == 20.0);
  const Tensor cat1 = concat({a, col}, 1);
  CHECK(cat1.shape() == Shape{2, 4});
  CHECK(cat1.at(1, 3) == 2.0);
  CHECK(slice(cat1, 1, 1, 3).at(1, 1) == 6.0);
  CHECK(sum(a, 0).values()[2] == 9.0);
  CHECK(mean(a, 1, true).shape() == Shape{2, 1});
}

TEST_CASE("shape mismatches are rejected with both shapes named") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4, 5});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(concat({a, b}, 0), ShapeError);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("backward examples") {
  SUBCASE("x^2 at 3") {
    Tensor x = Tensor::scalar(3.0, true);
    backward(mul(x, x));
    CHECK(x.grad()[0] == 6.0);
  }
  SUBCASE("sum relu") {
    Tensor x = Tensor::from({2}, {-1.0, 2.0}, true);
    backward(sum(relu(x)));
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
  }
  SUBCASE("softmax cross-entropy at uniform logits") {
    // Frozen from a central-difference oracle below.
    const std::vector<double> expected{-2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    auto ce = [](const std::vector<double>& z) {
      double mx = std::max({z[0], z[1], z[2]});
      double s = 0;
      for (double v : z) s += std::exp(v - mx);
      return -(z[0] - mx - std::log(s));
    };
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(central_difference(ce, {0, 0, 0}, i, 1e-6) == doctest::Approx(expected[i]).epsilon(1e-8));
    }
    Tensor logits = Tensor::from({1, 3}, {0, 0, 0}, true);
    backward(neg(slice(log_softmax(logits, 1), 1, 0, 1)));
    for (std::size_t i = 0; i < 3; ++i) CHECK(logits.grad()[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
  SUBCASE("non-scalar loss rejected") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(mul(x, x)), ShapeError);
  }
  SUBCASE("second backward accumulates") {
    Tensor x = Tensor::scalar(2.0, true);
    backward(mul(x, x));
    backward(mul(x, x));
    CHECK(x.grad()[0] == 8.0);
  }
  SUBCASE("tensors without requires-grad never get a gradient") {
    Tensor x = Tensor::scalar(2.0, true);
    Tensor c = Tensor::scalar(5.0);
    backward(mul(x, c));
    CHECK_FALSE(c.has_grad());
  }
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(7);
  Tensor x = random_tensor({3, 4}, rng);
  x = Tensor::from(x.shape(), {x.values().begin(), x.values().end()}, true);
  const Tensor w = random_tensor({4, 2}, rng);
  auto l1 = [&] { return sum(tanh(matmul(x, w))); };
  auto l2 = [&] { return sum(square(x)); };
  backward(add(l1(), l2()));
  const std::vector<double> joint(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(l1());
  backward(l2());
  for (std::size_t i = 0; i < joint.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(joint[i]).epsilon(1e-14));
}

TEST_CASE("every primitive matches central differences") {
  Rng rng(11);
  const Tensor w = random_tensor({4, 3}, rng);
  const Tensor left = random_tensor({3, 3}, rng);
  const std::vector<std::pair<const char*, std::function<Tensor(const Tensor&)>>> cases = {
      {"add", [&](const Tensor& x) { return sum(square(add(x, row(x, 0)))); }},
      {"sub", [&](const Tensor& x) { return sum(square(sub(x, slice(x, 1, 0, 1)))); }},
      {"mul", [&](const Tensor& x) { return sum(mul(x, x)); }},
      {"div", [&](const Tensor& x) { return sum(div(x, add_scalar(square(x), 1.0))); }},
      {"matmul", [&](const Tensor& x) { return sum(square(matmul(x, w))); }},
      {"transpose", [&](const Tensor& x) { return sum(matmul(transpose(x), x)); }},
      {"apply_left", [&](const Tensor& x) { return sum(square(apply_left(left, reshape(x, {1, 3, 4})))); }},
      {"concat", [&](const Tensor& x) { return sum(square(concat({x, scale(x, 2.0)}, 1))); }},
      {"exp", [&](const Tensor& x) { return sum(exp(x)); }},
      {"log", [&](const Tensor& x) { return sum(log(add_scalar(square(x), 0.5))); }},
      {"tanh", [&](const Tensor& x) { return sum(tanh(x)); }},
      {"sigmoid", [&](const Tensor& x) { return sum(sigmoid(x)); }},
      {"relu", [&](const Tensor& x) { return sum(mul(relu(x), x)); }},
      {"sqrt", [&](const Tensor& x) { return sum(sqrt(add_scalar(square(x), 0.1))); }},
      {"abs", [&](const Tensor& x) { return sum(abs(x)); }},
      {"acos", [&](const Tensor& x) { return sum(acos(scale(x, 0.9))); }},
      {"softmax", [&](const Tensor& x) { return sum(mul(softmax(x, 1), x)); }},
      {"softmax0", [&](const Tensor& x) { return sum(square(softmax(x, 0))); }},
      {"log_softmax", [&](const Tensor& x) { return sum(mul(log_softmax(x, 1), x)); }},
      {"layer_norm", [&](const Tensor& x) { return sum(mul(layer_norm(x), x)); }},
      {"mean_axis", [&](const Tensor& x) { return sum(square(mean(x, 0))); }},
      {"l2_norm", [&](const Tensor& x) { return l2_norm(x); }},
  };
  for (const auto& [name, f] : cases) {
    CAPTURE(name);
    const Tensor point = random_tensor({3, 4}, rng);
    const auto report = grad_check(f, point, 1e-5);
    CHECK(report.finite);
    CHECK(report.max_rel_error < 1e-6);
  }
}

TEST_CASE("grad-check examples") {
  SUBCASE("x^2 at 3") {
    const auto r = grad_check([](const Tensor& x) { return sum(square(x)); }, Tensor::scalar(3.0), 1e-5);
    CHECK(r.max_rel_error < 1e-7);
  }
  SUBCASE("sum sigmoid on a random 8-vector") {
    Rng rng(3);
    const auto r = grad_check([](const Tensor& x) { return sum(sigmoid(x)); }, random_tensor({8}, rng, -2, 2), 1e-5);
    CHECK(r.max_rel_error < 1e-6);
  }
  SUBCASE("non-finite values are reported with the coordinate") {
    const auto r = grad_check([](const Tensor& x) { return sum(log(x)); }, Tensor::from({3}, {1.0, 1e-6, 2.0}), 1e-5);
    CHECK_FALSE(r.finite);
    CHECK(r.nonfinite_coordinate == 1);
  }
}

TEST_CASE("no-grad guard suppresses graph recording") {
  Tensor x = Tensor::scalar(1.0, true);
  NoGradGuard guard;
  CHECK_FALSE(mul(x, x).requires_grad());
}

TEST_CASE("grad sink keeps leaf gradients out of the leaves") {
  Tensor x = Tensor::scalar(3.0, true);
  GradSink sink;
  backward(mul(x, x), &sink);
  CHECK_FALSE(x.has_grad());
  CHECK(sink.get(x.impl().get())[0] == 6.0);
}

TEST_CASE("adam") {
  SUBCASE("first step moves by the learning rate") {
    Tensor x = Tensor::scalar(1.0, true);
    ParamList p{{"x", x}};
    AdamState st(0.001);
    backward(square(x));
    adam_step(p, st);
    CHECK(x.item() == doctest::Approx(0.999).epsilon(1e-9));
    CHECK_FALSE(x.has_grad());
  }
  SUBCASE("zero gradient leaves the parameter unchanged") {
    Tensor x = Tensor::scalar(1.0, true);
    ParamList p{{"x", x}};
    AdamState st(0.001);
    x.add_to_grad(std::vector<double>{0.0});
    adam_step(p, st);
    CHECK(x.item() == 1.0);
  }
  SUBCASE("converges on x^2") {
    Tensor x = Tensor::scalar(1.0, true);
    ParamList p{{"x", x}};
    AdamState st(0.01);
    for (int i = 0; i < 2000; ++i) {
      backward(square(x));
      adam_step(p, st);
    }
    CHECK(std::fabs(x.item()) < 1e-2);
    CHECK(st.step == 2000);
  }
  SUBCASE("missing gradient rejected") {
    Tensor x = Tensor::scalar(1.0, true);
    ParamList p{{"x", x}};
    AdamState st;
    CHECK_THROWS_AS(adam_step(p, st), std::invalid_argument);
  }
  SUBCASE("deterministic given identical state") {
    auto run = [] {
      Tensor x = Tensor::from({3}, {0.3, -0.2, 1.5}, true);
      ParamList p{{"x", x}};
      AdamState st(0.05);
      for (int i = 0; i < 25; ++i) {
        backward(sum(mul(square(x), x)));
        adam_step(p, st);
      }
      return std::vector<double>(x.values().begin(), x.values().end());
    };
    CHECK(run() == run());
  }
}

TEST_CASE("gradient clipping bounds the global norm") {
  Tensor x = Tensor::from({2}, {0, 0}, true);
  ParamList p{{"x", x}};
  x.add_to_grad(std::vector<double>{30.0, 40.0});
  CHECK(clip_grad_norm(p, 5.0) == doctest::Approx(50.0));
  CHECK(grad_global_norm(p) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(5);
  Checkpoint ck;
  std::vector<double> a(17);
  for (double& v : a) v = rng.normal() * 1e-300;
  a[3] = -0.0;
  a[4] = 1.0 / 3.0;
  ck.put("alpha", {17}, a);
  ck.put("beta.weight", {2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  ck.meta()["note"] = "x";
  const auto bytes = ck.serialize();
  const Checkpoint back = Checkpoint::deserialize(bytes);
  CHECK(std::memcmp(back.get("alpha").values.data(), a.data(), a.size() * sizeof(double)) == 0);
  CHECK(back.get("beta.weight").shape == Shape{2, 3});
  CHECK(back.meta()["note"] == "x");
  CHECK(back.serialize() == bytes);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 8);
  CHECK_THROWS(Checkpoint::deserialize(truncated));
}
