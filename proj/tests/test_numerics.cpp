#include "test_util.hpp"

#include "eradiff/adam.hpp"

#include <doctest.h>

using namespace eradiff;
using testutil::gradient_error;
using testutil::random_tensor;
using testutil::T;

namespace {

using Builder = std::function<T(const std::vector<T>&)>;

struct Primitive {
  const char* name;
  std::function<std::vector<T>(Rng&)> inputs;
  Builder f;
};

std::vector<Primitive> primitives() {
  return {
      {"add", [](Rng& r) { return std::vector<T>{random_tensor(r, {3, 4}), random_tensor(r, {3, 4})}; },
       [](const std::vector<T>& x) { return add(x[0], x[1]); }},
      {"sub", [](Rng& r) { return std::vector<T>{random_tensor(r, {5}), random_tensor(r, {5})}; },
       [](const std::vector<T>& x) { return sub(x[0], x[1]); }},
      {"mul", [](Rng& r) { return std::vector<T>{random_tensor(r, {2, 3}), random_tensor(r, {2, 3})}; },
       [](const std::vector<T>& x) { return mul(x[0], x[1]); }},
      {"scale", [](Rng& r) { return std::vector<T>{random_tensor(r, {4})}; },
       [](const std::vector<T>& x) { return scale(x[0], -1.7); }},
      {"silu", [](Rng& r) { return std::vector<T>{random_tensor(r, {6})}; },
       [](const std::vector<T>& x) { return silu(x[0]); }},
      {"sum", [](Rng& r) { return std::vector<T>{random_tensor(r, {2, 2})}; },
       [](const std::vector<T>& x) { return sum(mul(x[0], x[0])); }},
      {"mean", [](Rng& r) { return std::vector<T>{random_tensor(r, {7})}; },
       [](const std::vector<T>& x) { return mean(mul(x[0], x[0])); }},
      {"reshape", [](Rng& r) { return std::vector<T>{random_tensor(r, {2, 6})}; },
       [](const std::vector<T>& x) { return mul(reshape(x[0], {3, 4}), reshape(x[0], {3, 4})); }},
      {"slice", [](Rng& r) { return std::vector<T>{random_tensor(r, {2, 5, 3})}; },
       [](const std::vector<T>& x) { return slice(x[0], 1, 1, 3); }},
      {"concat_channels",
       [](Rng& r) { return std::vector<T>{random_tensor(r, {2, 1, 2, 2}), random_tensor(r, {2, 3, 2, 2})}; },
       [](const std::vector<T>& x) { return concat_channels<double>({x[0], x[1]}); }},
      {"matmul", [](Rng& r) { return std::vector<T>{random_tensor(r, {3, 4}), random_tensor(r, {4, 2})}; },
       [](const std::vector<T>& x) { return matmul(x[0], x[1]); }},
      {"matmul_batched",
       [](Rng& r) { return std::vector<T>{random_tensor(r, {2, 3, 4}), random_tensor(r, {2, 4, 2})}; },
       [](const std::vector<T>& x) { return matmul(x[0], x[1]); }},
      {"transpose_last2", [](Rng& r) { return std::vector<T>{random_tensor(r, {2, 3, 4})}; },
       [](const std::vector<T>& x) { return transpose_last2(x[0]); }},
      {"linear",
       [](Rng& r) {
         return std::vector<T>{random_tensor(r, {2, 3, 4}), random_tensor(r, {5, 4}), random_tensor(r, {5})};
       },
       [](const std::vector<T>& x) { return linear(x[0], x[1], x[2]); }},
      {"softmax_lastdim", [](Rng& r) { return std::vector<T>{random_tensor(r, {3, 5})}; },
       [](const std::vector<T>& x) { return softmax_lastdim(x[0]); }},
      {"masked_fill", [](Rng& r) { return std::vector<T>{random_tensor(r, {2, 3})}; },
       [](const std::vector<T>& x) {
         MaskBits m(6);
         m << 0, 1, 0, 0, 1, 1;
         return masked_fill(x[0], m, -3.0);
       }},
      {"conv2d_s1p1",
       [](Rng& r) {
         return std::vector<T>{random_tensor(r, {2, 2, 5, 5}), random_tensor(r, {3, 2, 3, 3}), random_tensor(r, {3})};
       },
       [](const std::vector<T>& x) { return conv2d(x[0], x[1], x[2], 1, 1); }},
      {"conv2d_s2p1",
       [](Rng& r) {
         return std::vector<T>{random_tensor(r, {1, 3, 6, 6}), random_tensor(r, {2, 3, 3, 3}), random_tensor(r, {2})};
       },
       [](const std::vector<T>& x) { return conv2d(x[0], x[1], x[2], 2, 1); }},
      {"group_norm_lite",
       [](Rng& r) {
         return std::vector<T>{random_tensor(r, {2, 3, 3, 3}), random_tensor(r, {3}), random_tensor(r, {3})};
       },
       [](const std::vector<T>& x) { return group_norm_lite(x[0], x[1], x[2]); }},
      {"upsample_nearest2x", [](Rng& r) { return std::vector<T>{random_tensor(r, {1, 2, 3, 3})}; },
       [](const std::vector<T>& x) { return upsample_nearest2x(x[0]); }},
      {"add_channel_bias",
       [](Rng& r) { return std::vector<T>{random_tensor(r, {2, 3, 2, 2}), random_tensor(r, {2, 3})}; },
       [](const std::vector<T>& x) { return add_channel_bias(x[0], x[1]); }},
  };
}

}  // namespace

TEST_CASE("every primitive's backward matches central differences over 50 seeds") {
  for (const auto& p : primitives()) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng rng(derive_seed(seed, {17}));
      worst = std::max(worst, gradient_error(p.f, p.inputs(rng), rng));
    }
    INFO(p.name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("softmax_lastdim examples and row sums") {
  const T y = softmax_lastdim(T({2}, (T::Array(2) << 0, 0).finished()));
  CHECK(y[0] == 0.5);
  CHECK(y[1] == 0.5);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const T s = softmax_lastdim(random_tensor(rng, {4, 9}, false, 5.0));
    CHECK(s.values().minCoeff() >= 0.0);
    for (int r = 0; r < 4; ++r) CHECK(std::abs(s.values().segment(r * 9, 9).sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("matmul with the identity returns the other operand") {
  Rng rng(5);
  const T a = random_tensor(rng, {3, 3}, false);
  T::Array eye = T::Array::Zero(9);
  eye(0) = eye(4) = eye(8) = 1.0;
  CHECK((matmul(T({3, 3}, eye), a).values() == a.values()).all());
}

TEST_CASE("3x3 all-ones kernel on an all-ones 4x4 image") {
  const T x = T::constant({1, 1, 4, 4}, 1.0);
  const T w = T::constant({1, 1, 3, 3}, 1.0);
  const T y = conv2d(x, w, T::zeros({1}), 1, 1);
  CHECK(y.shape() == Shape{1, 1, 4, 4});
  CHECK(y[1 * 4 + 1] == 9.0);
  CHECK(y[2 * 4 + 2] == 9.0);
  CHECK(y[0] == 4.0);  // corner sees a 2x2 window
}

TEST_CASE("backward examples") {
  SUBCASE("sum of squares") {
    const T x({2}, (T::Array(2) << 1, 2).finished(), true);
    backward(sum(mul(x, x)));
    CHECK(x.grad()(0) == 2.0);
    CHECK(x.grad()(1) == 4.0);
  }
  SUBCASE("sum of softmax is constant") {
    Rng rng(1);
    const T x = random_tensor(rng, {6});
    backward(sum(softmax_lastdim(x)));
    CHECK(x.grad().abs().maxCoeff() <= 1e-15);
  }
  SUBCASE("random three-layer net against finite differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      std::vector<T> in{random_tensor(rng, {4, 6}), random_tensor(rng, {8, 6}), random_tensor(rng, {8}),
                        random_tensor(rng, {8, 8}), random_tensor(rng, {8}), random_tensor(rng, {2, 8}),
                        random_tensor(rng, {2})};
      auto net = [](const std::vector<T>& p) {
        return linear(silu(linear(silu(linear(p[0], p[1], p[2])), p[3], p[4])), p[5], p[6]);
      };
      CHECK(gradient_error(net, in, rng) < 1e-4);
    }
  }
  SUBCASE("repeated calls accumulate into leaves") {
    const T x({1}, (T::Array(1) << 3).finished(), true);
    const T loss = sum(mul(x, x));
    backward(loss);
    backward(loss);
    CHECK(x.grad()(0) == 12.0);
  }
  SUBCASE("non-scalar loss is rejected") {
    const T x = T::constant({2}, 1.0);
    CHECK_THROWS_AS(backward(x), ShapeError);
  }
  SUBCASE("every requires_grad input is populated") {
    Rng rng(2);
    const T a = random_tensor(rng, {3}), b = random_tensor(rng, {3});
    backward(sum(mul(a, b)));
    CHECK(a.has_grad());
    CHECK(b.has_grad());
  }
}

TEST_CASE("backward replays ops in exact reverse creation order") {
  Rng rng(9);
  const T x = random_tensor(rng, {2, 3});
  const T w = random_tensor(rng, {4, 3});
  const T h = linear(x, w, T::zeros({4}, true));
  const T s = silu(h);
  const T y = mean(mul(s, s));
  const ComputationRecord rec = backward(y);
  REQUIRE(rec.sequence.size() >= 4);
  for (std::size_t i = 1; i < rec.sequence.size(); ++i) CHECK(rec.sequence[i] < rec.sequence[i - 1]);
  CHECK(rec.ops.front() == std::string("mean"));
}

TEST_CASE("shape errors name the op and the shapes") {
  const T a = T::zeros({2, 3}), b = T::zeros({3, 3});
  try {
    add(a, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(T::zeros({2, 3}), T::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(conv2d(T::zeros({1, 2, 4, 4}), T::zeros({1, 3, 3, 3}), T::zeros({1})), ShapeError);
  CHECK_THROWS_AS(T({2, 2}, T::Array::Zero(3)), ShapeError);
}

TEST_CASE("non-finite values are detected explicitly") {
  T::Array v(2);
  v << 1.0, std::numeric_limits<double>::quiet_NaN();
  const T t({2}, v);
  CHECK_FALSE(all_finite(t));
  CHECK_THROWS_AS(check_finite(t, "probe"), std::domain_error);
}

TEST_CASE("finite_difference_gradient") {
  Rng rng(4);
  const T x = random_tensor(rng, {5}, false);
  std::function<double(const T&)> f_sum = [](const T& v) { return v.values().sum(); };
  CHECK((finite_difference_gradient(f_sum, x, 1e-5).values() - 1.0).abs().maxCoeff() < 1e-9);

  std::function<double(const T&)> sq = [](const T& v) { return v[0] * v[0]; };
  CHECK(std::abs(finite_difference_gradient(sq, T::scalar(3.0), 1e-5)[0] - 6.0) < 1e-8);

  CHECK_THROWS_AS(finite_difference_gradient(sq, x, 0.0), std::invalid_argument);
  int calls = 0;
  std::function<double(const T&)> flaky = [&](const T&) { return static_cast<double>(++calls); };
  CHECK_THROWS_AS(finite_difference_gradient(flaky, x, 1e-5), std::runtime_error);
}

TEST_CASE("forward evaluation is bit-deterministic") {
  auto run = [] {
    Rng rng(77);
    const T x = random_tensor(rng, {2, 3, 6, 6}), w = random_tensor(rng, {4, 3, 3, 3}), b = random_tensor(rng, {4});
    return group_norm_lite(silu(conv2d(x, w, b, 1, 1)), T::constant({4}, 1.0), T::zeros({4})).values();
  };
  CHECK((run() == run()).all());
}

TEST_CASE("adam first step moves by lr against the gradient sign") {
  std::vector<T> p{T({3}, (T::Array(3) << 1.0, -2.0, 0.5).finished(), true)};
  AdamState<double> st(p, {0.01, 0.9, 0.999, 1e-8});
  const T::Array before = p[0].values();
  backward(sum(mul(p[0], T({3}, (T::Array(3) << 3.0, -0.2, 1e-3).finished()))));
  adam_step(p, st);
  const T::Array moved = p[0].values() - before;
  CHECK(moved(0) == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(moved(1) == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(moved(2) == doctest::Approx(-0.01).epsilon(1e-4));
  CHECK(st.step == 1);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
  std::vector<T> p{T({2}, (T::Array(2) << 4.0, -1.0).finished(), true)};
  AdamState<double> st(p, {});
  const T::Array before = p[0].values();
  for (int i = 0; i < 10; ++i) {
    p[0].zero_grad();
    backward(sum(scale(p[0], 0.0)));
    adam_step(p, st);
    CHECK(st.step == i + 1);
  }
  CHECK((p[0].values() == before).all());
}

TEST_CASE("adam minimises (theta - 5)^2") {
  std::vector<T> p{T::scalar(0.0, true)};
  AdamState<double> st(p, {0.1, 0.9, 0.999, 1e-8});
  const T five = T::scalar(5.0);
  for (int i = 0; i < 500; ++i) {
    p[0].zero_grad();
    const T d = sub(p[0], five);
    backward(mul(d, d));
    adam_step(p, st);
  }
  CHECK(std::abs(p[0].item() - 5.0) < 0.01);
}

TEST_CASE("adam rejects non-finite gradients before mutating") {
  std::vector<T> p{T({2}, (T::Array(2) << 1.0, 2.0).finished(), true), T::scalar(1.0, true)};
  AdamState<double> st(p, {});
  backward(sum(mul(p[1], p[1])));
  backward(sum(scale(p[0], std::numeric_limits<double>::infinity())));
  const double before = p[1].item();
  CHECK_THROWS_AS(adam_step(p, st), std::domain_error);
  CHECK(p[1].item() == before);
  CHECK(st.step == 0);
  CHECK(st.m[1](0) == 0.0);
}
