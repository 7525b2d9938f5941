#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "dyncwe/tensor.hpp"

using namespace dyncwe;

namespace {

Tensor random_tensor(Shape shape, RandomStream& rng, bool requires_grad = false) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.values()) v = rng.gaussian(0.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("identity matmul returns its argument") {
  Tensor eye = Tensor::from_values({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  RandomStream rng(7);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor out = apply_primitive("matmul", {eye, a});
  REQUIRE(out.values() == a.values());
}

TEST_CASE("softmax of a constant row is uniform") {
  Tensor x = Tensor::from_values({3}, {2.5, 2.5, 2.5});
  Tensor p = apply_primitive("softmax_rows", {x});
  for (double v : p.values()) REQUIRE(v == Catch::Approx(1.0 / 3.0).margin(1e-15));
}

TEST_CASE("tanh at the origin") {
  Tensor x = Tensor::scalar(0.0);
  REQUIRE(apply_primitive("tanh", {x}).value() == 0.0);
}

TEST_CASE("shape mismatch is rejected with the offending shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 3});
  REQUIRE_THROWS_WITH(add(a, b), Catch::Matchers::ContainsSubstring("2x3") &&
                                     Catch::Matchers::ContainsSubstring("3x3"));
  REQUIRE_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), std::invalid_argument);
}

TEST_CASE("non-finite input is rejected") {
  Tensor a = Tensor::from_values({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  Tensor b = Tensor::from_values({2}, {1.0, 2.0});
  REQUIRE_THROWS_AS(add(a, b), std::invalid_argument);
  REQUIRE_THROWS_AS(apply_primitive("tanh", {a}), std::invalid_argument);
}

TEST_CASE("unknown primitive is rejected by name") {
  REQUIRE_THROWS_WITH(apply_primitive("frobnicate", {}),
                      Catch::Matchers::ContainsSubstring("frobnicate"));
}

TEST_CASE("gradient of sum of squares is 2x") {
  Tensor x = Tensor::from_values({4}, {1.0, -2.0, 0.5, 3.0}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = sum_sq(x);
    backpropagate(tape, loss);
  }
  for (std::size_t i = 0; i < x.size(); ++i)
    REQUIRE(x.grad()[i] == Catch::Approx(2.0 * x.values()[i]));
}

TEST_CASE("parameter outside the loss path gets zero gradient") {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
  Tensor p = Tensor::from_values({2}, {5.0, 5.0}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor dead = tanh_t(p);  // recorded but never reaches the loss
    (void)dead;
    Tensor loss = sum_sq(x);
    backpropagate(tape, loss);
  }
  REQUIRE(x.grad()[0] == Catch::Approx(2.0));
  REQUIRE(p.grad()[0] == 0.0);
  REQUIRE(p.grad()[1] == 0.0);
}

TEST_CASE("backpropagate rejects non-scalar loss") {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = tanh_t(x);
  REQUIRE_THROWS_AS(backpropagate(tape, y), std::invalid_argument);
}

TEST_CASE("random three-layer network matches finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RandomStream rng(derive_seed(1234, "net", seed));
    Tensor w1 = random_tensor({6, 8}, rng);
    Tensor w2 = random_tensor({8, 5}, rng);
    Tensor w3 = random_tensor({5, 1}, rng);
    Tensor x0 = random_tensor({2, 6}, rng);
    auto f = [&](const Tensor& x) {
      Tensor h1 = tanh_t(matmul(x, w1));
      Tensor h2 = tanh_t(matmul(h1, w2));
      return sum(matmul(h2, w3));
    };
    auto report = finite_difference_check(f, x0, 1e-5);
    REQUIRE(report.non_finite_coords.empty());
    REQUIRE(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("finite differences on exactly representable derivative") {
  Tensor x = Tensor::from_values({3}, {0.25, -0.5, 1.0});
  auto report = finite_difference_check([](const Tensor& t) { return sum_sq(t); }, x, 1e-5);
  REQUIRE(report.max_rel_error <= 1e-6);
}

TEST_CASE("finite differences on a constant function") {
  Tensor x = Tensor::from_values({3}, {1.0, 2.0, 3.0});
  auto report =
      finite_difference_check([](const Tensor&) { return Tensor::scalar(3.5); }, x, 1e-5);
  REQUIRE(report.max_rel_error == 0.0);
  REQUIRE(report.non_finite_coords.empty());
}

TEST_CASE("finite differences reports non-finite evaluations per coordinate") {
  Tensor x = Tensor::from_values({2}, {1e-9, 4.0});
  auto f = [](const Tensor& t) {
    TapeSuspend s;  // plain value computation
    Tensor out = Tensor::scalar(std::log(t.values()[0]) + t.values()[1]);
    return out;
  };
  auto report = finite_difference_check(f, x, 1e-5);
  REQUIRE(report.non_finite_coords == std::vector<std::size_t>{0});
}

TEST_CASE("finite difference check rejects non-positive step") {
  Tensor x = Tensor::scalar(1.0);
  REQUIRE_THROWS_AS(finite_difference_check([](const Tensor& t) { return sum(t); }, x, 0.0),
                    std::invalid_argument);
}

// Per-primitive gradient checks on randomized small shapes, many seeds.
TEST_CASE("every differentiable primitive passes finite differences") {
  constexpr int kSeeds = 20;
  for (int seed = 0; seed < kSeeds; ++seed) {
    RandomStream rng(derive_seed(99, "prim", seed));
    const std::size_t r = 2 + rng.next_below(6);  // dims <= 8
    const std::size_t c = 2 + rng.next_below(6);
    const std::size_t k = 2 + rng.next_below(6);

    auto check = [&](const char* name, const std::function<Tensor(const Tensor&)>& f,
                     const Tensor& x) {
      auto report = finite_difference_check(f, x, 1e-5);
      INFO(name << " seed " << seed);
      REQUIRE(report.non_finite_coords.empty());
      REQUIRE(report.max_rel_error < 1e-4);
    };

    Tensor m = random_tensor({r, c}, rng);
    Tensor m2 = random_tensor({r, c}, rng);
    Tensor v = random_tensor({c}, rng);
    Tensor sq = random_tensor({k, k}, rng);

    check("add", [&](const Tensor& x) { return sum_sq(add(x, m2)); }, m);
    check("add.rhs", [&](const Tensor& x) { return sum_sq(add(m2, x)); }, m);
    check("sub", [&](const Tensor& x) { return sum_sq(sub(x, m2)); }, m);
    check("mul", [&](const Tensor& x) { return sum_sq(mul(x, m2)); }, m);
    check("neg", [&](const Tensor& x) { return sum_sq(neg(x)); }, m);
    check("scale", [&](const Tensor& x) { return sum_sq(scale(x, -1.7)); }, m);
    check("add_rowwise.x", [&](const Tensor& x) { return sum_sq(add_rowwise(x, v)); }, m);
    check("add_rowwise.b", [&](const Tensor& x) { return sum_sq(add_rowwise(m, x)); }, v);
    check("matmul.a", [&](const Tensor& x) { return sum_sq(matmul(x, sq)); },
          random_tensor({r, k}, rng));
    check("matmul.b", [&](const Tensor& x) { return sum_sq(matmul(sq, x)); },
          random_tensor({k, c}, rng));
    check("transpose", [&](const Tensor& x) { return sum_sq(transpose(x)); }, m);
    check("reshape", [&](const Tensor& x) { return sum_sq(reshape(x, {x.size()})); }, m);
    check("concat",
          [&](const Tensor& x) { return sum_sq(concat({x, v})); },
          random_tensor({k}, rng));
    check("concat_cols",
          [&](const Tensor& x) { return sum_sq(concat_cols({x, m2})); }, m);
    check("stack_rows",
          [&](const Tensor& x) { return sum_sq(stack_rows({x, v})); },
          random_tensor({c}, rng));
    check("broadcast_row", [&](const Tensor& x) { return sum_sq(broadcast_row(x, r)); }, v);
    check("slice_rows", [&](const Tensor& x) { return sum_sq(slice_rows(x, 0, 1)); }, m);
    check("slice_cols", [&](const Tensor& x) { return sum_sq(slice_cols(x, 1, c - 1)); }, m);
    check("scatter_rows",
          [&](const Tensor& x) { return sum_sq(scatter_rows(x, {1, 0}, 4)); },
          random_tensor({2, c}, rng));
    check("tanh", [&](const Tensor& x) { return sum_sq(tanh_t(x)); }, m);
    check("sigmoid", [&](const Tensor& x) { return sum_sq(sigmoid(x)); }, m);
    check("exp", [&](const Tensor& x) { return sum_sq(exp_t(x)); }, m);
    {
      Tensor pos = Tensor::zeros({k});
      for (double& y : pos.values()) y = 0.5 + rng.uniform01();
      check("log", [&](const Tensor& x) { return sum_sq(log_t(x)); }, pos);
    }
    check("softplus", [&](const Tensor& x) { return sum_sq(softplus(x)); }, m);
    check("leaky_relu", [&](const Tensor& x) { return sum_sq(leaky_relu(x, 0.2)); }, m);
    check("softmax_rows", [&](const Tensor& x) { return sum_sq(softmax_rows(x)); }, m);
    check("log_softmax_rows", [&](const Tensor& x) { return sum_sq(log_softmax_rows(x)); }, m);
    {
      std::vector<std::uint8_t> mask(c, 1);
      mask[c - 1] = 0;
      check("masked_softmax_rows",
            [&](const Tensor& x) { return sum_sq(masked_softmax_rows(x, mask)); }, m);
    }
    check("sum", [&](const Tensor& x) { return sum(x); }, m);
    check("mean", [&](const Tensor& x) { return scale(mean(x), 3.0); }, m);
    check("sum_sq", [&](const Tensor& x) { return sum_sq(x); }, m);
    check("mean_rows", [&](const Tensor& x) { return sum_sq(mean_rows(x)); }, m);
    {
      Tensor gain = random_tensor({c}, rng);
      Tensor bias = random_tensor({c}, rng);
      check("layer_norm.x", [&](const Tensor& x) { return sum_sq(layer_norm(x, gain, bias)); },
            m);
      check("layer_norm.gain",
            [&](const Tensor& x) { return sum_sq(layer_norm(m, x, bias)); }, gain);
      check("layer_norm.bias",
            [&](const Tensor& x) { return sum_sq(layer_norm(m, gain, x)); }, bias);
    }
    {
      std::vector<std::size_t> ids = {0, r - 1, 0};
      check("lookup_rows", [&](const Tensor& x) { return sum_sq(lookup_rows(x, ids)); }, m);
    }
    {
      std::vector<std::size_t> ids(r);
      for (std::size_t i = 0; i < r; ++i) ids[i] = rng.next_below(c);
      check("gather_cols_per_row",
            [&](const Tensor& x) { return sum_sq(gather_cols_per_row(x, ids)); }, m);
    }
  }
}

TEST_CASE("forward evaluation is deterministic bit-for-bit") {
  RandomStream rng(5150);
  Tensor a = random_tensor({4, 4}, rng);
  Tensor b = random_tensor({4, 4}, rng);
  auto run = [&]() {
    Tensor h = tanh_t(matmul(a, b));
    Tensor p = softmax_rows(h);
    return layer_norm(p, Tensor::full({4}, 1.0), Tensor::zeros({4}));
  };
  Tensor r1 = run();
  Tensor r2 = run();
  REQUIRE(std::memcmp(r1.values().data(), r2.values().data(), r1.size() * sizeof(double)) == 0);
}

TEST_CASE("backprop is linear in the loss") {
  RandomStream rng(77);
  Tensor x = random_tensor({3, 3}, rng, true);
  const double a = 1.7, b = -0.4;

  auto grad_of = [&](const std::function<Tensor()>& loss_fn) {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    backpropagate(tape, loss);
    return x.grad();
  };

  auto loss1 = [&]() { return sum_sq(tanh_t(x)); };
  auto loss2 = [&]() { return mean(matmul(x, x)); };
  auto g1 = grad_of(loss1);
  auto g2 = grad_of(loss2);
  auto gc = grad_of([&]() { return add(scale(loss1(), a), scale(loss2(), b)); });
  for (std::size_t i = 0; i < gc.size(); ++i)
    REQUIRE(gc[i] == Catch::Approx(a * g1[i] + b * g2[i]).epsilon(1e-12).margin(1e-12));
}

TEST_CASE("tape is topologically ordered and replays exactly") {
  RandomStream rng(31);
  Tensor x = random_tensor({3, 4}, rng, true);
  Tensor w = random_tensor({4, 2}, rng, true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor h = tanh_t(matmul(x, w));
    Tensor p = softmax_rows(h);
    Tensor loss = sum_sq(p);
    (void)loss;
  }
  REQUIRE(tape.size() > 0);
  REQUIRE(tape.is_topologically_ordered());
  REQUIRE(tape.replay_matches());
}

TEST_CASE("gradients accumulate across shared uses") {
  Tensor x = Tensor::from_values({2}, {3.0, -1.0}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor y = add(x, x);  // y = 2x
    backpropagate(tape, sum(y));
  }
  REQUIRE(x.grad()[0] == Catch::Approx(2.0));
  REQUIRE(x.grad()[1] == Catch::Approx(2.0));
}

TEST_CASE("no recording happens without an active tape") {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
  Tensor y = tanh_t(x);
  REQUIRE_FALSE(y.requires_grad());
}

TEST_CASE("dropout") {
  Tensor x = Tensor::full({1000}, 1.0);
  RandomStream rng(404);
  Tensor kept = dropout(x, 0.0, rng);
  REQUIRE(kept.values() == x.values());

  Tensor d = dropout(x, 0.25, rng);
  std::size_t zeros = 0;
  for (double v : d.values()) {
    if (v == 0.0)
      ++zeros;
    else
      REQUIRE(v == Catch::Approx(1.0 / 0.75));
  }
  REQUIRE(zeros > 150);
  REQUIRE(zeros < 350);
  REQUIRE_THROWS_AS(dropout(x, 1.0, rng), std::invalid_argument);
}
