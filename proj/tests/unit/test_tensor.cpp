#include <doctest.h>

#include <cmath>
#include <vector>

#include "kdret/autograd.hpp"
#include "kdret/errors.hpp"
#include "kdret/rng.hpp"
#include "oracles.hpp"

using namespace kdret;
using testing::random_tensor;

namespace {

// Sliding dot-product computed with explicit loops, independent of the im2col path.
std::vector<double> conv_oracle(const std::vector<double>& x, std::size_t steps, std::size_t in_ch,
                                const std::vector<double>& w, std::size_t out_ch, std::size_t width,
                                const std::vector<double>& b) {
  std::vector<double> y;
  for (std::size_t t = 0; t + width <= steps; ++t)
    for (std::size_t o = 0; o < out_ch; ++o) {
      double acc = b[o];
      for (std::size_t j = 0; j < width; ++j)
        for (std::size_t c = 0; c < in_ch; ++c)
          acc += w[(o * width + j) * in_ch + c] * x[(t + j) * in_ch + c];
      y.push_back(acc);
    }
  return y;
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  Tape t;
  Var y = ag::softmax_rows(t.constant(Tensor::row({0, 0, 0})));
  for (double v : y.value().values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("identity matmul returns its operand") {
  Rng rng(3);
  Tape t;
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Tensor a = random_tensor({3, 5}, rng);
  CHECK(ag::matmul(t.constant(eye), t.constant(a)).value() == a);
}

TEST_CASE("conv1d sliding sum") {
  Tape t;
  Var x = t.constant(Tensor::matrix(4, 1, {1, 2, 3, 4}));
  Var w = t.constant(Tensor({1, 2, 1}, {1, 1}));
  Var b = t.constant(Tensor::row({0}));
  Var y = ag::conv1d(x, w, b);
  CHECK(y.shape() == Shape{3, 1});
  CHECK(y.value().values() == std::vector<double>{3, 5, 7});
}

TEST_CASE("conv1d matches nested-loop oracle on multichannel input") {
  Rng rng(11);
  const std::size_t steps = 7, in_ch = 3, out_ch = 4, width = 3;
  Tensor x = random_tensor({steps, in_ch}, rng);
  Tensor w = random_tensor({out_ch, width, in_ch}, rng);
  Tensor b = random_tensor({1, out_ch}, rng);
  Tape t;
  Var y = ag::conv1d(t.constant(x), t.constant(w), t.constant(b));
  auto expected = conv_oracle(x.values(), steps, in_ch, w.values(), out_ch, width, b.values());
  REQUIRE(y.value().size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(y.value()[i] == doctest::Approx(expected[i]).epsilon(1e-13));
}

TEST_CASE("shape and window errors") {
  Tape t;
  Var a = t.constant(Tensor({2, 3}));
  Var b = t.constant(Tensor({2, 3}));
  CHECK_THROWS_AS(ag::matmul(a, b), ShapeError);
  CHECK_THROWS_AS(ag::add(a, t.constant(Tensor({3, 2}))), ShapeError);
  Var w = t.constant(Tensor({1, 3, 3}));
  CHECK_THROWS_AS(ag::conv1d(a, w, t.constant(Tensor({1, 1}))), WindowError);
  CHECK_THROWS_AS(ag::max_pool1d(a, 3, 1), WindowError);
  Var emb = t.constant(Tensor({4, 2}));
  std::vector<std::int32_t> bad{0, 4};
  CHECK_THROWS_AS(ag::gather_rows(emb, bad), VocabError);
  CHECK_THROWS_AS(ag::log(t.constant(Tensor::row({1.0, 0.0}))), NumericsError);
}

TEST_CASE("backward of sum is all ones") {
  Tape t;
  Var x = t.input(Tensor({2, 3}, {1, -2, 3, 4, 5, -6}));
  t.backward(ag::sum(x));
  CHECK(t.grad(x) == Tensor({2, 3}, 1.0));
}

TEST_CASE("backward of mean squared error") {
  Tape t;
  Var x = t.input(Tensor::row({1, 2}));
  Var y = t.constant(Tensor::row({0, 0}));
  Var d = ag::sub(x, y);
  t.backward(ag::mean(ag::mul(d, d)));
  // 2 (x - y) / n
  CHECK(t.grad(x).values() == std::vector<double>{1.0, 2.0});
}

TEST_CASE("log-softmax target gradient equals softmax minus one-hot") {
  Rng rng(5);
  for (std::size_t target = 0; target < 4; ++target) {
    Tensor logits = random_tensor({1, 4}, rng, -3, 3);
    Tape t;
    Var x = t.input(logits);
    Var logp = ag::log(ag::softmax_rows(x));
    Var picked = ag::slice_cols(logp, target, target + 1);
    t.backward(picked);
    // closed form: d(log p_target)/dx = onehot - softmax; the loss -log p gives the negation.
    double z = 0;
    for (double v : logits.values()) z += std::exp(v);
    Tensor g = t.grad(x);
    for (std::size_t j = 0; j < 4; ++j) {
      const double expected = -(std::exp(logits[j]) / z - (j == target ? 1.0 : 0.0));
      CHECK(g[j] == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("backward twice without reset is an error") {
  Tape t;
  Var x = t.input(Tensor::row({1, 2}));
  Var s = ag::sum(x);
  t.backward(s);
  CHECK_THROWS_AS(t.backward(s), TapeError);
  t.reset();
  CHECK_THROWS_AS(t.backward(s), TapeError);  // dead handle
  Var x2 = t.input(Tensor::row({1, 2}));
  CHECK_THROWS_AS(t.backward(x2), NonScalarError);
  Tape inference(Tape::Mode::Inference);
  CHECK_THROWS_AS(inference.backward(ag::sum(inference.input(Tensor::row({1})))), TapeError);
  Tape other;
  CHECK_THROWS_AS(ag::add(x2, other.input(Tensor::row({1, 2}))), TapeError);
}

TEST_CASE("grad_check of sum is exact") {
  Rng rng(0);
  Tensor x = random_tensor({3, 4}, rng);
  CHECK(grad_check([](Tape&, Var v) { return ag::sum(v); }, x) < 1e-10);
}

TEST_CASE("grad_check of mse of an affine layer") {
  Rng rng(0);
  Tensor x = random_tensor({2, 5}, rng);
  Tensor w = random_tensor({5, 3}, rng);
  Tensor b = random_tensor({1, 3}, rng);
  Tensor target = random_tensor({2, 3}, rng);
  auto f = [&](Tape& t, Var xv) {
    Var d = ag::sub(ag::affine(xv, t.constant(w), t.constant(b)), t.constant(target));
    return ag::mean(ag::mul(d, d));
  };
  CHECK(grad_check(f, x) < 1e-6);
}

TEST_CASE("grad_check rejects non-finite functions") {
  auto f = [](Tape&, Var v) { return ag::sum(ag::log(v)); };
  CHECK_THROWS_AS(grad_check(f, Tensor::row({1e-6, 1.0}), 1e-5), NumericsError);
}

// Every differentiable op on 10 seeds.
TEST_CASE("every op passes grad_check on 10 seeds") {
  for (const auto& c : testing::op_cases()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const double err = testing::op_grad_error(c, seed);
      INFO(c.name, " seed ", seed, " err ", err);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("softmax rows normalize and are shift invariant") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({3, 6}, rng, -20, 20);
    Tensor shifted = x;
    const double shift = rng.uniform(-100, 100);
    for (std::size_t c = 0; c < 6; ++c) shifted.at(1, c) += shift;
    Tape t;
    const Tensor& p = ag::softmax_rows(t.constant(x)).value();
    const Tensor& q = ag::softmax_rows(t.constant(shifted)).value();
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 6; ++c) {
        s += p.at(r, c);
        CHECK(std::abs(p.at(r, c) - q.at(r, c)) <= 1e-12);
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("max pooling routes gradient to the lowest-index argmax") {
  Tape t;
  Var x = t.input(Tensor::matrix(5, 2, {1, 4,
                                        3, 4,
                                        3, 0,
                                        2, 4,
                                        0, 1}));
  Var y = ag::max_over_time(x);
  CHECK(y.value().values() == std::vector<double>{3, 4});
  Var w = t.constant(Tensor::row({0.25, -2.0}));
  t.backward(ag::sum(ag::mul(y, w)));
  Tensor g = t.grad(x);
  CHECK(g.at(1, 0) == 0.25);
  CHECK(g.at(0, 1) == -2.0);
  double total0 = 0, total1 = 0;
  for (std::size_t r = 0; r < 5; ++r) {
    total0 += g.at(r, 0);
    total1 += g.at(r, 1);
  }
  CHECK(total0 == 0.25);
  CHECK(total1 == -2.0);
  CHECK(g.at(2, 0) == 0.0);
  CHECK(g.at(3, 1) == 0.0);
}

TEST_CASE("forward evaluation is deterministic") {
  auto run = [] {
    Rng rng(42);
    Tensor gates = random_tensor({6, 16}, rng);
    Tensor whh = random_tensor({4, 16}, rng);
    Tape t;
    Var g = t.constant(gates);
    Var w = t.constant(whh);
    Var s = t.constant(Tensor({1, 8}));
    for (std::size_t k = 0; k < 6; ++k) s = ag::lstm_cell(g, k, s, w);
    return ag::softmax_rows(s).value();
  };
  CHECK(run() == run());
}

TEST_CASE("parameters accumulate gradients across tapes") {
  Parameter p("w", Tensor::row({1.0, 2.0}));
  for (int i = 0; i < 2; ++i) {
    Tape t;
    t.backward(ag::sum(ag::mul(t.param(p), t.param(p))));
  }
  CHECK(p.grad.values() == std::vector<double>{4.0, 8.0});
}
