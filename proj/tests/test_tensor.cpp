#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "piqn/errors.hpp"
#include "piqn/tensor.hpp"

using namespace piqn;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kGradTolerance = 1e-4;
constexpr double kEps = 1e-5;

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double std = 1.0) {
  return Tensor::normal({r, c}, 0.0, std, rng);
}

// Values kept away from zero so relu kinks sit outside the finite-difference stencil.
Tensor away_from_zero(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.2, 1.5);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(r * c);
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor::from({r, c}, v);
}

// Weighted sum turns a matrix-valued op into a scalar with a non-trivial gradient.
Tensor weighted(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

template <class F>
void check_op_over_seeds(F&& make_loss, const char* name) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const double err = make_loss(rng);
    INFO(name << " seed " << seed);
    CHECK(err < kGradTolerance);
  }
}

}  // namespace

TEST_CASE("matmul examples") {
  const Tensor id = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor r = matmul(id, m);
  CHECK(std::vector<double>(r.data().begin(), r.data().end()) == std::vector<double>{1, 2, 3, 4});

  const Tensor z = matmul(Tensor::zeros({2, 2}), Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}));
  for (double v : z.data()) CHECK(v == 0.0);

  const Tensor p = matmul(m, Tensor::from({2, 1}, {5, 6}));
  CHECK(p.shape() == Shape{2, 1});
  CHECK(p.at(0, 0) == 17.0);
  CHECK(p.at(1, 0) == 39.0);

  CHECK_THROWS_AS(matmul(m, Tensor::zeros({3, 1})), DimensionError);
}

TEST_CASE("row_softmax examples and invariants") {
  const Tensor u = row_softmax(Tensor::zeros({1, 4}));
  for (double v : u.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(row_softmax(Tensor::from({1, 1}, {-37.5})).item() == 1.0);

  const Tensor masked = row_softmax(Tensor::from({1, 2}, {0.0, -kInf}));
  CHECK(masked.at(0, 0) == 1.0);
  CHECK(masked.at(0, 1) == 0.0);

  CHECK_THROWS_AS(row_softmax(Tensor::from({1, 2}, {-kInf, -kInf})), NumericError);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_matrix(4, 7, rng, 5.0);
    const Tensor y = row_softmax(x);
    const Tensor shifted = row_softmax(add(x, Tensor::scalar(123.456)));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        s += y.at(r, c);
        CHECK(std::abs(shifted.at(r, c) - y.at(r, c)) < 1e-12);
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("elementwise examples") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  const Tensor r = relu(Tensor::from({2}, {-1.0, 2.0}));
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 2.0);
  const Tensor parts[] = {Tensor::from({2}, {1, 2}), Tensor::from({1}, {3})};
  const Tensor c = concat_cols(parts);
  CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{1, 2, 3});
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
}

TEST_CASE("backward examples") {
  Tensor x = Tensor::scalar(3.0, true);
  backward(mul(x, x));
  CHECK(x.grad()[0] == 6.0);

  Tensor w = Tensor::zeros({1, 5}, true);
  backward(sum(sigmoid(w)));
  for (double g : w.grad()) CHECK(g == 0.25);

  CHECK_THROWS_AS(backward(mul(w, w)), DimensionError);
}

TEST_CASE("backward accumulates until reset and is deterministic") {
  std::mt19937_64 rng(11);
  Tensor a = random_matrix(3, 4, rng).clone(true);
  const Tensor b = random_matrix(4, 2, rng);
  auto loss = [&] { return sum(sigmoid(matmul(a, b))); };
  backward(loss());
  const std::vector<double> first(a.grad().begin(), a.grad().end());
  backward(loss());
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(a.grad()[i] == doctest::Approx(2 * first[i]));
  a.zero_grad();
  backward(loss());
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(a.grad()[i] == first[i]);
}

TEST_CASE("no-grad guard suppresses recording") {
  Tensor x = Tensor::scalar(2.0, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(mul(x, x).tracked());
  }
  CHECK(mul(x, x).tracked());
}

TEST_CASE("computation record is topologically ordered") {
  Tensor x = Tensor::from({1, 2}, {1, 2}, true);
  const Tensor y = sigmoid(x);
  const Tensor z = sum(mul(y, y));
  const ComputationRecord rec = record_of(z);
  REQUIRE_FALSE(rec.entries.empty());
  CHECK(rec.entries.back().node == z.id());
  for (std::size_t i = 0; i < rec.entries.size(); ++i) {
    for (const void* in : rec.entries[i].inputs) {
      for (std::size_t j = i; j < rec.entries.size(); ++j) CHECK(rec.entries[j].node != in);
    }
  }
}

TEST_CASE("grad_check examples") {
  const auto linear = grad_check([](const Tensor& x) { return sum(scale(x, 3.0)); },
                                 Tensor::from({1, 3}, {0.3, -1.0, 2.0}), kEps);
  CHECK(linear.max_relative_error < 1e-10);
  CHECK_THROWS_AS(grad_check([](const Tensor& x) { return sum(x); }, Tensor::zeros({1, 1}), 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      grad_check([](const Tensor& x) { return sum(log(x)); }, Tensor::from({1, 1}, {0.0}), kEps),
      NumericError);
}

TEST_CASE("two-layer composition matches finite differences") {
  check_op_over_seeds(
      [](std::mt19937_64& rng) {
        std::vector<Tensor> params{random_matrix(3, 4, rng).clone(true),
                                   random_matrix(4, 4, rng).clone(true),
                                   random_matrix(4, 2, rng).clone(true)};
        const Tensor x = random_matrix(5, 3, rng);
        return grad_check(
                   [&] {
                     const Tensor h = sigmoid(matmul(x, params[0]));
                     const Tensor g = layer_norm(matmul(h, params[1]), Tensor::filled({4}, 1.0),
                                                 Tensor::zeros({4}));
                     return sum(log(row_softmax(matmul(g, params[2]))));
                   },
                   params, kEps)
            .max_relative_error;
      },
      "composition");
}

TEST_CASE("every differentiable op passes grad_check over ten seeds") {
  auto unary = [](auto op, const char* name, bool positive = false, bool kinked = false) {
    check_op_over_seeds(
        [&](std::mt19937_64& rng) {
          Tensor x = kinked ? away_from_zero(3, 4, rng) : random_matrix(3, 4, rng);
          if (positive) {
            for (double& v : x.data()) v = std::abs(v) + 0.5;
          }
          const Tensor probe = op(x);
          const Tensor w = random_matrix(probe.rows(), probe.cols(), rng);
          return grad_check([&](const Tensor& p) { return weighted(op(p), w); }, x, kEps)
              .max_relative_error;
        },
        name);
  };
  unary([](const Tensor& x) { return relu(x); }, "relu", false, true);
  unary([](const Tensor& x) { return sigmoid(x); }, "sigmoid");
  unary([](const Tensor& x) { return log(x); }, "log", true);
  unary([](const Tensor& x) { return row_softmax(x); }, "row_softmax");
  unary([](const Tensor& x) { return transpose(x); }, "transpose");
  unary([](const Tensor& x) { return scale(x, -1.7); }, "scale");
  unary([](const Tensor& x) { return slice_rows(x, 1, 3); }, "slice_rows");
  unary([](const Tensor& x) { return slice_cols(x, 1, 3); }, "slice_cols");
  unary([](const Tensor& x) { return mul(x, x); }, "mul_self");

  check_op_over_seeds(
      [](std::mt19937_64& rng) {
        std::vector<Tensor> p{random_matrix(3, 4, rng).clone(true), random_matrix(3, 4, rng).clone(true),
                              random_matrix(1, 4, rng).clone(true), random_matrix(1, 1, rng).clone(true)};
        const Tensor w = random_matrix(3, 4, rng);
        return grad_check(
                   [&] {
                     const Tensor s = add(sub(mul(p[0], p[1]), p[2]), p[3]);
                     return weighted(add(s, mul(p[0], p[2])), w);
                   },
                   p, kEps)
            .max_relative_error;
      },
      "add/sub/mul with broadcasting");

  check_op_over_seeds(
      [](std::mt19937_64& rng) {
        std::vector<Tensor> p{random_matrix(3, 4, rng).clone(true), random_matrix(4, 5, rng).clone(true)};
        const Tensor w = random_matrix(3, 5, rng);
        return grad_check([&] { return weighted(matmul(p[0], p[1]), w); }, p, kEps).max_relative_error;
      },
      "matmul");

  check_op_over_seeds(
      [](std::mt19937_64& rng) {
        std::vector<Tensor> p{random_matrix(4, 6, rng, 2.0).clone(true), random_matrix(1, 6, rng).clone(true),
                              random_matrix(1, 6, rng).clone(true)};
        const Tensor w = random_matrix(4, 6, rng);
        return grad_check([&] { return weighted(layer_norm(p[0], p[1], p[2]), w); }, p, kEps)
            .max_relative_error;
      },
      "layer_norm");

  check_op_over_seeds(
      [](std::mt19937_64& rng) {
        std::vector<Tensor> p{random_matrix(2, 3, rng).clone(true), random_matrix(2, 2, rng).clone(true),
                              random_matrix(1, 5, rng).clone(true)};
        const Tensor w = random_matrix(3, 5, rng);
        return grad_check(
                   [&] {
                     const Tensor cols[] = {p[0], p[1]};
                     const Tensor rows[] = {concat_cols(cols), p[2]};
                     return weighted(concat_rows(rows), w);
                   },
                   p, kEps)
            .max_relative_error;
      },
      "concat");

  check_op_over_seeds(
      [](std::mt19937_64& rng) {
        std::vector<Tensor> p{random_matrix(5, 3, rng).clone(true), random_matrix(1, 3, rng).clone(true)};
        const std::size_t idx[] = {4, 0, 4, 2};
        const Tensor w = random_matrix(7, 3, rng);
        return grad_check(
                   [&] {
                     const Tensor parts[] = {gather_rows(p[0], idx), repeat_row(p[1], 3)};
                     return weighted(concat_rows(parts), w);
                   },
                   p, kEps)
            .max_relative_error;
      },
      "gather/repeat");

  check_op_over_seeds(
      [](std::mt19937_64& rng) {
        std::vector<Tensor> p{away_from_zero(3, 4, rng).clone(true), away_from_zero(5, 4, rng).clone(true),
                              random_matrix(1, 4, rng).clone(true)};
        // Pairwise sums stay clear of zero only if one side dominates.
        for (double& v : p[0].data()) v *= 4.0;
        const Tensor w = random_matrix(3, 5, rng);
        return grad_check([&] { return weighted(pairwise_relu_score(p[0], p[1], p[2]), w); }, p, kEps)
            .max_relative_error;
      },
      "pairwise_relu_score");

  check_op_over_seeds(
      [](std::mt19937_64& rng) {
        std::vector<Tensor> p{random_matrix(4, 5, rng).clone(true)};
        const std::size_t targets[] = {0, 4, 2, 1};
        const bool mask[] = {true, false, true, true};
        const std::size_t labels[] = {3, 3, 0, 1};
        return grad_check(
                   [&] {
                     const Tensor probs = sigmoid(p[0]);
                     const Tensor dist = row_softmax(p[0]);
                     return add(binary_cross_entropy_rows(probs, targets, mask),
                                negative_log_likelihood_rows(dist, labels));
                   },
                   p, kEps)
            .max_relative_error;
      },
      "losses");
}

TEST_CASE("fused pairwise score matches the unfused definition") {
  std::mt19937_64 rng(8);
  const Tensor a = random_matrix(3, 4, rng), b = random_matrix(5, 4, rng), w = random_matrix(1, 4, rng);
  const Tensor s = pairwise_relu_score(a, b, w);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double expect = 0.0;
      for (std::size_t k = 0; k < 4; ++k) expect += std::max(0.0, a.at(i, k) + b.at(j, k)) * w.data()[k];
      CHECK(s.at(i, j) == doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("loss kernels validate targets") {
  const Tensor p = Tensor::filled({2, 3}, 0.5);
  const std::size_t bad[] = {0, 3};
  const bool mask[] = {true, true};
  CHECK_THROWS_AS(binary_cross_entropy_rows(p, bad, mask), AnnotationError);
}
