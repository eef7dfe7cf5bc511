#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <set>

#include "doctest.h"
#include "piqn/assignment.hpp"
#include "piqn/errors.hpp"

using namespace piqn;

namespace {

// Independent oracle: enumerate every labelling of queries with entities or
// None and keep the cheapest one that gives entity k exactly q[k] queries.
double exhaustive_optimum(const CostMatrix& c, const std::vector<std::size_t>& q) {
  const std::size_t m = c.queries, g = c.entities;
  std::vector<std::size_t> label(m, g);
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (i == m) {
      std::vector<std::size_t> used(g, 0);
      double total = 0.0;
      for (std::size_t r = 0; r < m; ++r) {
        if (label[r] == g) continue;
        ++used[label[r]];
        total += c.at(r, label[r]);
      }
      if (used == q) best = std::min(best, total);
      return;
    }
    for (std::size_t k = 0; k <= g; ++k) {
      label[i] = k;
      rec(i + 1);
    }
  };
  rec(0);
  return best;
}

void check_constraints(const AssignmentResult& r, const std::vector<std::size_t>& q) {
  const std::size_t m = r.queries, g = r.entities;
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t row = 0, ext = 0;
    for (std::size_t k = 0; k < g; ++k) row += r.assignment[i * g + k];
    for (std::size_t k = 0; k <= g; ++k) ext += r.extended[i * (g + 1) + k];
    CHECK(row <= 1);
    CHECK(ext == 1);
    CHECK(r.extended[i * (g + 1) + g] == (row == 0 ? 1 : 0));
    if (row == 1) CHECK(r.assigned(i, r.labels[i]));
    else CHECK(r.is_none(i));
  }
  for (std::size_t k = 0; k < g; ++k) {
    std::size_t col = 0;
    for (std::size_t i = 0; i < m; ++i) col += r.assignment[i * g + k];
    CHECK(col == q[k]);
  }
}

CostMatrix random_cost(std::size_t m, std::size_t g, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-3.0, 0.0);
  CostMatrix c(m, g);
  for (double& v : c.values) v = u(rng);
  return c;
}

}  // namespace

TEST_CASE("cost matrix examples") {
  const std::size_t n = 3;
  Tensor l = Tensor::zeros({1, n}), r = Tensor::zeros({1, n}), t = Tensor::zeros({1, 3});
  l.at(0, 0) = 1.0;
  r.at(0, 2) = 1.0;
  t.at(0, 1) = 1.0;
  const EntityAnnotation g1[] = {{0, 2, 1}};
  CHECK(compute_cost_matrix({l, r}, {t}, g1).at(0, 0) == -3.0);

  l.at(0, 0) = 0.2;
  r.at(0, 2) = 0.3;
  t.at(0, 1) = 0.5;
  CHECK(compute_cost_matrix({l, r}, {t}, g1).at(0, 0) == doctest::Approx(-1.0).epsilon(1e-15));

  const Tensor L = Tensor::filled({60, 10}, 0.1), T = Tensor::filled({60, 5}, 0.2);
  const EntityAnnotation g4[] = {{0, 0, 0}, {1, 3, 1}, {2, 2, 2}, {4, 9, 3}};
  const CostMatrix c = compute_cost_matrix({L, L}, {T}, g4);
  CHECK(c.queries == 60);
  CHECK(c.entities == 4);

  CHECK_THROWS_AS(compute_cost_matrix({l, r}, {t}, std::span<const EntityAnnotation>{}),
                  std::invalid_argument);
  const EntityAnnotation bad[] = {{0, 5, 0}};
  CHECK_THROWS_AS(compute_cost_matrix({l, r}, {t}, bad), AnnotationError);
}

TEST_CASE("quantity allocation examples") {
  CHECK(allocate_quantities(3, 60, 0.75, std::uint64_t{1}).q == std::vector<std::size_t>{15, 15, 15});

  const QuantityVector many = allocate_quantities(50, 60, 0.75, std::uint64_t{1});
  CHECK(many.q == std::vector<std::size_t>(50, 1));
  CHECK_FALSE(many.overflow);

  const QuantityVector over = allocate_quantities(7, 5, 0.75, std::uint64_t{1});
  CHECK(over.q == std::vector<std::size_t>(7, 1));
  CHECK(over.overflow);

  // Q = round(8 * 0.625) = 5 over two entities.
  std::set<std::vector<std::size_t>> seen;
  for (std::uint64_t s = 0; s < 64; ++s) seen.insert(allocate_quantities(2, 8, 0.625, s).q);
  CHECK(seen == std::set<std::vector<std::size_t>>{{3, 2}, {2, 3}});

  CHECK_THROWS_AS(allocate_quantities(2, 8, 0.0, std::uint64_t{0}), std::invalid_argument);
}

TEST_CASE("quantity allocation invariants") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t m = 1 + rng() % 80, g = 1 + rng() % 12;
    const double ratio = 0.05 + 0.95 * std::uniform_real_distribution<double>(0, 1)(rng);
    const QuantityVector v = allocate_quantities(g, m, ratio, rng);
    const auto target = static_cast<std::size_t>(std::lround(m * ratio));
    REQUIRE(v.q.size() == g);
    for (auto k : v.q) CHECK(k >= 1);
    if (g > m) {
      CHECK(v.overflow);
    } else {
      CHECK(v.total() == std::max(g, target));
      CHECK(v.total() <= m);
      if (g < target) {
        for (auto k : v.q) CHECK(k >= target / g);
      }
    }
  }
}

TEST_CASE("LAP worked examples") {
  const CostMatrix c = CostMatrix::from_rows({{-0.9, -0.1}, {-0.5, -0.6}, {-0.2, -0.8}});
  const QuantityVector ones{{1, 1}};
  for (const auto& r : {solve_one_to_many_lap(c, ones), brute_force_lap(c, ones)}) {
    CHECK(r.labels == std::vector<std::size_t>{0, 2, 1});
    CHECK(r.total_cost == doctest::Approx(-1.7).epsilon(1e-14));
    check_constraints(r, ones.q);
  }
  const EntityAnnotation gold[] = {{0, 1, 0}, {2, 2, 1}};
  const auto labels = labels_from_assignment(solve_one_to_many_lap(c, ones), gold);
  REQUIRE(labels.size() == 3);
  CHECK(labels[0] == gold[0]);
  CHECK_FALSE(labels[1].has_value());
  CHECK(labels[2] == gold[1]);

  const CostMatrix col = CostMatrix::from_rows({{-0.9}, {-0.5}, {-0.2}});
  const QuantityVector two{{2}};
  for (const auto& r : {solve_one_to_many_lap(col, two), brute_force_lap(col, two)}) {
    CHECK(r.labels == std::vector<std::size_t>{0, 0, 1});
    CHECK(r.total_cost == doctest::Approx(-1.4).epsilon(1e-14));
  }

  const auto single = solve_one_to_many_lap(CostMatrix::from_rows({{-0.3}}), QuantityVector{{1}});
  CHECK(single.labels == std::vector<std::size_t>{0});
}

TEST_CASE("LAP preconditions") {
  const CostMatrix c = CostMatrix::from_rows({{-1.0}, {-1.0}});
  CHECK_THROWS_AS(solve_one_to_many_lap(c, QuantityVector{{3}}), InfeasibleError);
  CHECK_THROWS_AS(solve_one_to_many_lap(c, QuantityVector{{0}}), std::invalid_argument);
  CHECK_THROWS_AS(brute_force_lap(CostMatrix(9, 1, -1.0), QuantityVector{{1}}), CapacityError);
}

TEST_CASE("every query assigned when Q equals M") {
  std::mt19937_64 rng(4);
  const CostMatrix c = random_cost(6, 3, rng);
  const auto r = solve_one_to_many_lap(c, QuantityVector{{2, 3, 1}});
  for (std::size_t i = 0; i < 6; ++i) CHECK_FALSE(r.is_none(i));
}

TEST_CASE("labels from an empty assignment are all None") {
  AssignmentResult r;
  r.queries = 3;
  r.entities = 1;
  r.labels = {1, 1, 1};
  r.assignment.assign(3, 0);
  const EntityAnnotation gold[] = {{0, 0, 0}};
  for (const auto& l : labels_from_assignment(r, gold)) CHECK_FALSE(l.has_value());
}

TEST_CASE("solver matches exhaustive enumeration on random instances") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t m = 1 + rng() % 7;
    const std::size_t g = 1 + rng() % std::min<std::size_t>(3, m);
    std::vector<std::size_t> q(g, 1);
    std::size_t budget = m - g;
    for (auto& k : q) {
      const std::size_t extra = rng() % (std::min<std::size_t>(2, budget) + 1);
      k += extra;
      budget -= extra;
    }
    const CostMatrix c = random_cost(m, g, rng);
    const auto fast = solve_one_to_many_lap(c, QuantityVector{q});
    const auto slow = brute_force_lap(c, QuantityVector{q});
    const double oracle = exhaustive_optimum(c, q);
    CHECK(std::abs(fast.total_cost - oracle) < 1e-12);
    CHECK(std::abs(slow.total_cost - oracle) < 1e-12);
    check_constraints(fast, q);
    check_constraints(slow, q);
    double recomputed = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      if (!fast.is_none(i)) recomputed += c.at(i, fast.labels[i]);
    CHECK(std::abs(recomputed - fast.total_cost) < 1e-12);
  }
}

TEST_CASE("a constant cost shift leaves the optimum unchanged") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 40; ++trial) {
    const CostMatrix c = random_cost(6, 2, rng);
    CostMatrix shifted = c;
    for (double& v : shifted.values) v -= 1.25;
    const QuantityVector q{{2, 2}};
    const auto a = solve_one_to_many_lap(c, q), b = solve_one_to_many_lap(shifted, q);
    CHECK(std::abs((b.total_cost + 1.25 * 4) - a.total_cost) < 1e-12);
    CHECK(std::abs(exhaustive_optimum(c, q.q) - a.total_cost) < 1e-12);
  }
}

TEST_CASE("capped assignment when entities outnumber queries") {
  const CostMatrix c = CostMatrix::from_rows({{-0.1, -0.9, -0.5}, {-0.8, -0.7, -0.1}});
  const auto r = solve_capped_lap(c);
  CHECK(r.labels == std::vector<std::size_t>{1, 0});
  CHECK(r.total_cost == doctest::Approx(-1.7));
}

TEST_CASE("rectangular hungarian kernel") {
  const double cost[] = {4, 1, 3.5, 2, 0, 5};  // 2 x 3
  const auto cols = hungarian(2, 3, cost);
  CHECK(cols == std::vector<std::size_t>{1, 0});
  CHECK_THROWS_AS(hungarian(3, 2, std::span<const double>(cost, 6)), InfeasibleError);
}
