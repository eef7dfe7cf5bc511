#include "piqn/assignment.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "piqn/errors.hpp"

namespace piqn {

namespace {

constexpr std::size_t kBruteForceLimit = 8;

void check_quantities(const CostMatrix& cost, const QuantityVector& quantities) {
  if (quantities.q.size() != cost.entities) {
    throw std::invalid_argument("quantity vector has " + std::to_string(quantities.q.size()) +
                                " entries for " + std::to_string(cost.entities) + " entities");
  }
  for (std::size_t v : quantities.q) {
    if (v == 0) throw std::invalid_argument("assignable quantities must be positive");
  }
  if (quantities.total() > cost.queries) {
    throw InfeasibleError("total assignable quantity " + std::to_string(quantities.total()) +
                          " exceeds " + std::to_string(cost.queries) + " queries");
  }
}

AssignmentResult result_from_labels(const CostMatrix& cost, std::vector<std::size_t> labels) {
  AssignmentResult r;
  r.queries = cost.queries;
  r.entities = cost.entities;
  r.assignment.assign(cost.queries * cost.entities, 0);
  r.extended.assign(cost.queries * (cost.entities + 1), 0);
  for (std::size_t i = 0; i < cost.queries; ++i) {
    const std::size_t k = labels[i];
    if (k < cost.entities) {
      r.assignment[i * cost.entities + k] = 1;
      r.total_cost += cost.at(i, k);
    }
    r.extended[i * (cost.entities + 1) + k] = 1;
  }
  r.labels = std::move(labels);
  return r;
}

}  // namespace

CostMatrix CostMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  CostMatrix c(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != c.entities) throw DimensionError("ragged cost matrix");
    for (std::size_t k = 0; k < c.entities; ++k) c.at(i, k) = rows[i][k];
  }
  return c;
}

std::size_t QuantityVector::total() const { return std::accumulate(q.begin(), q.end(), std::size_t{0}); }

CostMatrix compute_cost_matrix(const BoundaryScores& scores, const TypeDistribution& types,
                               std::span<const EntityAnnotation> gold) {
  if (gold.empty()) throw std::invalid_argument("cost matrix needs at least one gold entity");
  const std::size_t m = scores.left.rows();
  const std::size_t n = scores.left.cols();
  const std::size_t real_types = types.none_class();
  CostMatrix c(m, gold.size());
  for (std::size_t k = 0; k < gold.size(); ++k) {
    const auto& e = gold[k];
    if (e.left > e.right || e.right >= n || e.type_id >= real_types) {
      throw AnnotationError("gold entity (" + std::to_string(e.left) + ", " +
                            std::to_string(e.right) + ", " + std::to_string(e.type_id) +
                            ") outside a sentence of length " + std::to_string(n) + " with " +
                            std::to_string(real_types) + " types");
    }
    for (std::size_t i = 0; i < m; ++i) {
      c.at(i, k) = -(types.probs.at(i, e.type_id) + scores.left.at(i, e.left) +
                     scores.right.at(i, e.right));
    }
  }
  return c;
}

QuantityVector allocate_quantities(std::size_t entities, std::size_t queries, double ratio,
                                   std::mt19937_64& rng) {
  if (entities < 1 || queries < 1) throw std::invalid_argument("need at least one entity and query");
  if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("ratio must lie in (0, 1]");
  QuantityVector out;
  const auto total = static_cast<std::size_t>(std::lround(static_cast<double>(queries) * ratio));
  if (entities > queries) {
    out.q.assign(entities, 1);
    out.overflow = true;
    return out;
  }
  if (entities >= total) {
    out.q.assign(entities, 1);
    return out;
  }
  const std::size_t base = total / entities;
  out.q.assign(entities, base);
  std::uniform_int_distribution<std::size_t> pick(0, entities - 1);
  for (std::size_t r = total - base * entities; r > 0; --r) ++out.q[pick(rng)];
  return out;
}

QuantityVector allocate_quantities(std::size_t entities, std::size_t queries, double ratio,
                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return allocate_quantities(entities, queries, ratio, rng);
}

std::vector<std::size_t> hungarian(std::size_t rows, std::size_t cols,
                                   std::span<const double> cost) {
  if (rows > cols) throw InfeasibleError("hungarian: more rows than columns");
  if (cost.size() != rows * cols) throw DimensionError("hungarian: cost size mismatch");
  const double inf = std::numeric_limits<double>::infinity();
  // Potentials and matching use 1-based indices; column 0 is a sentinel.
  std::vector<double> u(rows + 1, 0.0), v(cols + 1, 0.0);
  std::vector<std::size_t> owner(cols + 1, 0), way(cols + 1, 0);
  for (std::size_t i = 1; i <= rows; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(cols + 1, inf);
    std::vector<char> used(cols + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = owner[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      if (j1 == 0) throw NumericError("hungarian: non-finite cost entry");
      for (std::size_t j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> match(rows, 0);
  for (std::size_t j = 1; j <= cols; ++j) {
    if (owner[j] != 0) match[owner[j] - 1] = j - 1;
  }
  return match;
}

AssignmentResult solve_one_to_many_lap(const CostMatrix& cost, const QuantityVector& quantities) {
  check_quantities(cost, quantities);
  // Slot s stands for one copy of entity slot_entity[s].
  std::vector<std::size_t> slot_entity;
  for (std::size_t k = 0; k < cost.entities; ++k) slot_entity.insert(slot_entity.end(), quantities.q[k], k);
  const std::size_t slots = slot_entity.size();
  std::vector<double> replicated(slots * cost.queries);
  for (std::size_t s = 0; s < slots; ++s)
    for (std::size_t i = 0; i < cost.queries; ++i)
      replicated[s * cost.queries + i] = cost.at(i, slot_entity[s]);

  const auto match = hungarian(slots, cost.queries, replicated);
  std::vector<std::size_t> labels(cost.queries, cost.entities);
  for (std::size_t s = 0; s < slots; ++s) labels[match[s]] = slot_entity[s];
  return result_from_labels(cost, std::move(labels));
}

AssignmentResult solve_capped_lap(const CostMatrix& cost) {
  if (cost.entities < cost.queries) throw InfeasibleError("capped assignment needs G >= M");
  const auto match = hungarian(cost.queries, cost.entities, cost.values);
  return result_from_labels(cost, match);
}

AssignmentResult brute_force_lap(const CostMatrix& cost, const QuantityVector& quantities) {
  if (cost.queries > kBruteForceLimit || quantities.total() > kBruteForceLimit) {
    throw CapacityError("brute_force_lap enumerates at most " + std::to_string(kBruteForceLimit) +
                        " queries and slots");
  }
  check_quantities(cost, quantities);
  const std::size_t m = cost.queries;
  const std::size_t g = cost.entities;
  std::vector<std::size_t> remaining = quantities.q;
  std::size_t still_needed = quantities.total();
  std::vector<std::size_t> current(m, g), best;
  double best_cost = std::numeric_limits<double>::infinity();

  // Depth-first over queries; each query takes an entity with capacity left or None.
  auto visit = [&](auto&& self, std::size_t i, double partial) -> void {
    if (still_needed > m - i) return;
    if (i == m) {
      if (partial < best_cost) {
        best_cost = partial;
        best = current;
      }
      return;
    }
    for (std::size_t k = 0; k < g; ++k) {
      if (remaining[k] == 0) continue;
      --remaining[k];
      --still_needed;
      current[i] = k;
      self(self, i + 1, partial + cost.at(i, k));
      ++remaining[k];
      ++still_needed;
    }
    current[i] = g;
    self(self, i + 1, partial);
  };
  visit(visit, 0, 0.0);
  return result_from_labels(cost, std::move(best));
}

std::vector<std::optional<EntityAnnotation>> labels_from_assignment(
    const AssignmentResult& result, std::span<const EntityAnnotation> gold) {
  if (gold.size() != result.entities) {
    throw std::invalid_argument("gold list does not match the assignment's entity count");
  }
  std::vector<std::optional<EntityAnnotation>> labels(result.queries);
  for (std::size_t i = 0; i < result.queries; ++i) {
    if (result.labels[i] < result.entities) labels[i] = gold[result.labels[i]];
  }
  return labels;
}

}  // namespace piqn
