#pragma once

// Dynamic label assignment between instance queries and gold entities.
//
// Each gold entity k may be taken by q_k queries and each query takes at most
// one entity. The one-to-many problem is reduced to a rectangular one-to-one
// problem by replicating entity columns q_k times and solved exactly with the
// Hungarian method. Queries left unmatched receive the None label.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "piqn/annotation.hpp"
#include "piqn/heads.hpp"

namespace piqn {

struct CostMatrix {
  std::size_t queries = 0;   // M
  std::size_t entities = 0;  // G
  std::vector<double> values;

  CostMatrix() = default;
  CostMatrix(std::size_t queries, std::size_t entities, double fill = 0.0)
      : queries(queries), entities(entities), values(queries * entities, fill) {}
  static CostMatrix from_rows(const std::vector<std::vector<double>>& rows);

  double at(std::size_t query, std::size_t entity) const { return values[query * entities + entity]; }
  double& at(std::size_t query, std::size_t entity) { return values[query * entities + entity]; }
};

struct QuantityVector {
  std::vector<std::size_t> q;
  // Set when there are more gold entities than queries; sum(q) then exceeds M.
  bool overflow = false;

  std::size_t total() const;
};

struct AssignmentResult {
  std::size_t queries = 0;
  std::size_t entities = 0;
  std::vector<std::uint8_t> assignment;  // M x G
  std::vector<std::uint8_t> extended;    // M x (G + 1); column G is None
  std::vector<std::size_t> labels;       // pi*: entity index per query, G for None
  double total_cost = 0.0;

  bool assigned(std::size_t query, std::size_t entity) const {
    return assignment[query * entities + entity] != 0;
  }
  bool is_none(std::size_t query) const { return labels[query] == entities; }
};

// Cost[i][k] = -(P_type[i][t_k] + P_left[i][l_k] + P_right[i][r_k]).
CostMatrix compute_cost_matrix(const BoundaryScores& scores, const TypeDistribution& types,
                               std::span<const EntityAnnotation> gold);

// Q = round(M * ratio) slots split across G entities, every share at least
// floor(Q / G) with the remainder drawn at random. Falls back to one slot per
// entity when G > Q.
QuantityVector allocate_quantities(std::size_t entities, std::size_t queries, double ratio,
                                   std::mt19937_64& rng);
QuantityVector allocate_quantities(std::size_t entities, std::size_t queries, double ratio,
                                   std::uint64_t seed);

// Exact minimum-cost one-to-many assignment. Throws InfeasibleError when
// sum(q) > M.
AssignmentResult solve_one_to_many_lap(const CostMatrix& cost, const QuantityVector& quantities);

// Exhaustive reference solver for M <= 8 and sum(q) <= 8.
AssignmentResult brute_force_lap(const CostMatrix& cost, const QuantityVector& quantities);

// Used when G > M: every query takes a distinct entity, some entities stay
// unassigned.
AssignmentResult solve_capped_lap(const CostMatrix& cost);

// Gold label per query; std::nullopt is the None label.
std::vector<std::optional<EntityAnnotation>> labels_from_assignment(
    const AssignmentResult& result, std::span<const EntityAnnotation> gold);

// Rectangular assignment kernel: rows <= cols, every row matched to a distinct
// column, minimal total cost. Returns the column chosen for each row.
std::vector<std::size_t> hungarian(std::size_t rows, std::size_t cols,
                                   std::span<const double> cost);

}  // namespace piqn
