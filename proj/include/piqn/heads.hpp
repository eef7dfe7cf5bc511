#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "piqn/encoder.hpp"
#include "piqn/tensor.hpp"

namespace piqn {

struct BoundaryHead {
  Tensor query_proj;  // h x h
  Tensor word_proj;   // h x h
  Tensor scorer;      // h
  Tensor bias;        // scalar
};

// Entity pointer and entity classifier for one word-level layer.
struct HeadParams {
  BoundaryHead left;
  BoundaryHead right;
  Tensor type_query_proj;  // h x h
  Tensor type_scorer;      // 3h x (|E| + 1)
  Tensor type_bias;        // |E| + 1

  static HeadParams init(const ModelConfig& config, std::mt19937_64& rng);
  void collect(std::vector<NamedParameter>& out, const std::string& prefix) const;
};

// P[i][j]: probability that word j is the left (right) boundary of query i's entity.
struct BoundaryScores {
  Tensor left;   // M x N
  Tensor right;  // M x N
};

// Row-stochastic M x (|E| + 1); the last class is None.
struct TypeDistribution {
  Tensor probs;

  std::size_t none_class() const { return probs.cols() - 1; }
};

struct Prediction {
  std::size_t query_id = 0;
  std::size_t left = 0;
  std::size_t right = 0;
  std::size_t type_id = 0;
  double left_prob = 0.0;
  double right_prob = 0.0;
  double type_prob = 0.0;
};

BoundaryScores boundary_pointer(const Tensor& query_states, const Tensor& word_states,
                                const HeadParams& params);

TypeDistribution entity_classifier(const Tensor& query_states, const Tensor& word_states,
                                   const BoundaryScores& scores, const HeadParams& params);

struct DecodeThresholds {
  double localization = 0.6;
  double classification = 0.8;
};

// Argmax boundaries and type per query, then threshold filtering, removal of
// None and inverted spans, and one prediction per distinct span (highest type
// probability wins, lowest query id on ties). Output is ordered by query id.
std::vector<Prediction> decode_entities(const BoundaryScores& scores, const TypeDistribution& types,
                                        const DecodeThresholds& thresholds = {});

// Lowest index wins ties.
std::size_t argmax_row(const Tensor& matrix, std::size_t row);

}  // namespace piqn
