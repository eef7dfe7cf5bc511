#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "piqn/annotation.hpp"
#include "piqn/heads.hpp"

namespace piqn {

struct MetricCounts {
  std::size_t gold = 0;
  std::size_t predicted = 0;
  std::size_t correct = 0;

  // Zero when the denominator is zero.
  double precision() const;
  double recall() const;
  double f1() const;

  MetricCounts& operator+=(const MetricCounts& other);
  bool operator==(const MetricCounts&) const = default;
};

struct EvalReport {
  MetricCounts ner;
  MetricCounts localization;
  MetricCounts classification;

  EvalReport& operator+=(const EvalReport& other);
  nlohmann::ordered_json to_json() const;
};

// Exact (left, right, type) matches; each gold triple is consumed at most once.
MetricCounts strict_match(std::span<const Prediction> predictions,
                          std::span<const EntityAnnotation> gold);

struct SubtaskCounts {
  MetricCounts localization;
  MetricCounts classification;
};

// Localization ignores types. Classification is scored over the localized
// predictions only: both its gold and predicted counts equal the number of
// localized predictions.
SubtaskCounts subtask_metrics(std::span<const Prediction> predictions,
                              std::span<const EntityAnnotation> gold);

EvalReport evaluate_sentence(std::span<const Prediction> predictions,
                             std::span<const EntityAnnotation> gold);

// Micro-averaged over the corpus by summing counts.
EvalReport evaluate_corpus(std::span<const std::vector<Prediction>> predictions,
                           std::span<const SentenceExample> examples);

// Center of [left, right] mapped to [0, 1] over a sentence of `length` words.
double normalized_center(std::size_t left, std::size_t right, std::size_t length);

struct QueryAffinity {
  std::size_t query_id = 0;
  std::vector<std::size_t> type_counts;
  // Counts divided by the corpus-wide count of each type.
  std::vector<double> type_share;
  std::vector<double> centers;

  std::size_t prediction_count() const { return centers.size(); }
};

std::vector<QueryAffinity> query_affinity_stats(
    std::span<const std::vector<Prediction>> predictions, std::span<const std::size_t> lengths,
    std::size_t queries, std::size_t type_count);

nlohmann::ordered_json affinity_to_json(std::span<const QueryAffinity> stats,
                                        std::span<const std::string> types);

}  // namespace piqn
