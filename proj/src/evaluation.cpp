#include "piqn/evaluation.hpp"

#include <algorithm>
#include <stdexcept>

namespace piqn {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

nlohmann::ordered_json prf(const MetricCounts& c) {
  nlohmann::ordered_json j;
  j["p"] = c.precision();
  j["r"] = c.recall();
  j["f1"] = c.f1();
  return j;
}

nlohmann::ordered_json counts(const MetricCounts& c) {
  nlohmann::ordered_json j;
  j["gold"] = c.gold;
  j["predicted"] = c.predicted;
  j["correct"] = c.correct;
  return j;
}

}  // namespace

double MetricCounts::precision() const { return ratio(correct, predicted); }
double MetricCounts::recall() const { return ratio(correct, gold); }

double MetricCounts::f1() const {
  const double p = precision(), r = recall();
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

MetricCounts& MetricCounts::operator+=(const MetricCounts& other) {
  gold += other.gold;
  predicted += other.predicted;
  correct += other.correct;
  return *this;
}

EvalReport& EvalReport::operator+=(const EvalReport& other) {
  ner += other.ner;
  localization += other.localization;
  classification += other.classification;
  return *this;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["ner"] = prf(ner);
  j["loc"] = prf(localization);
  j["cls"] = prf(classification);
  j["counts"]["ner"] = counts(ner);
  j["counts"]["loc"] = counts(localization);
  j["counts"]["cls"] = counts(classification);
  return j;
}

MetricCounts strict_match(std::span<const Prediction> predictions,
                          std::span<const EntityAnnotation> gold) {
  MetricCounts c{gold.size(), predictions.size(), 0};
  std::vector<bool> used(gold.size(), false);
  for (const auto& p : predictions) {
    for (std::size_t k = 0; k < gold.size(); ++k) {
      if (!used[k] && gold[k].left == p.left && gold[k].right == p.right &&
          gold[k].type_id == p.type_id) {
        used[k] = true;
        ++c.correct;
        break;
      }
    }
  }
  return c;
}

SubtaskCounts subtask_metrics(std::span<const Prediction> predictions,
                              std::span<const EntityAnnotation> gold) {
  SubtaskCounts out;
  out.localization = {gold.size(), predictions.size(), 0};
  std::vector<bool> used(gold.size(), false);
  std::size_t typed = 0;
  for (const auto& p : predictions) {
    // Prefer a gold entry that also agrees on type so a span annotated with
    // two types is credited correctly.
    std::size_t match = gold.size();
    for (std::size_t k = 0; k < gold.size(); ++k) {
      if (used[k] || gold[k].left != p.left || gold[k].right != p.right) continue;
      if (gold[k].type_id == p.type_id) {
        match = k;
        break;
      }
      if (match == gold.size()) match = k;
    }
    if (match == gold.size()) continue;
    used[match] = true;
    ++out.localization.correct;
    if (gold[match].type_id == p.type_id) ++typed;
  }
  out.classification = {out.localization.correct, out.localization.correct, typed};
  return out;
}

EvalReport evaluate_sentence(std::span<const Prediction> predictions,
                             std::span<const EntityAnnotation> gold) {
  EvalReport r;
  r.ner = strict_match(predictions, gold);
  const auto sub = subtask_metrics(predictions, gold);
  r.localization = sub.localization;
  r.classification = sub.classification;
  return r;
}

EvalReport evaluate_corpus(std::span<const std::vector<Prediction>> predictions,
                           std::span<const SentenceExample> examples) {
  if (predictions.size() != examples.size()) {
    throw std::invalid_argument("prediction and example counts differ");
  }
  EvalReport total;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    total += evaluate_sentence(predictions[i], examples[i].entities);
  }
  return total;
}

double normalized_center(std::size_t left, std::size_t right, std::size_t length) {
  if (length <= 1) return 0.5;
  const double c = static_cast<double>(left + right) / (2.0 * static_cast<double>(length - 1));
  return std::clamp(c, 0.0, 1.0);
}

std::vector<QueryAffinity> query_affinity_stats(
    std::span<const std::vector<Prediction>> predictions, std::span<const std::size_t> lengths,
    std::size_t queries, std::size_t type_count) {
  if (predictions.size() != lengths.size()) {
    throw std::invalid_argument("prediction and length counts differ");
  }
  std::vector<QueryAffinity> stats(queries);
  for (std::size_t q = 0; q < queries; ++q) {
    stats[q].query_id = q;
    stats[q].type_counts.assign(type_count, 0);
  }
  std::vector<std::size_t> per_type(type_count, 0);
  for (std::size_t s = 0; s < predictions.size(); ++s) {
    for (const auto& p : predictions[s]) {
      if (p.query_id >= queries || p.type_id >= type_count) {
        throw std::out_of_range("prediction query or type id outside the model's range");
      }
      auto& a = stats[p.query_id];
      ++a.type_counts[p.type_id];
      ++per_type[p.type_id];
      a.centers.push_back(normalized_center(p.left, p.right, lengths[s]));
    }
  }
  for (auto& a : stats) {
    a.type_share.resize(type_count);
    for (std::size_t t = 0; t < type_count; ++t) a.type_share[t] = ratio(a.type_counts[t], per_type[t]);
  }
  return stats;
}

nlohmann::ordered_json affinity_to_json(std::span<const QueryAffinity> stats,
                                        std::span<const std::string> types) {
  nlohmann::ordered_json j;
  j["types"] = std::vector<std::string>(types.begin(), types.end());
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& a : stats) {
    nlohmann::ordered_json row;
    row["query_id"] = a.query_id;
    row["predictions"] = a.prediction_count();
    row["type_counts"] = a.type_counts;
    row["type_share"] = a.type_share;
    row["centers"] = a.centers;
    rows.push_back(std::move(row));
  }
  j["queries"] = std::move(rows);
  return j;
}

}  // namespace piqn
