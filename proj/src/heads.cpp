#include "piqn/heads.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <stdexcept>
#include <utility>

#include "piqn/errors.hpp"

namespace piqn {

namespace {

Tensor xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  return Tensor::normal({fan_in, fan_out}, 0.0, stddev, rng, true);
}

BoundaryHead init_boundary(std::size_t h, std::mt19937_64& rng) {
  BoundaryHead b;
  b.query_proj = xavier(h, h, rng);
  b.word_proj = xavier(h, h, rng);
  b.scorer = Tensor::normal({h}, 0.0, std::sqrt(1.0 / static_cast<double>(h)), rng, true);
  b.bias = Tensor::zeros({}, true);
  return b;
}

Tensor boundary_probs(const Tensor& query_states, const Tensor& word_states,
                      const BoundaryHead& head) {
  const Tensor q = matmul(query_states, head.query_proj);
  const Tensor w = matmul(word_states, head.word_proj);
  return sigmoid(add(pairwise_relu_score(q, w, head.scorer), head.bias));
}

}  // namespace

HeadParams HeadParams::init(const ModelConfig& config, std::mt19937_64& rng) {
  const std::size_t h = config.hidden;
  HeadParams p;
  p.left = init_boundary(h, rng);
  p.right = init_boundary(h, rng);
  p.type_query_proj = xavier(h, h, rng);
  p.type_scorer = xavier(3 * h, config.class_count(), rng);
  p.type_bias = Tensor::zeros({config.class_count()}, true);
  return p;
}

void HeadParams::collect(std::vector<NamedParameter>& out, const std::string& prefix) const {
  for (const auto& [name, b] : {std::pair{"left", &left}, std::pair{"right", &right}}) {
    const std::string base = prefix + name + ".";
    out.push_back({base + "query_proj", b->query_proj});
    out.push_back({base + "word_proj", b->word_proj});
    out.push_back({base + "scorer", b->scorer});
    out.push_back({base + "bias", b->bias});
  }
  out.push_back({prefix + "type.query_proj", type_query_proj});
  out.push_back({prefix + "type.scorer", type_scorer});
  out.push_back({prefix + "type.bias", type_bias});
}

BoundaryScores boundary_pointer(const Tensor& query_states, const Tensor& word_states,
                                const HeadParams& params) {
  return {boundary_probs(query_states, word_states, params.left),
          boundary_probs(query_states, word_states, params.right)};
}

TypeDistribution entity_classifier(const Tensor& query_states, const Tensor& word_states,
                                   const BoundaryScores& scores, const HeadParams& params) {
  // Boundary probabilities weight the words as-is, without renormalization.
  const std::array<Tensor, 3> parts{matmul(query_states, params.type_query_proj),
                                    matmul(scores.left, word_states),
                                    matmul(scores.right, word_states)};
  const Tensor features = relu(concat_cols(parts));
  const Tensor logits = add(matmul(features, params.type_scorer), params.type_bias);
  return {row_softmax(logits)};
}

std::size_t argmax_row(const Tensor& matrix, std::size_t row) {
  const std::size_t n = matrix.cols();
  if (n == 0) throw DimensionError("argmax over an empty row");
  std::size_t best = 0;
  for (std::size_t j = 1; j < n; ++j) {
    if (matrix.at(row, j) > matrix.at(row, best)) best = j;
  }
  return best;
}

std::vector<Prediction> decode_entities(const BoundaryScores& scores, const TypeDistribution& types,
                                        const DecodeThresholds& thresholds) {
  if (!(thresholds.localization >= 0.0 && thresholds.localization <= 1.0) ||
      !(thresholds.classification >= 0.0 && thresholds.classification <= 1.0)) {
    throw std::invalid_argument("decode thresholds must lie in [0, 1]");
  }
  const std::size_t m = scores.left.rows();
  if (scores.right.rows() != m || types.probs.rows() != m ||
      scores.right.cols() != scores.left.cols()) {
    throw DimensionError("decode_entities: score shapes disagree");
  }
  const std::size_t none = types.none_class();

  // Best candidate per span; filtering happens before deduplication.
  std::map<std::pair<std::size_t, std::size_t>, Prediction> by_span;
  for (std::size_t i = 0; i < m; ++i) {
    Prediction p;
    p.query_id = i;
    p.left = argmax_row(scores.left, i);
    p.right = argmax_row(scores.right, i);
    p.type_id = argmax_row(types.probs, i);
    p.left_prob = scores.left.at(i, p.left);
    p.right_prob = scores.right.at(i, p.right);
    p.type_prob = types.probs.at(i, p.type_id);
    if (p.type_id == none) continue;
    if (std::min(p.left_prob, p.right_prob) < thresholds.localization) continue;
    if (p.type_prob < thresholds.classification) continue;
    if (p.left > p.right) continue;
    auto [it, inserted] = by_span.try_emplace({p.left, p.right}, p);
    if (!inserted && p.type_prob > it->second.type_prob) it->second = p;
  }

  std::vector<Prediction> out;
  out.reserve(by_span.size());
  for (const auto& [span, p] : by_span) out.push_back(p);
  std::sort(out.begin(), out.end(),
            [](const Prediction& a, const Prediction& b) { return a.query_id < b.query_id; });
  return out;
}

}  // namespace piqn
