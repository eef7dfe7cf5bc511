#include "piqn/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "piqn/assignment.hpp"
#include "piqn/errors.hpp"
#include "piqn/evaluation.hpp"
#include "piqn/serialization.hpp"

namespace piqn {

void TrainConfig::validate() const {
  if (!(loc_threshold >= 0.0 && loc_threshold <= 1.0) ||
      !(cls_threshold >= 0.0 && cls_threshold <= 1.0)) {
    throw ConfigError("thresholds must lie in [0, 1]");
  }
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("ratio must lie in (0, 1]");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    throw ConfigError("warmup_fraction must lie in [0, 1]");
  }
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(max_grad_norm >= 0.0)) throw ConfigError("max_grad_norm must be non-negative");
}

// ---- model ----------------------------------------------------------------

Model Model::init(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  Model m;
  m.config = config;
  m.encoder = EncoderParams::init(config, rng);
  for (std::size_t t = 0; t < config.layers; ++t) m.heads.push_back(HeadParams::init(config, rng));
  return m;
}

std::vector<NamedParameter> Model::parameters() const {
  std::vector<NamedParameter> out;
  encoder.collect(out);
  for (std::size_t t = 0; t < heads.size(); ++t) heads[t].collect(out, "head." + std::to_string(t) + ".");
  return out;
}

std::vector<LayerPrediction> forward(const Model& model, std::span<const std::size_t> token_ids) {
  const LayerOutputs layers = encode_sentence(token_ids, model.config, model.encoder);
  std::vector<LayerPrediction> out;
  out.reserve(layers.size());
  for (std::size_t t = 0; t < layers.size(); ++t) {
    BoundaryScores b = boundary_pointer(layers.queries[t], layers.words[t], model.heads[t]);
    TypeDistribution c = entity_classifier(layers.queries[t], layers.words[t], b, model.heads[t]);
    out.push_back({std::move(b), std::move(c)});
  }
  return out;
}

std::vector<Prediction> predict(const Model& model, std::span<const std::size_t> token_ids,
                                const DecodeThresholds& thresholds) {
  NoGradGuard no_grad;
  const auto layers = forward(model, token_ids);
  return decode_entities(layers.back().boundaries, layers.back().types, thresholds);
}

// ---- losses ---------------------------------------------------------------

Tensor boundary_loss(const BoundaryScores& scores, const QueryLabels& labels) {
  const std::size_t m = scores.left.rows();
  if (labels.size() != m) throw DimensionError("boundary_loss: label count differs from queries");
  std::vector<std::size_t> left(m, 0), right(m, 0);
  std::unique_ptr<bool[]> mask(new bool[m]);
  for (std::size_t i = 0; i < m; ++i) {
    mask[i] = labels[i].has_value();
    if (mask[i]) {
      left[i] = labels[i]->left;
      right[i] = labels[i]->right;
    }
  }
  const std::span<const bool> mask_view(mask.get(), m);
  return add(binary_cross_entropy_rows(scores.left, left, mask_view),
             binary_cross_entropy_rows(scores.right, right, mask_view));
}

Tensor classification_loss(const TypeDistribution& types, const QueryLabels& labels) {
  const std::size_t m = types.probs.rows();
  if (labels.size() != m) throw DimensionError("classification_loss: label count differs from queries");
  std::vector<std::size_t> target(m);
  for (std::size_t i = 0; i < m; ++i) target[i] = labels[i] ? labels[i]->type_id : types.none_class();
  return negative_log_likelihood_rows(types.probs, target);
}

Tensor total_loss(std::span<const Tensor> boundary, std::span<const Tensor> classification) {
  if (boundary.size() != classification.size() || boundary.empty()) {
    throw std::invalid_argument("total_loss needs one boundary and one classification loss per layer");
  }
  Tensor total = add(classification[0], boundary[0]);
  for (std::size_t t = 1; t < boundary.size(); ++t) {
    total = add(total, add(classification[t], boundary[t]));
  }
  return total;
}

QueryLabels static_labels(std::span<const EntityAnnotation> gold, std::size_t queries) {
  std::vector<EntityAnnotation> ordered(gold.begin(), gold.end());
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    return std::pair(a.left, a.right) < std::pair(b.left, b.right);
  });
  QueryLabels labels(queries);
  for (std::size_t k = 0; k < std::min(queries, ordered.size()); ++k) labels[k] = ordered[k];
  return labels;
}

namespace {

QueryLabels dynamic_labels(const LayerPrediction& layer, std::span<const EntityAnnotation> gold,
                           const QuantityVector& quantities) {
  const CostMatrix cost = compute_cost_matrix(layer.boundaries, layer.types, gold);
  const AssignmentResult result =
      quantities.overflow ? solve_capped_lap(cost) : solve_one_to_many_lap(cost, quantities);
  return labels_from_assignment(result, gold);
}

}  // namespace

std::vector<QueryLabels> assign_labels_per_layer(std::span<const LayerPrediction> layers,
                                                 std::span<const EntityAnnotation> gold,
                                                 const TrainConfig& config, std::mt19937_64& rng) {
  if (layers.empty()) return {};
  const std::size_t m = layers.front().types.probs.rows();
  if (gold.empty()) return std::vector<QueryLabels>(layers.size(), QueryLabels(m));
  if (config.assignment_mode == AssignmentMode::kStatic) {
    return std::vector<QueryLabels>(layers.size(), static_labels(gold, m));
  }
  QuantityVector quantities;
  if (config.quantity_mode == QuantityMode::kOneToOne || gold.size() > m) {
    quantities.q.assign(gold.size(), 1);
    quantities.overflow = gold.size() > m;
  } else {
    quantities = allocate_quantities(gold.size(), m, config.ratio, rng);
  }
  if (config.share_final_assignment) {
    return std::vector<QueryLabels>(layers.size(), dynamic_labels(layers.back(), gold, quantities));
  }
  std::vector<QueryLabels> out;
  out.reserve(layers.size());
  for (const auto& layer : layers) out.push_back(dynamic_labels(layer, gold, quantities));
  return out;
}

SentenceLoss sentence_loss(const Model& model, std::span<const std::size_t> token_ids,
                           std::span<const EntityAnnotation> gold, const TrainConfig& config,
                           std::mt19937_64& rng) {
  const auto layers = forward(model, token_ids);
  const auto labels = assign_labels_per_layer(layers, gold, config, rng);
  std::vector<Tensor> boundary, classification;
  SentenceLoss out;
  for (std::size_t t = 0; t < layers.size(); ++t) {
    boundary.push_back(boundary_loss(layers[t].boundaries, labels[t]));
    classification.push_back(classification_loss(layers[t].types, labels[t]));
    out.report.boundary.push_back(boundary.back().item());
    out.report.classification.push_back(classification.back().item());
  }
  out.loss = total_loss(boundary, classification);
  out.report.total = out.loss.item();
  return out;
}

// ---- optimization ---------------------------------------------------------

double scheduled_learning_rate(const TrainConfig& config, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return config.learning_rate;
  const auto warmup = static_cast<std::size_t>(
      std::lround(config.warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) {
    return config.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  if (step >= total_steps) return 0.0;
  return config.learning_rate * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

AdamOptimizer::AdamOptimizer(std::vector<NamedParameter> params, std::size_t total_steps)
    : params_(std::move(params)) {
  state_.total_steps = total_steps;
  for (const auto& p : params_) {
    state_.first_moment.emplace_back(p.tensor.numel(), 0.0);
    state_.second_moment.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double AdamOptimizer::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_)
    for (double g : p.tensor.grad()) sq += g * g;
  return std::sqrt(sq);
}

double AdamOptimizer::step(const TrainConfig& config) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  const double lr = scheduled_learning_rate(config, state_.step, state_.total_steps);
  double clip = 1.0;
  if (config.max_grad_norm > 0.0) {
    const double norm = grad_norm();
    if (norm > config.max_grad_norm) clip = config.max_grad_norm / norm;
  }
  ++state_.step;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(state_.step));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(state_.step));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k].tensor;
    if (!p.has_grad()) continue;
    auto values = p.data();
    const auto grad = p.grad();
    auto& m1 = state_.first_moment[k];
    auto& m2 = state_.second_moment[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i] * clip;
      m1[i] = kBeta1 * m1[i] + (1.0 - kBeta1) * g;
      m2[i] = kBeta2 * m2[i] + (1.0 - kBeta2) * g * g;
      values[i] -= lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + kEps);
    }
  }
  zero_grad();
  return lr;
}

std::size_t steps_per_epoch(std::size_t dataset_size, std::size_t batch_size) {
  return (dataset_size + batch_size - 1) / batch_size;
}

TrainingSession::TrainingSession(Model model_in, DatasetMeta meta_in, TrainConfig config_in,
                                 std::size_t dataset_size)
    : model(std::move(model_in)),
      meta(std::move(meta_in)),
      config(config_in),
      optimizer(model.parameters(), config.epochs * steps_per_epoch(dataset_size, config.batch_size)),
      rng(config.seed) {
  config.validate();
}

std::vector<std::vector<Prediction>> predict_corpus(const Model& model, const Vocabulary& vocab,
                                                    std::span<const SentenceExample> examples,
                                                    const DecodeThresholds& thresholds) {
  std::vector<std::vector<Prediction>> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const auto ids = vocab.encode(ex.tokens);
    out.push_back(predict(model, ids, thresholds));
  }
  return out;
}

EpochMetrics train_epoch(std::span<const SentenceExample> examples, TrainingSession& session) {
  if (examples.empty()) throw std::invalid_argument("train_epoch: empty dataset");
  const auto& config = session.config;
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), session.rng);
  const auto batches = batch_pad(examples, session.meta.vocab, config.batch_size,
                                 Vocabulary::kPad, order);

  EpochMetrics metrics;
  metrics.epoch = ++session.epochs_done;
  double loss_sum = 0.0;
  session.optimizer.zero_grad();
  for (const auto& batch : batches) {
    const double weight = 1.0 / static_cast<double>(batch.size());
    for (std::size_t r = 0; r < batch.size(); ++r) {
      SentenceLoss sl = sentence_loss(session.model, batch.row(r), batch.gold[r], config, session.rng);
      if (!std::isfinite(sl.report.total)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(metrics.epoch) + ", step " +
                           std::to_string(session.optimizer.state().step) + ", example " +
                           std::to_string(batch.example_indices[r]));
      }
      loss_sum += sl.report.total;
      backward(scale(sl.loss, weight));
    }
    metrics.learning_rate = session.optimizer.step(config);
  }
  metrics.mean_loss = loss_sum / static_cast<double>(examples.size());

  const auto predictions =
      predict_corpus(session.model, session.meta.vocab, examples, config.thresholds());
  metrics.train_f1 = evaluate_corpus(predictions, examples).ner.f1();
  return metrics;
}

// ---- checkpoints ----------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const TrainingSession& session) {
  nlohmann::ordered_json j;
  j["format"] = kCheckpointFormat;
  j["model_config"] = to_json(session.model.config);
  j["train_config"] = to_json(session.config);
  j["epochs_done"] = session.epochs_done;
  j["types"] = session.meta.types;
  j["vocab"] = session.meta.vocab.words();
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  nlohmann::ordered_json first = nlohmann::ordered_json::object();
  nlohmann::ordered_json second = nlohmann::ordered_json::object();
  const auto& named = session.optimizer.parameters();
  const auto& state = session.optimizer.state();
  for (std::size_t k = 0; k < named.size(); ++k) {
    const auto& t = named[k].tensor;
    params[named[k].name]["shape"] = t.shape();
    params[named[k].name]["data"] = std::vector<double>(t.data().begin(), t.data().end());
    first[named[k].name] = state.first_moment[k];
    second[named[k].name] = state.second_moment[k];
  }
  j["parameters"] = std::move(params);
  j["optimizer"]["step"] = state.step;
  j["optimizer"]["total_steps"] = state.total_steps;
  j["optimizer"]["first_moment"] = std::move(first);
  j["optimizer"]["second_moment"] = std::move(second);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
  if (!out) throw ConfigError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  if (j.value("format", std::string()) != kCheckpointFormat) {
    throw ConfigError("checkpoint " + path.string() + " has an unsupported format tag");
  }
  try {
    Checkpoint c;
    merge_json(j.at("model_config"), c.model.config);
    merge_json(j.at("train_config"), c.config);
    c.epochs_done = j.at("epochs_done").get<std::size_t>();
    c.meta.types = j.at("types").get<std::vector<std::string>>();
    c.meta.vocab = Vocabulary::from_words(j.at("vocab").get<std::vector<std::string>>());
    c.model = Model::init(c.model.config);
    const auto named = c.model.parameters();
    const auto& params = j.at("parameters");
    const auto& opt = j.at("optimizer");
    c.optimizer.step = opt.at("step").get<std::size_t>();
    c.optimizer.total_steps = opt.at("total_steps").get<std::size_t>();
    for (const auto& p : named) {
      const auto& entry = params.at(p.name);
      if (entry.at("shape").get<Shape>() != p.tensor.shape()) {
        throw ConfigError("checkpoint parameter " + p.name + " has the wrong shape");
      }
      auto values = entry.at("data").get<std::vector<double>>();
      Tensor handle = p.tensor;
      auto dst = handle.data();
      if (values.size() != dst.size()) throw ConfigError("checkpoint parameter " + p.name + " is truncated");
      std::copy(values.begin(), values.end(), dst.begin());
      c.optimizer.first_moment.push_back(opt.at("first_moment").at(p.name).get<std::vector<double>>());
      c.optimizer.second_moment.push_back(opt.at("second_moment").at(p.name).get<std::vector<double>>());
    }
    if (params.size() != named.size()) throw ConfigError("checkpoint holds unexpected parameters");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint " + path.string() + " is incomplete: " + e.what());
  }
}

}  // namespace piqn
