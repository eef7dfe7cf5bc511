#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "piqn/annotation.hpp"
#include "piqn/data.hpp"
#include "piqn/encoder.hpp"
#include "piqn/heads.hpp"

namespace piqn {

enum class AssignmentMode { kDynamic, kStatic };
enum class QuantityMode { kOneToMany, kOneToOne };

struct TrainConfig {
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
  double warmup_fraction = 0.1;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  double loc_threshold = 0.6;
  double cls_threshold = 0.8;
  AssignmentMode assignment_mode = AssignmentMode::kDynamic;
  QuantityMode quantity_mode = QuantityMode::kOneToMany;
  double ratio = 0.75;  // Q = round(M * ratio)
  bool share_final_assignment = false;
  double max_grad_norm = 0.0;  // 0 disables clipping

  DecodeThresholds thresholds() const { return {loc_threshold, cls_threshold}; }
  void validate() const;
};

struct Model {
  ModelConfig config;
  EncoderParams encoder;
  std::vector<HeadParams> heads;  // one per word-level layer

  static Model init(const ModelConfig& config);
  std::vector<NamedParameter> parameters() const;
};

struct LayerPrediction {
  BoundaryScores boundaries;
  TypeDistribution types;
};

// Heads applied to every word-level layer.
std::vector<LayerPrediction> forward(const Model& model, std::span<const std::size_t> token_ids);

// Final-layer decoding for one sentence.
std::vector<Prediction> predict(const Model& model, std::span<const std::size_t> token_ids,
                                const DecodeThresholds& thresholds);

// nullopt is the None label.
using QueryLabels = std::vector<std::optional<EntityAnnotation>>;

// Binary cross entropy over every word for both boundaries of each query with
// a real label. None-labeled queries do not contribute.
Tensor boundary_loss(const BoundaryScores& scores, const QueryLabels& labels);

// Cross entropy of each query's label; None-labeled queries target the None class.
Tensor classification_loss(const TypeDistribution& types, const QueryLabels& labels);

// Sum over layers of classification plus boundary loss.
Tensor total_loss(std::span<const Tensor> boundary, std::span<const Tensor> classification);

// Label assignment for each layer. `rng` drives the quantity split, drawn once
// per call and shared by all layers.
std::vector<QueryLabels> assign_labels_per_layer(std::span<const LayerPrediction> layers,
                                                 std::span<const EntityAnnotation> gold,
                                                 const TrainConfig& config, std::mt19937_64& rng);

// Entity k goes to query k in order of occurrence; the rest get None.
QueryLabels static_labels(std::span<const EntityAnnotation> gold, std::size_t queries);

struct LossReport {
  std::vector<double> boundary;        // per layer
  std::vector<double> classification;  // per layer
  double total = 0.0;
};

struct SentenceLoss {
  Tensor loss;
  LossReport report;
};

SentenceLoss sentence_loss(const Model& model, std::span<const std::size_t> token_ids,
                           std::span<const EntityAnnotation> gold, const TrainConfig& config,
                           std::mt19937_64& rng);

// Linear ramp to the peak over the warmup steps, then linear decay to zero.
double scheduled_learning_rate(const TrainConfig& config, std::size_t step, std::size_t total_steps);

struct OptimizerState {
  std::size_t step = 0;
  std::size_t total_steps = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<NamedParameter> params, std::size_t total_steps);

  // Applies one update using the parameters' accumulated gradients, then
  // clears them. Returns the learning rate used.
  double step(const TrainConfig& config);
  void zero_grad();
  double grad_norm() const;

  const OptimizerState& state() const { return state_; }
  OptimizerState& state() { return state_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }

 private:
  std::vector<NamedParameter> params_;
  OptimizerState state_;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_f1 = 0.0;
  double learning_rate = 0.0;
};

struct TrainingSession {
  Model model;
  DatasetMeta meta;
  TrainConfig config;
  AdamOptimizer optimizer;
  std::mt19937_64 rng;
  std::size_t epochs_done = 0;

  TrainingSession(Model model, DatasetMeta meta, TrainConfig config, std::size_t dataset_size);
};

std::size_t steps_per_epoch(std::size_t dataset_size, std::size_t batch_size);

// One pass over `examples` in a seeded shuffle, then strict F1 on them.
// Throws NumericError on a non-finite loss.
EpochMetrics train_epoch(std::span<const SentenceExample> examples, TrainingSession& session);

// Final-layer predictions for every example.
std::vector<std::vector<Prediction>> predict_corpus(const Model& model, const Vocabulary& vocab,
                                                    std::span<const SentenceExample> examples,
                                                    const DecodeThresholds& thresholds);

// ---- checkpoints ----------------------------------------------------------

inline constexpr const char* kCheckpointFormat = "piqn-checkpoint/1";

void save_checkpoint(const std::filesystem::path& path, const TrainingSession& session);

struct Checkpoint {
  Model model;
  DatasetMeta meta;
  TrainConfig config;
  OptimizerState optimizer;
  std::size_t epochs_done = 0;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace piqn
