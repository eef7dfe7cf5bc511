#include "piqn/serialization.hpp"

#include <algorithm>
#include <array>

#include "piqn/errors.hpp"

namespace piqn {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::array<std::string_view, 13> kModelKeys{
    "hidden",     "queries",    "base_layers",       "layers",
    "heads",      "ffn_hidden", "vocab_size",        "max_length",
    "type_count", "one_way_attention", "query_interaction", "query_init_std", "seed"};

constexpr std::array<std::string_view, 12> kTrainKeys{
    "epochs",        "learning_rate", "warmup_fraction", "batch_size",
    "seed",          "loc_threshold", "cls_threshold",   "assignment_mode",
    "quantity_mode", "ratio",         "share_final_assignment", "max_grad_norm"};

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

}  // namespace

std::string to_string(AssignmentMode mode) {
  return mode == AssignmentMode::kDynamic ? "dynamic" : "static";
}

std::string to_string(QuantityMode mode) {
  return mode == QuantityMode::kOneToMany ? "one-to-many" : "one-to-one";
}

AssignmentMode parse_assignment_mode(std::string_view text) {
  if (text == "dynamic") return AssignmentMode::kDynamic;
  if (text == "static") return AssignmentMode::kStatic;
  throw ConfigError("unknown assignment mode '" + std::string(text) + "'");
}

QuantityMode parse_quantity_mode(std::string_view text) {
  if (text == "one-to-many" || text == "one_to_many") return QuantityMode::kOneToMany;
  if (text == "one-to-one" || text == "one_to_one") return QuantityMode::kOneToOne;
  throw ConfigError("unknown quantity mode '" + std::string(text) + "'");
}

ordered_json to_json(const ModelConfig& c) {
  ordered_json j;
  j["hidden"] = c.hidden;
  j["queries"] = c.queries;
  j["base_layers"] = c.base_layers;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["ffn_hidden"] = c.ffn_hidden;
  j["vocab_size"] = c.vocab_size;
  j["max_length"] = c.max_length;
  j["type_count"] = c.type_count;
  j["one_way_attention"] = c.one_way_attention;
  j["query_interaction"] = c.query_interaction;
  j["query_init_std"] = c.query_init_std;
  j["seed"] = c.seed;
  return j;
}

ordered_json to_json(const TrainConfig& c) {
  ordered_json j;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["warmup_fraction"] = c.warmup_fraction;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["loc_threshold"] = c.loc_threshold;
  j["cls_threshold"] = c.cls_threshold;
  j["assignment_mode"] = to_string(c.assignment_mode);
  j["quantity_mode"] = to_string(c.quantity_mode);
  j["ratio"] = c.ratio;
  j["share_final_assignment"] = c.share_final_assignment;
  j["max_grad_norm"] = c.max_grad_norm;
  return j;
}

void merge_json(const json& j, ModelConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  read(j, "hidden", c.hidden);
  read(j, "queries", c.queries);
  read(j, "base_layers", c.base_layers);
  read(j, "layers", c.layers);
  read(j, "heads", c.heads);
  read(j, "ffn_hidden", c.ffn_hidden);
  read(j, "vocab_size", c.vocab_size);
  read(j, "max_length", c.max_length);
  read(j, "type_count", c.type_count);
  read(j, "one_way_attention", c.one_way_attention);
  read(j, "query_interaction", c.query_interaction);
  read(j, "query_init_std", c.query_init_std);
  read(j, "seed", c.seed);
}

void merge_json(const json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  read(j, "epochs", c.epochs);
  read(j, "learning_rate", c.learning_rate);
  read(j, "warmup_fraction", c.warmup_fraction);
  read(j, "batch_size", c.batch_size);
  read(j, "seed", c.seed);
  read(j, "loc_threshold", c.loc_threshold);
  read(j, "cls_threshold", c.cls_threshold);
  std::string mode;
  read(j, "assignment_mode", mode);
  if (!mode.empty()) c.assignment_mode = parse_assignment_mode(mode);
  mode.clear();
  read(j, "quantity_mode", mode);
  if (!mode.empty()) c.quantity_mode = parse_quantity_mode(mode);
  read(j, "ratio", c.ratio);
  read(j, "share_final_assignment", c.share_final_assignment);
  read(j, "max_grad_norm", c.max_grad_norm);
}

bool is_model_config_key(std::string_view key) {
  return std::find(kModelKeys.begin(), kModelKeys.end(), key) != kModelKeys.end();
}

bool is_train_config_key(std::string_view key) {
  return std::find(kTrainKeys.begin(), kTrainKeys.end(), key) != kTrainKeys.end();
}

}  // namespace piqn
