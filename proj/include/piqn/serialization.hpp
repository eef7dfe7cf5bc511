#pragma once

#include <string>
#include <string_view>

#include "json.hpp"
#include "piqn/encoder.hpp"
#include "piqn/training.hpp"

namespace piqn {

std::string to_string(AssignmentMode mode);
std::string to_string(QuantityMode mode);
AssignmentMode parse_assignment_mode(std::string_view text);
QuantityMode parse_quantity_mode(std::string_view text);

nlohmann::ordered_json to_json(const ModelConfig& config);
nlohmann::ordered_json to_json(const TrainConfig& config);

// Fields absent from `j` keep the values already in `config`; keys belonging
// to other sections are ignored. Ill-typed values raise ConfigError.
void merge_json(const nlohmann::json& j, ModelConfig& config);
void merge_json(const nlohmann::json& j, TrainConfig& config);

bool is_model_config_key(std::string_view key);
bool is_train_config_key(std::string_view key);

}  // namespace piqn
