#pragma once

// Operator commands. Each returns a process exit code:
//   0 success, 1 check failure, 2 usage or validation error, 3 numeric divergence.
// Machine-readable output goes to `out` as JSON lines; diagnostics go to `err`.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <set>
#include <string>

#include "piqn/data.hpp"
#include "piqn/encoder.hpp"
#include "piqn/tensor.hpp"
#include "piqn/training.hpp"

namespace piqn {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDiverged = 3;

inline constexpr const char* kConfigEnvVar = "PIQN_CONFIG";

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SyntheticSpec synthetic;

  std::string data_path;
  std::string meta_path;
  std::string checkpoint_path;
  std::string out_path;

  double stop_f1 = -1.0;  // train: stop once train F1 reaches this (negative disables)
  double eps = 1e-5;      // gradcheck finite-difference step
  std::size_t gradcheck_seeds = 10;
  bool inject_fault = false;  // gradcheck negative control

  // Model fields set explicitly by a flag or config file; eval and predict
  // reject checkpoints that disagree with them.
  std::set<std::string> explicit_model_fields;

  std::size_t assignable_quantity() const;
};

// Built-in defaults: M = 60, Q = 45, L = 5, thresholds 0.6 / 0.8, query init std 0.02.
RunConfig default_run_config();

// Applies a JSON config file whose keys mirror RunConfig field names.
void merge_config_file(const std::filesystem::path& path, RunConfig& config);

int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_eval(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_predict(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_datagen(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_affinity(const RunConfig& config, std::ostream& out, std::ostream& err);

// Full-loss gradient check on a seeded 3-token, 2-query, 2-type model with
// h = 8, one base layer and two word-level layers. The assignment is computed
// once at the unperturbed parameters and held fixed.
GradCheckResult toy_model_grad_check(std::uint64_t seed, double eps, bool inject_fault = false);

// Parses argv (subcommand first) and dispatches. Config precedence:
// flags > config file (--config, else $PIQN_CONFIG) > built-in defaults.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace piqn
