#include "piqn/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "piqn/assignment.hpp"
#include "piqn/errors.hpp"
#include "piqn/evaluation.hpp"
#include "piqn/serialization.hpp"

namespace piqn {

using nlohmann::json;
using nlohmann::ordered_json;

std::size_t RunConfig::assignable_quantity() const {
  return static_cast<std::size_t>(std::lround(static_cast<double>(model.queries) * train.ratio));
}

RunConfig default_run_config() {
  RunConfig c;
  c.model.queries = 60;
  c.model.layers = 5;
  c.model.query_init_std = 0.02;
  c.train.ratio = 0.75;
  c.train.loc_threshold = 0.6;
  c.train.cls_threshold = 0.8;
  return c;
}

namespace {

const std::set<std::string> kRunKeys{"data_path", "meta_path", "checkpoint_path", "out_path",
                                     "stop_f1",   "eps",       "gradcheck_seeds", "sentences",
                                     "vocab",     "min_length_synthetic", "max_length_synthetic",
                                     "types",     "nesting",   "max_entities"};

template <class T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

struct Failure {
  int code;
  std::string message;
};

// Runs `body`, mapping exceptions onto the exit-code contract.
template <class Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const NumericError& e) {
    err << "error: numeric failure: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("missing ") + what + " path");
  if (!std::filesystem::exists(path)) throw ConfigError(std::string(what) + " not found: " + path);
}

DatasetMeta meta_for_training(const RunConfig& config) {
  DatasetMeta meta;
  if (!config.meta_path.empty()) meta.types = load_meta_types(config.meta_path);
  return meta;
}

struct LoadedModel {
  Checkpoint checkpoint;
  DecodeThresholds thresholds;
};

LoadedModel load_for_inference(const RunConfig& config) {
  require_file(config.checkpoint_path, "checkpoint");
  LoadedModel lm{load_checkpoint(config.checkpoint_path), config.train.thresholds()};
  const auto ckpt = to_json(lm.checkpoint.model.config);
  const auto mine = to_json(config.model);
  for (const auto& field : config.explicit_model_fields) {
    if (ckpt.contains(field) && ckpt.at(field) != mine.at(field)) {
      throw ConfigError("checkpoint " + field + " = " + ckpt.at(field).dump() +
                        " disagrees with requested " + mine.at(field).dump());
    }
  }
  if (!config.meta_path.empty() && load_meta_types(config.meta_path) != lm.checkpoint.meta.types) {
    throw ConfigError("type inventory in " + config.meta_path + " differs from the checkpoint's");
  }
  return lm;
}

ordered_json epoch_json(const EpochMetrics& m) {
  ordered_json j;
  j["epoch"] = m.epoch;
  j["loss"] = m.mean_loss;
  j["train_f1"] = m.train_f1;
  j["lr"] = m.learning_rate;
  return j;
}

}  // namespace

void merge_config_file(const std::filesystem::path& path, RunConfig& config) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!is_model_config_key(key) && !is_train_config_key(key) && !kRunKeys.count(key)) {
      throw ConfigError("unknown config field '" + key + "'");
    }
    if (is_model_config_key(key) && key != "seed") config.explicit_model_fields.insert(key);
  }
  merge_json(j, config.model);
  merge_json(j, config.train);
  read_field(j, "data_path", config.data_path);
  read_field(j, "meta_path", config.meta_path);
  read_field(j, "checkpoint_path", config.checkpoint_path);
  read_field(j, "out_path", config.out_path);
  read_field(j, "stop_f1", config.stop_f1);
  read_field(j, "eps", config.eps);
  read_field(j, "gradcheck_seeds", config.gradcheck_seeds);
  read_field(j, "sentences", config.synthetic.sentences);
  read_field(j, "vocab", config.synthetic.vocab_size);
  read_field(j, "min_length_synthetic", config.synthetic.min_length);
  read_field(j, "max_length_synthetic", config.synthetic.max_length);
  read_field(j, "types", config.synthetic.type_count);
  read_field(j, "nesting", config.synthetic.nesting_ratio);
  read_field(j, "max_entities", config.synthetic.max_entities);
}

// ---- train ----------------------------------------------------------------

int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    require_file(config.data_path, "training data");
    config.train.validate();
    const DatasetMeta meta = meta_for_training(config);
    const Dataset data = load_dataset(config.data_path, meta.types.empty() ? nullptr : &meta);
    if (data.examples.empty()) throw ConfigError("training data is empty");

    ModelConfig mc = config.model;
    mc.vocab_size = data.meta.vocab.size();
    mc.type_count = data.meta.types.size();
    for (const auto& ex : data.examples) mc.max_length = std::max(mc.max_length, ex.length());
    mc.validate();

    TrainingSession session(Model::init(mc), data.meta, config.train, data.examples.size());
    err << "training " << data.examples.size() << " sentences, " << mc.type_count << " types, "
        << session.optimizer.state().total_steps << " steps\n";
    for (std::size_t e = 0; e < config.train.epochs; ++e) {
      const EpochMetrics m = train_epoch(data.examples, session);
      out << epoch_json(m).dump() << '\n';
      if (config.stop_f1 >= 0.0 && m.train_f1 >= config.stop_f1) break;
    }
    const std::string& dest = config.checkpoint_path.empty() ? config.out_path : config.checkpoint_path;
    if (!dest.empty()) {
      save_checkpoint(dest, session);
      err << "checkpoint written to " << dest << '\n';
    }
    return kExitOk;
  });
}

// ---- eval / predict / affinity --------------------------------------------

int cmd_eval(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const LoadedModel lm = load_for_inference(config);
    require_file(config.data_path, "evaluation data");
    const Dataset data = load_dataset(config.data_path, &lm.checkpoint.meta);
    const auto predictions =
        predict_corpus(lm.checkpoint.model, lm.checkpoint.meta.vocab, data.examples, lm.thresholds);
    const std::string report = evaluate_corpus(predictions, data.examples).to_json().dump();
    out << report << '\n';
    if (!config.out_path.empty()) {
      std::ofstream file(config.out_path);
      if (!file) throw ConfigError("cannot write report " + config.out_path);
      file << report << '\n';
    }
    return kExitOk;
  });
}

int cmd_predict(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const LoadedModel lm = load_for_inference(config);
    require_file(config.data_path, "input");
    const Dataset data = load_dataset(config.data_path, &lm.checkpoint.meta);
    const auto& types = lm.checkpoint.meta.types;
    for (const auto& ex : data.examples) {
      const auto ids = lm.checkpoint.meta.vocab.encode(ex.tokens);
      const auto predictions = predict(lm.checkpoint.model, ids, lm.thresholds);
      ordered_json line;
      line["entities"] = ordered_json::array();
      line["query_ids"] = ordered_json::array();
      for (const auto& p : predictions) {
        ordered_json e;
        e["start"] = p.left;
        e["end"] = p.right;
        e["type"] = types[p.type_id];
        e["score"] = p.type_prob;
        line["entities"].push_back(std::move(e));
        line["query_ids"].push_back(p.query_id);
      }
      out << line.dump() << '\n';
    }
    return kExitOk;
  });
}

int cmd_affinity(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const LoadedModel lm = load_for_inference(config);
    require_file(config.data_path, "input");
    const Dataset data = load_dataset(config.data_path, &lm.checkpoint.meta);
    const auto predictions =
        predict_corpus(lm.checkpoint.model, lm.checkpoint.meta.vocab, data.examples, lm.thresholds);
    std::vector<std::size_t> lengths;
    for (const auto& ex : data.examples) lengths.push_back(ex.length());
    const auto stats = query_affinity_stats(predictions, lengths, lm.checkpoint.model.config.queries,
                                            lm.checkpoint.meta.types.size());
    out << affinity_to_json(stats, lm.checkpoint.meta.types).dump() << '\n';
    return kExitOk;
  });
}

// ---- gradcheck ------------------------------------------------------------

GradCheckResult toy_model_grad_check(std::uint64_t seed, double eps, bool inject_fault) {
  std::mt19937_64 rng(seed);
  ModelConfig mc;
  mc.hidden = 8;
  mc.heads = 2;
  mc.queries = 2;
  mc.base_layers = 1;
  mc.layers = 2;
  mc.vocab_size = 6;
  mc.max_length = 3;
  mc.type_count = 2;
  mc.seed = seed;
  Model model = Model::init(mc);
  // Evaluate at a point where attention is far from uniform so every
  // coordinate carries a gradient well above finite-difference noise.
  {
    std::normal_distribution<double> unit(0.0, 1.0);
    for (auto& p : model.parameters()) {
      if (p.name.rfind("embed.", 0) != 0) continue;
      Tensor handle = p.tensor;
      for (double& v : handle.data()) v = unit(rng);
    }
  }

  std::uniform_int_distribution<std::size_t> word(2, mc.vocab_size - 1), pos(0, 2), type(0, 1);
  std::vector<std::size_t> tokens{word(rng), word(rng), word(rng)};
  std::vector<EntityAnnotation> gold;
  const std::size_t count = 1 + seed % 2;
  while (gold.size() < count) {
    std::size_t a = pos(rng), b = pos(rng);
    EntityAnnotation e{std::min(a, b), std::max(a, b), type(rng)};
    if (std::find(gold.begin(), gold.end(), e) == gold.end()) gold.push_back(e);
  }

  TrainConfig tc;
  tc.quantity_mode = seed % 2 == 0 ? QuantityMode::kOneToMany : QuantityMode::kOneToOne;
  std::vector<QueryLabels> labels;
  {
    NoGradGuard no_grad;
    const auto layers = forward(model, tokens);
    labels = assign_labels_per_layer(layers, gold, tc, rng);
  }

  auto named = model.parameters();
  std::vector<Tensor> params;
  for (const auto& p : named) params.push_back(p.tensor);

  auto loss_fn = [&]() {
    const auto layers = forward(model, tokens);
    std::vector<Tensor> boundary, classification;
    for (std::size_t t = 0; t < layers.size(); ++t) {
      boundary.push_back(boundary_loss(layers[t].boundaries, labels[t]));
      classification.push_back(classification_loss(layers[t].types, labels[t]));
    }
    Tensor loss = total_loss(boundary, classification);
    if (inject_fault) {
      // A term the recorder never sees: present in values, absent from gradients.
      double penalty = 0.0;
      for (double v : params.front().data()) penalty += v * v;
      loss = add(loss, Tensor::scalar(penalty));
    }
    return loss;
  };
  return grad_check(loss_fn, params, eps);
}

int cmd_gradcheck(const RunConfig& config, std::ostream& out, std::ostream& err) {
  if (!(config.eps > 0.0) || !std::isfinite(config.eps)) {
    err << "error: --eps must be positive\n";
    return kExitUsage;
  }
  if (config.gradcheck_seeds == 0) {
    err << "error: --seeds must be positive\n";
    return kExitUsage;
  }
  return guarded(err, [&] {
    constexpr double kTolerance = 1e-4;
    double worst = 0.0;
    for (std::size_t s = 0; s < config.gradcheck_seeds; ++s) {
      const std::uint64_t seed = config.train.seed + s;
      const GradCheckResult r = toy_model_grad_check(seed, config.eps, config.inject_fault);
      ordered_json line;
      line["seed"] = seed;
      line["max_rel_error"] = r.max_relative_error;
      out << line.dump() << '\n';
      worst = std::max(worst, r.max_relative_error);
    }
    ordered_json summary;
    summary["max_rel_error"] = worst;
    summary["tolerance"] = kTolerance;
    summary["pass"] = worst < kTolerance;
    out << summary.dump() << '\n';
    return worst < kTolerance ? kExitOk : kExitCheckFailed;
  });
}

// ---- datagen --------------------------------------------------------------

int cmd_datagen(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (config.out_path.empty()) throw ConfigError("missing --out path");
    const Dataset ds = generate_synthetic(config.synthetic, config.train.seed);
    write_dataset(config.out_path, ds.examples, ds.meta.types);
    if (!config.meta_path.empty()) write_meta_types(config.meta_path, ds.meta.types);
    ordered_json summary;
    summary["sentences"] = ds.examples.size();
    summary["nesting_ratio"] = nesting_ratio(ds.examples);
    summary["out"] = config.out_path;
    out << summary.dump() << '\n';
    return kExitOk;
  });
}

// ---- argument parsing -----------------------------------------------------

namespace {

struct Flags {
  std::string config_path;
  std::uint64_t seed = 0;
  std::size_t queries = 0, layers = 0, base_layers = 0, hidden = 0, heads = 0, epochs = 0,
              batch_size = 0;
  double ratio = 0, loc = 0, cls = 0, lr = 0, warmup = 0, max_grad_norm = 0;
  std::string assignment_mode, quantity_mode, one_way, query_interaction;
  std::string data, meta, checkpoint, out;
  double stop_f1 = 0, eps = 0;
  std::size_t seeds = 0;
  bool inject_fault = false;
  std::size_t sentences = 0, vocab = 0, min_len = 0, max_len = 0, types = 0, max_entities = 0;
  double nesting = 0;
};

bool parse_switch(const std::string& value, const char* flag) {
  if (value == "on") return true;
  if (value == "off") return false;
  throw ConfigError(std::string(flag) + " expects on|off, got '" + value + "'");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Parallel instance-query nested NER: train, evaluate and inspect models"};
  app.require_subcommand(1);
  Flags f;

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  auto* predict_cmd = app.add_subcommand("predict", "Decode entities for each input sentence");
  auto* gradcheck = app.add_subcommand("gradcheck", "Check gradients against finite differences");
  auto* datagen = app.add_subcommand("datagen", "Generate a synthetic nested corpus");
  auto* affinity = app.add_subcommand("affinity", "Per-query position and type statistics");

  std::map<std::string, CLI::Option*> opts;
  auto common = [&](CLI::App* cmd) {
    opts["config"] = cmd->add_option("--config", f.config_path, "JSON config file");
    opts["seed"] = cmd->add_option("--seed", f.seed, "Random seed");
    opts["data"] = cmd->add_option("--data", f.data, "Dataset (JSON lines)");
    opts["meta"] = cmd->add_option("--meta", f.meta, "Type inventory file");
    opts["checkpoint"] = cmd->add_option("--checkpoint", f.checkpoint, "Checkpoint path");
    opts["out"] = cmd->add_option("--out", f.out, "Output path");
  };
  auto model_flags = [&](CLI::App* cmd) {
    opts["queries"] = cmd->add_option("--queries", f.queries, "Instance query count M");
    opts["layers"] = cmd->add_option("--layers", f.layers, "Word-level layers L");
    opts["base_layers"] = cmd->add_option("--base-layers", f.base_layers, "Joint base layers B");
    opts["hidden"] = cmd->add_option("--hidden", f.hidden, "Hidden size h");
    opts["heads"] = cmd->add_option("--heads", f.heads, "Attention heads");
    opts["one_way"] = cmd->add_option("--one-way", f.one_way, "One-way attention {on,off}");
    opts["query_interaction"] =
        cmd->add_option("--query-interaction", f.query_interaction, "Query self-attention {on,off}");
    opts["loc"] = cmd->add_option("--loc-threshold", f.loc, "Localization threshold");
    opts["cls"] = cmd->add_option("--cls-threshold", f.cls, "Classification threshold");
  };
  for (auto* cmd : {train, eval, predict_cmd, gradcheck, datagen, affinity}) {
    common(cmd);
    model_flags(cmd);
  }
  for (auto* cmd : {train}) {
    opts["ratio"] = cmd->add_option("--ratio", f.ratio, "Assignable fraction Q / M");
    opts["assignment_mode"] =
        cmd->add_option("--assignment-mode", f.assignment_mode, "{dynamic,static}");
    opts["quantity_mode"] =
        cmd->add_option("--quantity-mode", f.quantity_mode, "{one-to-many,one-to-one}");
    opts["epochs"] = cmd->add_option("--epochs", f.epochs, "Training epochs");
    opts["lr"] = cmd->add_option("--lr", f.lr, "Peak learning rate");
    opts["warmup"] = cmd->add_option("--warmup", f.warmup, "Warmup fraction of total steps");
    opts["batch_size"] = cmd->add_option("--batch-size", f.batch_size, "Sentences per step");
    opts["max_grad_norm"] = cmd->add_option("--max-grad-norm", f.max_grad_norm, "Clip norm (0 = off)");
    opts["stop_f1"] = cmd->add_option("--stop-f1", f.stop_f1, "Stop once train F1 reaches this");
  }
  opts["eps"] = gradcheck->add_option("--eps", f.eps, "Finite-difference step");
  opts["seeds"] = gradcheck->add_option("--seeds", f.seeds, "Number of seeds");
  opts["inject_fault"] = gradcheck->add_flag("--inject-fault", f.inject_fault,
                                             "Corrupt the analytic gradient (negative control)");
  opts["sentences"] = datagen->add_option("--sentences", f.sentences, "Sentence count");
  opts["vocab"] = datagen->add_option("--vocab", f.vocab, "Vocabulary size");
  opts["min_len"] = datagen->add_option("--min-len", f.min_len, "Minimum sentence length");
  opts["max_len"] = datagen->add_option("--max-len", f.max_len, "Maximum sentence length");
  opts["types"] = datagen->add_option("--types", f.types, "Entity type count");
  opts["nesting"] = datagen->add_option("--nesting", f.nesting, "Target nesting ratio");
  opts["max_entities"] = datagen->add_option("--max-entities", f.max_entities, "Entities per sentence cap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  // Options live per subcommand, so look them up on the one that ran.
  CLI::App* active = app.get_subcommands().front();
  auto given = [&](const char* name) {
    auto* opt = active->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };

  RunConfig config = default_run_config();
  try {
    std::string config_path = f.config_path;
    if (!given("--config")) {
      if (const char* env = std::getenv(kConfigEnvVar)) config_path = env;
    }
    if (!config_path.empty()) merge_config_file(config_path, config);

    auto set_model = [&](const char* flag, const char* field, auto& dst, auto value) {
      if (!given(flag)) return;
      dst = value;
      config.explicit_model_fields.insert(field);
    };
    if (given("--seed")) {
      config.train.seed = f.seed;
      config.model.seed = f.seed;
    }
    set_model("--queries", "queries", config.model.queries, f.queries);
    set_model("--layers", "layers", config.model.layers, f.layers);
    set_model("--base-layers", "base_layers", config.model.base_layers, f.base_layers);
    set_model("--hidden", "hidden", config.model.hidden, f.hidden);
    set_model("--heads", "heads", config.model.heads, f.heads);
    if (given("--one-way")) {
      set_model("--one-way", "one_way_attention", config.model.one_way_attention,
                parse_switch(f.one_way, "--one-way"));
    }
    if (given("--query-interaction")) {
      set_model("--query-interaction", "query_interaction", config.model.query_interaction,
                parse_switch(f.query_interaction, "--query-interaction"));
    }
    if (given("--loc-threshold")) config.train.loc_threshold = f.loc;
    if (given("--cls-threshold")) config.train.cls_threshold = f.cls;
    if (given("--ratio")) config.train.ratio = f.ratio;
    if (given("--assignment-mode")) config.train.assignment_mode = parse_assignment_mode(f.assignment_mode);
    if (given("--quantity-mode")) config.train.quantity_mode = parse_quantity_mode(f.quantity_mode);
    if (given("--epochs")) config.train.epochs = f.epochs;
    if (given("--lr")) config.train.learning_rate = f.lr;
    if (given("--warmup")) config.train.warmup_fraction = f.warmup;
    if (given("--batch-size")) config.train.batch_size = f.batch_size;
    if (given("--max-grad-norm")) config.train.max_grad_norm = f.max_grad_norm;
    if (given("--stop-f1")) config.stop_f1 = f.stop_f1;
    if (given("--data")) config.data_path = f.data;
    if (given("--meta")) config.meta_path = f.meta;
    if (given("--checkpoint")) config.checkpoint_path = f.checkpoint;
    if (given("--out")) config.out_path = f.out;
    if (given("--eps")) config.eps = f.eps;
    if (given("--seeds")) config.gradcheck_seeds = f.seeds;
    config.inject_fault = f.inject_fault;
    if (given("--sentences")) config.synthetic.sentences = f.sentences;
    if (given("--vocab")) config.synthetic.vocab_size = f.vocab;
    if (given("--min-len")) config.synthetic.min_length = f.min_len;
    if (given("--max-len")) config.synthetic.max_length = f.max_len;
    if (given("--types")) config.synthetic.type_count = f.types;
    if (given("--nesting")) config.synthetic.nesting_ratio = f.nesting;
    if (given("--max-entities")) config.synthetic.max_entities = f.max_entities;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  if (active == train) return cmd_train(config, out, err);
  if (active == eval) return cmd_eval(config, out, err);
  if (active == predict_cmd) return cmd_predict(config, out, err);
  if (active == gradcheck) return cmd_gradcheck(config, out, err);
  if (active == datagen) return cmd_datagen(config, out, err);
  return cmd_affinity(config, out, err);
}

}  // namespace piqn
