#include "piqn/encoder.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "piqn/errors.hpp"

namespace piqn {

namespace {

constexpr double kEmbeddingStd = 0.02;

Tensor xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  return Tensor::normal({fan_in, fan_out}, 0.0, stddev, rng, true);
}

Tensor zeros_vec(std::size_t n) { return Tensor::zeros({n}, true); }
Tensor ones_vec(std::size_t n) { return Tensor::filled({n}, 1.0, true); }

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

}  // namespace

void ModelConfig::validate() const {
  if (hidden == 0 || heads == 0 || hidden % heads != 0) {
    throw ConfigError("hidden size " + std::to_string(hidden) + " must be a positive multiple of " +
                      std::to_string(heads) + " heads");
  }
  if (queries < 1) throw ConfigError("at least one instance query is required");
  if (layers < 1) throw ConfigError("at least one word-level layer is required");
  if (base_layers < 1) throw ConfigError("at least one base layer is required");
  if (vocab_size < 1) throw ConfigError("vocabulary is empty");
  if (max_length < 1) throw ConfigError("max_length must be positive");
  if (type_count < 1) throw ConfigError("type inventory is empty");
  if (!(query_init_std >= 0.0)) throw ConfigError("query_init_std must be non-negative");
}

// ---- parameters -----------------------------------------------------------

EmbeddingTables EmbeddingTables::init(const ModelConfig& config, std::mt19937_64& rng) {
  const std::size_t h = config.hidden;
  EmbeddingTables t;
  t.words = Tensor::normal({config.vocab_size, h}, 0.0, kEmbeddingStd, rng, true);
  t.queries = Tensor::normal({config.queries, h}, 0.0, config.query_init_std, rng, true);
  t.word_positions = Tensor::normal({config.max_length, h}, 0.0, kEmbeddingStd, rng, true);
  t.query_positions = Tensor::normal({config.queries, h}, 0.0, kEmbeddingStd, rng, true);
  t.word_type = Tensor::normal({h}, 0.0, kEmbeddingStd, rng, true);
  t.query_type = Tensor::normal({h}, 0.0, kEmbeddingStd, rng, true);
  return t;
}

void EmbeddingTables::collect(std::vector<NamedParameter>& out, const std::string& prefix) const {
  out.push_back({prefix + "words", words});
  out.push_back({prefix + "queries", queries});
  out.push_back({prefix + "word_positions", word_positions});
  out.push_back({prefix + "query_positions", query_positions});
  out.push_back({prefix + "word_type", word_type});
  out.push_back({prefix + "query_type", query_type});
}

AttentionParams AttentionParams::init(const ModelConfig& config, std::mt19937_64& rng) {
  const std::size_t h = config.hidden;
  const std::size_t f = config.feed_forward_width();
  AttentionParams p;
  p.w_query = xavier(h, h, rng);
  p.b_query = zeros_vec(h);
  p.w_key = xavier(h, h, rng);
  p.w_value = xavier(h, h, rng);
  p.b_value = zeros_vec(h);
  p.w_out = xavier(h, h, rng);
  p.b_out = zeros_vec(h);
  p.norm1_gain = ones_vec(h);
  p.norm1_bias = zeros_vec(h);
  p.ff_in = xavier(h, f, rng);
  p.ff_in_bias = zeros_vec(f);
  p.ff_out = xavier(f, h, rng);
  p.ff_out_bias = zeros_vec(h);
  p.norm2_gain = ones_vec(h);
  p.norm2_bias = zeros_vec(h);
  return p;
}

void AttentionParams::collect(std::vector<NamedParameter>& out, const std::string& prefix) const {
  out.push_back({prefix + "w_query", w_query});
  out.push_back({prefix + "b_query", b_query});
  out.push_back({prefix + "w_key", w_key});
  out.push_back({prefix + "w_value", w_value});
  out.push_back({prefix + "b_value", b_value});
  out.push_back({prefix + "w_out", w_out});
  out.push_back({prefix + "b_out", b_out});
  out.push_back({prefix + "norm1_gain", norm1_gain});
  out.push_back({prefix + "norm1_bias", norm1_bias});
  out.push_back({prefix + "ff_in", ff_in});
  out.push_back({prefix + "ff_in_bias", ff_in_bias});
  out.push_back({prefix + "ff_out", ff_out});
  out.push_back({prefix + "ff_out_bias", ff_out_bias});
  out.push_back({prefix + "norm2_gain", norm2_gain});
  out.push_back({prefix + "norm2_bias", norm2_bias});
}

EncoderParams EncoderParams::init(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  EncoderParams p;
  p.tables = EmbeddingTables::init(config, rng);
  for (std::size_t i = 0; i < config.base_layers; ++i) p.base.push_back(AttentionParams::init(config, rng));
  for (std::size_t i = 0; i < config.layers; ++i) p.word.push_back(AttentionParams::init(config, rng));
  return p;
}

void EncoderParams::collect(std::vector<NamedParameter>& out) const {
  tables.collect(out, "embed.");
  for (std::size_t i = 0; i < base.size(); ++i) base[i].collect(out, "base." + std::to_string(i) + ".");
  for (std::size_t i = 0; i < word.size(); ++i) word[i].collect(out, "word." + std::to_string(i) + ".");
}

// ---- forward --------------------------------------------------------------

Tensor build_input(std::span<const std::size_t> token_ids, const EmbeddingTables& tables) {
  const std::size_t n = token_ids.size();
  const std::size_t m = tables.queries.rows();
  if (n > tables.word_positions.rows()) {
    throw std::length_error("sentence of length " + std::to_string(n) + " exceeds max length " +
                            std::to_string(tables.word_positions.rows()));
  }
  for (std::size_t id : token_ids) {
    if (id >= tables.words.rows()) {
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                              std::to_string(tables.words.rows()));
    }
  }
  std::vector<Tensor> parts;
  if (n > 0) {
    Tensor words = gather_rows(tables.words, token_ids);
    words = add(words, slice_rows(tables.word_positions, 0, n));
    words = add(words, tables.word_type);
    parts.push_back(words);
  }
  if (m > 0) {
    Tensor queries = add(tables.queries, tables.query_positions);
    queries = add(queries, tables.query_type);
    parts.push_back(queries);
  }
  if (parts.empty()) throw DimensionError("build_input: empty sentence and no queries");
  return parts.size() == 1 ? parts[0] : concat_rows(parts);
}

Tensor build_attention_mask(std::size_t words, std::size_t queries, const MaskOptions& options) {
  const std::size_t total = words + queries;
  const double neg_inf = -std::numeric_limits<double>::infinity();
  Tensor mask = Tensor::zeros({total, total});
  for (std::size_t i = 0; i < total; ++i) {
    for (std::size_t j = 0; j < total; ++j) {
      const bool row_is_word = i < words;
      const bool col_is_word = j < words;
      bool blocked = false;
      if (options.one_way && row_is_word && !col_is_word) blocked = true;
      if (!options.query_interaction && !row_is_word && !col_is_word && i != j) blocked = true;
      if (col_is_word && j >= options.valid_words) blocked = true;
      if (blocked) mask.at(i, j) = neg_inf;
    }
  }
  return mask;
}

Tensor build_one_way_mask(std::size_t words, std::size_t queries, bool query_interaction) {
  return build_attention_mask(words, queries, MaskOptions{true, query_interaction});
}

Tensor one_way_self_attention(const Tensor& hidden, const Tensor& mask,
                              const AttentionParams& params, std::size_t heads) {
  const std::size_t total = hidden.rows();
  const std::size_t h = hidden.cols();
  if (mask.rows() != total || mask.cols() != total) {
    throw DimensionError("attention mask " + shape_string(mask.shape()) + " does not match input " +
                         shape_string(hidden.shape()));
  }
  if (heads == 0 || h % heads != 0) throw DimensionError("hidden size not divisible by heads");
  const std::size_t d = h / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(d));

  const Tensor q = affine(hidden, params.w_query, params.b_query);
  const Tensor k = matmul(hidden, params.w_key);
  const Tensor v = affine(hidden, params.w_value, params.b_value);

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(heads);
  for (std::size_t a = 0; a < heads; ++a) {
    const Tensor qa = heads == 1 ? q : slice_cols(q, a * d, (a + 1) * d);
    const Tensor ka = heads == 1 ? k : slice_cols(k, a * d, (a + 1) * d);
    const Tensor va = heads == 1 ? v : slice_cols(v, a * d, (a + 1) * d);
    const Tensor scores = add(scale(matmul(qa, transpose(ka)), scale_factor), mask);
    head_outputs.push_back(matmul(row_softmax(scores), va));
  }
  const Tensor attended = heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
  const Tensor projected = affine(attended, params.w_out, params.b_out);
  const Tensor norm1 = layer_norm(add(hidden, projected), params.norm1_gain, params.norm1_bias);

  const Tensor inner = relu(affine(norm1, params.ff_in, params.ff_in_bias));
  const Tensor ff = affine(inner, params.ff_out, params.ff_out_bias);
  return layer_norm(add(norm1, ff), params.norm2_gain, params.norm2_bias);
}

LayerOutputs encode(const Tensor& input, std::size_t words, const Tensor& mask,
                    const ModelConfig& config, const EncoderParams& params) {
  if (words > input.rows()) throw DimensionError("encode: word count exceeds input rows");
  Tensor hidden = input;
  for (const auto& layer : params.base) hidden = one_way_self_attention(hidden, mask, layer, config.heads);
  LayerOutputs out;
  for (const auto& layer : params.word) {
    hidden = one_way_self_attention(hidden, mask, layer, config.heads);
    out.words.push_back(slice_rows(hidden, 0, words));
    out.queries.push_back(slice_rows(hidden, words, hidden.rows()));
  }
  return out;
}

LayerOutputs encode_sentence(std::span<const std::size_t> token_ids, const ModelConfig& config,
                             const EncoderParams& params) {
  const Tensor input = build_input(token_ids, params.tables);
  const Tensor mask = build_attention_mask(
      token_ids.size(), params.tables.queries.rows(),
      MaskOptions{config.one_way_attention, config.query_interaction});
  return encode(input, token_ids.size(), mask, config, params);
}

}  // namespace piqn
