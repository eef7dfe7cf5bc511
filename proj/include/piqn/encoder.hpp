#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "piqn/tensor.hpp"

namespace piqn {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

struct ModelConfig {
  std::size_t hidden = 32;       // h
  std::size_t queries = 60;      // M, instance query count
  std::size_t base_layers = 1;   // B, joint layers standing in for a pretrained encoder
  std::size_t layers = 5;        // L, word-level layers carrying auxiliary heads
  std::size_t heads = 4;
  std::size_t ffn_hidden = 0;    // 0 selects 4 * hidden
  std::size_t vocab_size = 0;
  std::size_t max_length = 64;   // N_max
  std::size_t type_count = 0;    // |E|, excluding None
  bool one_way_attention = true;
  bool query_interaction = true;
  double query_init_std = 0.02;
  std::uint64_t seed = 0;

  std::size_t feed_forward_width() const { return ffn_hidden ? ffn_hidden : 4 * hidden; }
  std::size_t class_count() const { return type_count + 1; }
  void validate() const;
};

struct EmbeddingTables {
  Tensor words;            // vocab_size x h
  Tensor queries;          // M x h
  Tensor word_positions;   // N_max x h
  Tensor query_positions;  // M x h
  Tensor word_type;        // h
  Tensor query_type;       // h

  static EmbeddingTables init(const ModelConfig& config, std::mt19937_64& rng);
  void collect(std::vector<NamedParameter>& out, const std::string& prefix) const;
};

// One post-norm transformer block.
struct AttentionParams {
  Tensor w_query, b_query;
  Tensor w_key;  // no key bias: it shifts each score row uniformly and cancels in softmax
  Tensor w_value, b_value;
  Tensor w_out, b_out;
  Tensor norm1_gain, norm1_bias;
  Tensor ff_in, ff_in_bias;
  Tensor ff_out, ff_out_bias;
  Tensor norm2_gain, norm2_bias;

  static AttentionParams init(const ModelConfig& config, std::mt19937_64& rng);
  void collect(std::vector<NamedParameter>& out, const std::string& prefix) const;
};

struct EncoderParams {
  EmbeddingTables tables;
  std::vector<AttentionParams> base;    // B joint layers
  std::vector<AttentionParams> word;    // L word-level layers

  static EncoderParams init(const ModelConfig& config, std::mt19937_64& rng);
  void collect(std::vector<NamedParameter>& out) const;
};

// Sentence and query encodings after each word-level layer.
struct LayerOutputs {
  std::vector<Tensor> words;    // L entries of N x h
  std::vector<Tensor> queries;  // L entries of M x h

  std::size_t size() const { return words.size(); }
  const Tensor& final_words() const { return words.back(); }
  const Tensor& final_queries() const { return queries.back(); }
};

// H0 = token + position + segment embeddings of [sentence ; queries].
// Throws std::length_error for sentences longer than the position table and
// std::out_of_range for unknown token ids.
Tensor build_input(std::span<const std::size_t> token_ids, const EmbeddingTables& tables);

struct MaskOptions {
  bool one_way = true;
  bool query_interaction = true;
  // Word positions at or beyond this index are padding; nobody attends to them.
  std::size_t valid_words = static_cast<std::size_t>(-1);
};

// (N+M) x (N+M) additive mask with entries 0 or -inf.
Tensor build_attention_mask(std::size_t words, std::size_t queries, const MaskOptions& options);

// Sentence rows never see query columns; with `query_interaction` false the
// queries also stop seeing each other.
Tensor build_one_way_mask(std::size_t words, std::size_t queries, bool query_interaction);

// Masked multi-head self-attention followed by residual + norm and a ReLU
// feed-forward block with its own residual + norm.
Tensor one_way_self_attention(const Tensor& hidden, const Tensor& mask,
                              const AttentionParams& params, std::size_t heads);

// Runs the B joint layers and the L word-level layers. `words` is the sentence
// length N; rows [0, N) of each word-level output become LayerOutputs::words.
LayerOutputs encode(const Tensor& input, std::size_t words, const Tensor& mask,
                    const ModelConfig& config, const EncoderParams& params);

// Convenience: build_input + mask from config + encode.
LayerOutputs encode_sentence(std::span<const std::size_t> token_ids, const ModelConfig& config,
                             const EncoderParams& params);

}  // namespace piqn
