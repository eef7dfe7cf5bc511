#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "piqn/annotation.hpp"

namespace piqn {

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnknown = 1;

  Vocabulary();
  static Vocabulary from_words(std::vector<std::string> words);

  // Returns the id of `word`, adding it if absent.
  std::size_t add(const std::string& word);
  // Unknown words map to kUnknown.
  std::size_t id(const std::string& word) const;
  std::vector<std::size_t> encode(std::span<const std::string> tokens) const;

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct DatasetMeta {
  std::vector<std::string> types;
  Vocabulary vocab;

  std::optional<std::size_t> type_id(const std::string& name) const;
};

struct Dataset {
  std::vector<SentenceExample> examples;
  DatasetMeta meta;
};

// JSON lines: {"tokens": [...], "entities": [{"start": s, "end": e, "type": t}...]}
// with inclusive `end`. When `meta` carries types, every type must belong to
// it; otherwise types are collected in order of first appearance. The
// vocabulary is taken from `meta` when non-trivial, else built from the data.
Dataset parse_dataset(std::istream& in, const DatasetMeta* meta = nullptr);
Dataset load_dataset(const std::filesystem::path& path, const DatasetMeta* meta = nullptr);

void write_dataset(std::ostream& out, std::span<const SentenceExample> examples,
                   std::span<const std::string> types);
void write_dataset(const std::filesystem::path& path, std::span<const SentenceExample> examples,
                   std::span<const std::string> types);

// {"types": [...]}
std::vector<std::string> load_meta_types(const std::filesystem::path& path);
void write_meta_types(const std::filesystem::path& path, std::span<const std::string> types);

Vocabulary build_vocabulary(std::span<const SentenceExample> examples);

// Throws AnnotationError for spans outside the sentence, unknown type ids and
// duplicate triples.
void validate_example(const SentenceExample& example, std::size_t type_count);

struct SyntheticSpec {
  std::size_t sentences = 64;
  std::size_t vocab_size = 200;
  std::size_t min_length = 8;
  std::size_t max_length = 16;
  std::size_t type_count = 4;
  double nesting_ratio = 0.3;
  std::size_t max_entities = 4;

  void validate() const;
};

// Plants non-overlapping entity groups: a flat entity, or an outer entity
// strictly containing an inner one of a different type. Boundary and
// interior words are drawn from per-type word pools.
Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Fraction of entities that contain, or are contained in, another entity of
// the same sentence.
double nesting_ratio(std::span<const SentenceExample> examples);

struct Batch {
  std::size_t width = 0;
  std::vector<std::size_t> token_ids;  // rows x width, padded with pad id
  std::vector<std::size_t> lengths;
  std::vector<std::vector<EntityAnnotation>> gold;
  std::vector<std::size_t> example_indices;

  std::size_t size() const { return lengths.size(); }
  std::span<const std::size_t> row(std::size_t r) const {
    return std::span<const std::size_t>(token_ids).subspan(r * width, lengths[r]);
  }
};

// Groups examples (in `order`, or natural order when empty) into batches
// padded to each batch's longest sentence.
std::vector<Batch> batch_pad(std::span<const SentenceExample> examples, const Vocabulary& vocab,
                             std::size_t batch_size, std::size_t pad_id = Vocabulary::kPad,
                             std::span<const std::size_t> order = {});

}  // namespace piqn
