#include "piqn/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "piqn/errors.hpp"

namespace piqn {

using nlohmann::json;
using nlohmann::ordered_json;

// ---- vocabulary -----------------------------------------------------------

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<unk>");
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
  if (words.size() < 2 || words[kPad] != "<pad>" || words[kUnknown] != "<unk>") {
    throw ConfigError("vocabulary must start with <pad> and <unk>");
  }
  Vocabulary v;
  for (std::size_t i = 2; i < words.size(); ++i) {
    if (v.add(words[i]) != i) throw ConfigError("duplicate vocabulary entry '" + words[i] + "'");
  }
  return v;
}

std::size_t Vocabulary::add(const std::string& word) {
  auto [it, inserted] = index_.try_emplace(word, words_.size());
  if (inserted) words_.push_back(word);
  return it->second;
}

std::size_t Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnknown : it->second;
}

std::vector<std::size_t> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::optional<std::size_t> DatasetMeta::type_id(const std::string& name) const {
  auto it = std::find(types.begin(), types.end(), name);
  if (it == types.end()) return std::nullopt;
  return static_cast<std::size_t>(it - types.begin());
}

Vocabulary build_vocabulary(std::span<const SentenceExample> examples) {
  Vocabulary v;
  for (const auto& ex : examples)
    for (const auto& t : ex.tokens) v.add(t);
  return v;
}

void validate_example(const SentenceExample& example, std::size_t type_count) {
  std::set<EntityAnnotation> seen;
  for (const auto& e : example.entities) {
    if (e.left > e.right || e.right >= example.length()) {
      throw AnnotationError("span [" + std::to_string(e.left) + ", " + std::to_string(e.right) +
                            "] outside a sentence of length " + std::to_string(example.length()));
    }
    if (e.type_id >= type_count) {
      throw AnnotationError("type id " + std::to_string(e.type_id) + " outside inventory of " +
                            std::to_string(type_count));
    }
    if (!seen.insert(e).second) {
      throw AnnotationError("duplicate entity [" + std::to_string(e.left) + ", " +
                            std::to_string(e.right) + "]");
    }
  }
}

// ---- JSON lines -----------------------------------------------------------

Dataset parse_dataset(std::istream& in, const DatasetMeta* meta) {
  Dataset ds;
  const bool fixed_types = meta != nullptr && !meta->types.empty();
  if (meta) ds.meta = *meta;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
    }
    SentenceExample ex;
    try {
      if (!record.is_object() || !record.contains("tokens") || !record["tokens"].is_array()) {
        throw ParseError(line_no, "record needs a \"tokens\" array");
      }
      for (const auto& t : record["tokens"]) ex.tokens.push_back(t.get<std::string>());
      if (record.contains("entities")) {
        if (!record["entities"].is_array()) throw ParseError(line_no, "\"entities\" must be an array");
        for (const auto& e : record["entities"]) {
          const auto start = e.at("start").get<long long>();
          const auto end = e.at("end").get<long long>();
          const auto type = e.at("type").get<std::string>();
          if (start < 0 || end < 0) {
            throw AnnotationError("line " + std::to_string(line_no) + ": negative span index");
          }
          std::size_t type_id = 0;
          if (auto id = ds.meta.type_id(type)) {
            type_id = *id;
          } else if (fixed_types) {
            throw AnnotationError("line " + std::to_string(line_no) + ": unknown entity type '" +
                                  type + "'");
          } else {
            type_id = ds.meta.types.size();
            ds.meta.types.push_back(type);
          }
          ex.entities.push_back(
              {static_cast<std::size_t>(start), static_cast<std::size_t>(end), type_id});
        }
      }
    } catch (const json::exception& e) {
      throw ParseError(line_no, std::string("bad record: ") + e.what());
    }
    try {
      validate_example(ex, ds.meta.types.size());
    } catch (const AnnotationError& e) {
      throw AnnotationError("line " + std::to_string(line_no) + ": " + e.what());
    }
    ds.examples.push_back(std::move(ex));
  }
  if (!meta || meta->vocab.size() <= 2) ds.meta.vocab = build_vocabulary(ds.examples);
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, const DatasetMeta* meta) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset " + path.string());
  return parse_dataset(in, meta);
}

void write_dataset(std::ostream& out, std::span<const SentenceExample> examples,
                   std::span<const std::string> types) {
  for (const auto& ex : examples) {
    ordered_json record;
    record["tokens"] = ex.tokens;
    ordered_json entities = ordered_json::array();
    for (const auto& e : ex.entities) {
      if (e.type_id >= types.size()) throw AnnotationError("type id outside inventory");
      ordered_json entry;
      entry["start"] = e.left;
      entry["end"] = e.right;
      entry["type"] = types[e.type_id];
      entities.push_back(std::move(entry));
    }
    record["entities"] = std::move(entities);
    out << record.dump() << '\n';
  }
}

void write_dataset(const std::filesystem::path& path, std::span<const SentenceExample> examples,
                   std::span<const std::string> types) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  write_dataset(out, examples, types);
  if (!out) throw ConfigError("failed writing " + path.string());
}

std::vector<std::string> load_meta_types(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open meta file " + path.string());
  try {
    const json meta = json::parse(in);
    auto types = meta.at("types").get<std::vector<std::string>>();
    if (types.empty()) throw ConfigError("meta file lists no types");
    return types;
  } catch (const json::exception& e) {
    throw ConfigError("bad meta file " + path.string() + ": " + e.what());
  }
}

void write_meta_types(const std::filesystem::path& path, std::span<const std::string> types) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  ordered_json meta;
  meta["types"] = std::vector<std::string>(types.begin(), types.end());
  out << meta.dump() << '\n';
}

// ---- synthetic corpus -----------------------------------------------------

void SyntheticSpec::validate() const {
  if (sentences < 1 || type_count < 1 || max_entities < 1 || min_length < 1) {
    throw ConfigError("synthetic spec values must be positive");
  }
  if (min_length > max_length) throw ConfigError("min_length exceeds max_length");
  if (!(nesting_ratio >= 0.0 && nesting_ratio < 1.0)) {
    throw ConfigError("nesting ratio must lie in [0, 1)");
  }
  if (max_entities > min_length) {
    throw ConfigError("max_entities " + std::to_string(max_entities) +
                      " exceeds the minimum sentence length " + std::to_string(min_length));
  }
  if (vocab_size < 8 * type_count + 1) {
    throw ConfigError("vocab_size must be at least 8 * types + 1");
  }
}

namespace {

const std::vector<std::string> kTypeNames{"PER", "ORG", "LOC", "GPE", "FAC", "VEH", "WEA"};

enum class Pool { kBegin = 0, kInside = 1, kEnd = 2, kSingle = 3 };

struct Group {
  std::size_t length = 0;
  std::vector<EntityAnnotation> entities;  // offsets relative to group start
  std::vector<std::pair<std::size_t, Pool>> words;  // (type, pool) per position
};

class SyntheticWords {
 public:
  SyntheticWords(const SyntheticSpec& spec)
      : types_(spec.type_count), per_pool_(std::max<std::size_t>(2, spec.vocab_size / (8 * spec.type_count))) {
    const std::size_t entity_words = types_ * 4 * per_pool_;
    background_ = spec.vocab_size > entity_words ? spec.vocab_size - entity_words : 1;
  }

  std::string background(std::mt19937_64& rng) const {
    return "w" + std::to_string(std::uniform_int_distribution<std::size_t>(0, background_ - 1)(rng));
  }

  std::string entity(std::size_t type, Pool pool, std::mt19937_64& rng) const {
    static constexpr char kPrefix[] = {'B', 'I', 'E', 'S'};
    const auto i = std::uniform_int_distribution<std::size_t>(0, per_pool_ - 1)(rng);
    return std::string(1, kPrefix[static_cast<int>(pool)]) + std::to_string(type) + "_" +
           std::to_string(i);
  }

 private:
  std::size_t types_;
  std::size_t per_pool_;
  std::size_t background_;
};

// Fills positions [begin, begin + len) with the word pattern of a single entity.
void fill_entity(Group& g, std::size_t begin, std::size_t len, std::size_t type) {
  if (len == 1) {
    g.words[begin] = {type, Pool::kSingle};
    return;
  }
  g.words[begin] = {type, Pool::kBegin};
  for (std::size_t p = begin + 1; p + 1 < begin + len; ++p) {
    if (g.words[p].second == Pool::kInside && g.words[p].first == static_cast<std::size_t>(-1)) {
      g.words[p] = {type, Pool::kInside};
    }
  }
  g.words[begin + len - 1] = {type, Pool::kEnd};
}

Group make_flat(std::size_t len, std::size_t type) {
  Group g;
  g.length = len;
  g.words.assign(len, {static_cast<std::size_t>(-1), Pool::kInside});
  fill_entity(g, 0, len, type);
  g.entities.push_back({0, len - 1, type});
  return g;
}

Group make_nested(std::size_t inner_len, std::size_t extra, std::size_t outer_type,
                  std::size_t inner_type, std::mt19937_64& rng) {
  Group g;
  g.length = inner_len + 2 + extra;
  g.words.assign(g.length, {static_cast<std::size_t>(-1), Pool::kInside});
  // Inner entity sits strictly inside; extra interior words go before or after it.
  const std::size_t before = extra == 0 ? 0 : std::uniform_int_distribution<std::size_t>(0, extra)(rng);
  const std::size_t inner_begin = 1 + before;
  fill_entity(g, inner_begin, inner_len, inner_type);
  fill_entity(g, 0, g.length, outer_type);
  g.entities.push_back({0, g.length - 1, outer_type});
  g.entities.push_back({inner_begin, inner_begin + inner_len - 1, inner_type});
  return g;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const SyntheticWords words(spec);
  Dataset ds;
  for (std::size_t t = 0; t < spec.type_count; ++t) {
    ds.meta.types.push_back(t < kTypeNames.size() ? kTypeNames[t] : "TYPE" + std::to_string(t));
  }

  auto uniform = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  std::size_t nested_total = 0;
  std::size_t entity_total = 0;
  const double target = spec.nesting_ratio;
  const bool can_nest = spec.type_count >= 2 && target > 0.0;

  for (std::size_t s = 0; s < spec.sentences; ++s) {
    const std::size_t length = uniform(spec.min_length, spec.max_length);
    const std::size_t budget = uniform(1, spec.max_entities);
    std::vector<Group> groups;
    std::size_t used = 0;  // group lengths plus mandatory single-word gaps
    std::size_t planted = 0;
    while (planted < budget) {
      const std::size_t gap = groups.empty() ? 0 : 1;
      // Nest when that brings the running ratio closer to the target.
      bool nest = false;
      if (can_nest && budget - planted >= 2) {
        const double with = static_cast<double>(nested_total + 2) / static_cast<double>(entity_total + 2);
        const double without = static_cast<double>(nested_total) / static_cast<double>(entity_total + 1);
        nest = std::abs(with - target) < std::abs(without - target);
      }
      Group g;
      if (nest) {
        const std::size_t outer = uniform(0, spec.type_count - 1);
        std::size_t inner = uniform(0, spec.type_count - 2);
        if (inner >= outer) ++inner;
        g = make_nested(uniform(1, 2), uniform(0, 1), outer, inner, rng);
      } else {
        g = make_flat(uniform(1, 3), uniform(0, spec.type_count - 1));
      }
      if (used + gap + g.length > length) {
        if (!nest) break;
        // Fall back to the smallest flat entity when the nested group does not fit.
        g = make_flat(1, uniform(0, spec.type_count - 1));
        if (used + gap + g.length > length) break;
      }
      used += gap + g.length;
      planted += g.entities.size();
      entity_total += g.entities.size();
      if (g.entities.size() == 2) nested_total += 2;
      groups.push_back(std::move(g));
    }

    // Spread the free background words over the gaps between and around groups.
    std::vector<std::size_t> gaps(groups.size() + 1, 0);
    for (std::size_t i = 1; i < groups.size(); ++i) gaps[i] = 1;
    for (std::size_t free = length - used; free > 0; --free) ++gaps[uniform(0, gaps.size() - 1)];

    SentenceExample ex;
    for (std::size_t gi = 0; gi <= groups.size(); ++gi) {
      for (std::size_t k = 0; k < gaps[gi]; ++k) ex.tokens.push_back(words.background(rng));
      if (gi == groups.size()) break;
      const std::size_t offset = ex.tokens.size();
      for (const auto& [type, pool] : groups[gi].words) ex.tokens.push_back(words.entity(type, pool, rng));
      for (auto e : groups[gi].entities) {
        e.left += offset;
        e.right += offset;
        ex.entities.push_back(e);
      }
    }
    std::sort(ex.entities.begin(), ex.entities.end());
    ds.examples.push_back(std::move(ex));
  }
  ds.meta.vocab = build_vocabulary(ds.examples);
  return ds;
}

double nesting_ratio(std::span<const SentenceExample> examples) {
  std::size_t nested = 0, total = 0;
  for (const auto& ex : examples) {
    for (std::size_t a = 0; a < ex.entities.size(); ++a) {
      ++total;
      const auto& x = ex.entities[a];
      for (std::size_t b = 0; b < ex.entities.size(); ++b) {
        if (a == b) continue;
        const auto& y = ex.entities[b];
        const bool x_in_y = y.left <= x.left && x.right <= y.right;
        const bool y_in_x = x.left <= y.left && y.right <= x.right;
        if (x_in_y || y_in_x) {
          ++nested;
          break;
        }
      }
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(nested) / static_cast<double>(total);
}

// ---- batching -------------------------------------------------------------

std::vector<Batch> batch_pad(std::span<const SentenceExample> examples, const Vocabulary& vocab,
                             std::size_t batch_size, std::size_t pad_id,
                             std::span<const std::size_t> order) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  std::vector<std::size_t> natural;
  if (order.empty()) {
    natural.resize(examples.size());
    for (std::size_t i = 0; i < natural.size(); ++i) natural[i] = i;
    order = natural;
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    Batch b;
    for (std::size_t k = start; k < end; ++k) b.width = std::max(b.width, examples[order[k]].length());
    for (std::size_t k = start; k < end; ++k) {
      const auto& ex = examples[order[k]];
      auto ids = vocab.encode(ex.tokens);
      ids.resize(b.width, pad_id);
      b.token_ids.insert(b.token_ids.end(), ids.begin(), ids.end());
      b.lengths.push_back(ex.length());
      b.gold.push_back(ex.entities);
      b.example_indices.push_back(order[k]);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace piqn
