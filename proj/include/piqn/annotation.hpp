#pragma once

#include <compare>
#include <cstddef>
#include <string>
#include <vector>

namespace piqn {

// Word-indexed span with inclusive ends.
struct EntityAnnotation {
  std::size_t left = 0;
  std::size_t right = 0;
  std::size_t type_id = 0;

  auto operator<=>(const EntityAnnotation&) const = default;
};

struct SentenceExample {
  std::vector<std::string> tokens;
  std::vector<EntityAnnotation> entities;

  std::size_t length() const { return tokens.size(); }

  bool operator==(const SentenceExample&) const = default;
};

}  // namespace piqn
