#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "docunet/errors.hpp"

namespace docunet {

struct Mention {
  std::size_t sent_id = 0;
  std::size_t begin = 0;  // token offset within the sentence, inclusive
  std::size_t end = 0;    // exclusive
  std::string name;
  std::string type;
};

struct Entity {
  std::vector<Mention> mentions;
};

struct RelationLabel {
  std::size_t head = 0;
  std::size_t tail = 0;
  std::size_t relation = 0;
  std::vector<std::size_t> evidence;
};

/// Tokenized document with entity mentions and gold relation labels.
struct Document {
  std::string title;
  std::vector<std::vector<std::string>> sentences;
  std::vector<Entity> entities;
  std::vector<RelationLabel> labels;
};

/// Checks mention spans and label indices; throws DataError on the first
/// violation.
inline void validate(const Document& doc, std::size_t num_relations) {
  for (std::size_t e = 0; e < doc.entities.size(); ++e) {
    if (doc.entities[e].mentions.empty()) {
      throw DataError(detail::cat("document '", doc.title, "': entity ", e, " has no mentions"));
    }
    for (const auto& m : doc.entities[e].mentions) {
      if (m.sent_id >= doc.sentences.size() || m.begin >= m.end ||
          m.end > doc.sentences[m.sent_id].size()) {
        throw DataError(detail::cat("document '", doc.title, "': entity ", e, " mention [",
                                    m.begin, ",", m.end, ") out of bounds in sentence ",
                                    m.sent_id));
      }
    }
  }
  for (const auto& l : doc.labels) {
    if (l.head >= doc.entities.size() || l.tail >= doc.entities.size()) {
      throw DataError(detail::cat("document '", doc.title, "': label references entity ",
                                  std::max(l.head, l.tail), " of ", doc.entities.size()));
    }
    if (l.relation >= num_relations) {
      throw DataError(detail::cat("document '", doc.title, "': relation id ", l.relation,
                                  " >= ", num_relations));
    }
  }
}

/// Entity indices sorted by the position of their earliest mention
/// (sentence, then token offset). Ties keep the original order.
inline std::vector<std::size_t> first_appearance_order(const Document& doc) {
  std::vector<std::size_t> order(doc.entities.size());
  std::iota(order.begin(), order.end(), 0);
  auto first = [&](std::size_t e) {
    std::tuple<std::size_t, std::size_t> best{~std::size_t{0}, ~std::size_t{0}};
    for (const auto& m : doc.entities[e].mentions) best = std::min(best, {m.sent_id, m.begin});
    return best;
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return first(a) < first(b); });
  return order;
}

}  // namespace docunet
