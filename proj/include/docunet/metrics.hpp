#pragma once

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "docunet/docred.hpp"

namespace docunet {

/// One predicted triple; `doc` indexes the evaluated document list.
struct Prediction {
  std::size_t doc = 0;
  std::size_t head = 0;
  std::size_t tail = 0;
  std::size_t relation = 0;
  auto key() const { return std::tuple(doc, head, tail, relation); }
  bool operator<(const Prediction& o) const { return key() < o.key(); }
  bool operator==(const Prediction& o) const { return key() == o.key(); }
};

struct PRF {
  double precision = 0, recall = 0, f1 = 0;
  std::size_t predicted = 0, gold = 0, correct = 0;
};

inline double harmonic(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

inline PRF make_prf(std::size_t correct, std::size_t predicted, std::size_t gold) {
  PRF m;
  m.correct = correct, m.predicted = predicted, m.gold = gold;
  m.precision = predicted ? double(correct) / double(predicted) : 0.0;
  m.recall = gold ? double(correct) / double(gold) : 0.0;
  m.f1 = harmonic(m.precision, m.recall);
  return m;
}

/// Documents grouped by entity count; bucket i holds counts in [lo, hi].
struct BucketReport {
  std::size_t lo = 0, hi = 0;
  std::size_t docs = 0;
  PRF scores;
  std::string label() const {
    return hi == ~std::size_t{0} ? std::to_string(lo) + "+"
                                 : std::to_string(lo) + "-" + std::to_string(hi);
  }
};

struct EvalReport {
  PRF overall;
  double ign_precision = 0, ign_f1 = 0;
  std::vector<BucketReport> buckets;
  // Gold facts supported by two or more evidence sentences (composed facts).
  PRF composed;
};

/// (head name, tail name, relation) for every mention-name combination of
/// every gold fact, as in the official DocRED scorer.
using FactSet = std::set<std::tuple<std::string, std::string, std::size_t>>;

inline FactSet train_facts(const std::vector<Document>& train) {
  FactSet facts;
  for (const auto& doc : train)
    for (const auto& l : doc.labels)
      for (const auto& hm : doc.entities[l.head].mentions)
        for (const auto& tm : doc.entities[l.tail].mentions) facts.insert({hm.name, tm.name, l.relation});
  return facts;
}

/// Upper bounds of the default entity-count buckets: 1-5, 6-10, 11-15, 16-20, 21+.
inline std::vector<std::size_t> default_bucket_edges() { return {5, 10, 15, 20}; }

/// Exact-match precision, recall and F1 over deduplicated triples.
///
/// Ign F1 follows the official scorer: correct predictions whose names and
/// relation appear among training facts are removed from both the correct
/// count and the prediction count; recall is left unchanged.
inline EvalReport evaluate(const std::vector<Prediction>& predictions,
                           const std::vector<Document>& gold_docs, const FactSet& train = {},
                           const std::vector<std::size_t>& bucket_edges = default_bucket_edges()) {
  std::set<Prediction> gold, composed_gold, preds(predictions.begin(), predictions.end());
  for (std::size_t d = 0; d < gold_docs.size(); ++d)
    for (const auto& l : gold_docs[d].labels) {
      gold.insert({d, l.head, l.tail, l.relation});
      if (l.evidence.size() >= 2) composed_gold.insert({d, l.head, l.tail, l.relation});
    }
  for (const auto& p : preds) {
    if (p.doc >= gold_docs.size() || p.head >= gold_docs[p.doc].entities.size() ||
        p.tail >= gold_docs[p.doc].entities.size()) {
      throw DataError(detail::cat("prediction (doc ", p.doc, ", h ", p.head, ", t ", p.tail,
                                  ") does not refer to an evaluated entity"));
    }
  }

  auto in_train = [&](const Prediction& p) {
    if (train.empty()) return false;
    const auto& doc = gold_docs[p.doc];
    for (const auto& hm : doc.entities[p.head].mentions)
      for (const auto& tm : doc.entities[p.tail].mentions)
        if (train.count({hm.name, tm.name, p.relation})) return true;
    return false;
  };

  std::size_t correct = 0, correct_in_train = 0, composed_correct = 0;
  for (const auto& p : preds) {
    if (!gold.count(p)) continue;
    ++correct;
    if (in_train(p)) ++correct_in_train;
    if (composed_gold.count(p)) ++composed_correct;
  }
  EvalReport report;
  report.overall = make_prf(correct, preds.size(), gold.size());
  const std::size_t ign_pred = preds.size() - correct_in_train;
  report.ign_precision = ign_pred ? double(correct - correct_in_train) / double(ign_pred) : 0.0;
  report.ign_f1 = harmonic(report.ign_precision, report.overall.recall);
  // Only recall is meaningful for a subset of the gold facts.
  report.composed = make_prf(composed_correct, 0, composed_gold.size());

  std::size_t lo = 1;
  for (std::size_t i = 0; i <= bucket_edges.size(); ++i) {
    BucketReport b;
    b.lo = lo;
    b.hi = i < bucket_edges.size() ? bucket_edges[i] : ~std::size_t{0};
    std::size_t bc = 0, bp = 0, bg = 0;
    for (std::size_t d = 0; d < gold_docs.size(); ++d) {
      const std::size_t n = gold_docs[d].entities.size();
      if (n < b.lo || n > b.hi) continue;
      ++b.docs;
      for (const auto& p : preds)
        if (p.doc == d) {
          ++bp;
          if (gold.count(p)) ++bc;
        }
      for (const auto& g : gold)
        if (g.doc == d) ++bg;
    }
    b.scores = make_prf(bc, bp, bg);
    report.buckets.push_back(b);
    if (i < bucket_edges.size()) lo = bucket_edges[i] + 1;
  }
  return report;
}

/// Prediction records {title, h_idx, t_idx, r} with relation names.
inline nlohmann::json predictions_to_json(const std::vector<Prediction>& preds,
                                          const std::vector<Document>& docs,
                                          const RelationInfo& rels) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : preds) {
    out.push_back({{"title", docs.at(p.doc).title},
                   {"h_idx", p.head},
                   {"t_idx", p.tail},
                   {"r", rels.name(p.relation)}});
  }
  return out;
}

/// Inverse of predictions_to_json; titles are resolved against `docs`.
inline std::vector<Prediction> predictions_from_json(const nlohmann::json& j,
                                                     const std::vector<Document>& docs,
                                                     const RelationInfo& rels) {
  if (!j.is_array()) throw IngestionError("predictions must be a JSON array");
  std::map<std::string, std::size_t> by_title;
  for (std::size_t d = 0; d < docs.size(); ++d) by_title.emplace(docs[d].title, d);
  std::vector<Prediction> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& rec = j[i];
    const auto title = detail::require_field(rec, "title", i).get<std::string>();
    auto it = by_title.find(title);
    if (it == by_title.end()) throw IngestionError(detail::cat("record ", i, ": unknown title '", title, "'"));
    const auto r = detail::require_field(rec, "r", i).get<std::string>();
    if (!rels.contains(r)) throw IngestionError(detail::cat("record ", i, ": unknown relation '", r, "'"));
    out.push_back({it->second, detail::require_field(rec, "h_idx", i).get<std::size_t>(),
                   detail::require_field(rec, "t_idx", i).get<std::size_t>(), rels.id(r)});
  }
  return out;
}

}  // namespace docunet
