#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "docunet/document.hpp"

namespace docunet {

/// Relation inventory: names in id order.
class RelationInfo {
 public:
  RelationInfo() = default;
  explicit RelationInfo(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (!index_.emplace(names_[i], i).second) {
        throw IngestionError("rel_info: duplicate relation " + names_[i]);
      }
    }
  }

  /// Parses a JSON object {"name": id, ...}; ids must be exactly 0..R-1.
  static RelationInfo from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw IngestionError("rel_info: expected a JSON object");
    std::vector<std::string> names(j.size());
    std::vector<bool> seen(j.size(), false);
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!it.value().is_number_integer()) {
        throw IngestionError("rel_info: id of '" + it.key() + "' is not an integer");
      }
      const auto id = it.value().get<long long>();
      if (id < 0 || std::size_t(id) >= names.size() || seen[std::size_t(id)]) {
        throw IngestionError(detail::cat("rel_info: ids must be a permutation of 0..",
                                         names.size() - 1, "; got ", id, " for '", it.key(), "'"));
      }
      seen[std::size_t(id)] = true;
      names[std::size_t(id)] = it.key();
    }
    return RelationInfo(std::move(names));
  }

  static RelationInfo load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open rel_info file " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw IngestionError(path + ": " + e.what());
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < names_.size(); ++i) j[names_[i]] = i;
    return j;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << to_json().dump(2) << '\n';
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("unknown relation " + name);
    return it->second;
  }

 private:
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& rec, const char* field,
                                           std::size_t index) {
  if (!rec.is_object() || !rec.contains(field)) {
    throw IngestionError(cat("record ", index, ": missing required field '", field, "'"));
  }
  return rec.at(field);
}

}  // namespace detail

/// Parses a DocRED-format JSON array. Entity (vertexSet) order is preserved.
/// Unknown relation strings are collected across the whole input and
/// reported together.
inline std::vector<Document> parse_docred(const nlohmann::json& root, const RelationInfo& rels) {
  if (!root.is_array()) throw IngestionError("DocRED input must be a JSON array");
  std::vector<Document> docs;
  std::map<std::string, std::vector<std::size_t>> unknown;
  for (std::size_t i = 0; i < root.size(); ++i) {
    const auto& rec = root[i];
    try {
      Document doc;
      doc.title = detail::require_field(rec, "title", i).get<std::string>();
      doc.sentences = detail::require_field(rec, "sents", i).get<std::vector<std::vector<std::string>>>();
      for (const auto& vertex : detail::require_field(rec, "vertexSet", i)) {
        Entity ent;
        for (const auto& m : vertex) {
          Mention mention;
          mention.name = detail::require_field(m, "name", i).get<std::string>();
          mention.sent_id = detail::require_field(m, "sent_id", i).get<std::size_t>();
          const auto& pos = detail::require_field(m, "pos", i);
          if (!pos.is_array() || pos.size() != 2) {
            throw IngestionError(detail::cat("record ", i, ": mention 'pos' must be [start, end]"));
          }
          mention.begin = pos[0].get<std::size_t>();
          mention.end = pos[1].get<std::size_t>();
          mention.type = m.value("type", std::string{});
          ent.mentions.push_back(std::move(mention));
        }
        doc.entities.push_back(std::move(ent));
      }
      if (rec.contains("labels")) {
        for (const auto& l : rec.at("labels")) {
          const auto r = detail::require_field(l, "r", i).get<std::string>();
          RelationLabel label;
          label.head = detail::require_field(l, "h", i).get<std::size_t>();
          label.tail = detail::require_field(l, "t", i).get<std::size_t>();
          if (l.contains("evidence")) label.evidence = l.at("evidence").get<std::vector<std::size_t>>();
          if (!rels.contains(r)) {
            unknown[r].push_back(i);
            continue;
          }
          label.relation = rels.id(r);
          doc.labels.push_back(std::move(label));
        }
      }
      try {
        validate(doc, rels.size());
      } catch (const DataError& e) {
        throw IngestionError(detail::cat("record ", i, ": ", e.what()));
      }
      docs.push_back(std::move(doc));
    } catch (const nlohmann::json::exception& e) {
      throw IngestionError(detail::cat("record ", i, ": ", e.what()));
    }
  }
  if (!unknown.empty()) {
    std::string msg = "unknown relation(s):";
    for (const auto& [name, records] : unknown) {
      msg += " '" + name + "' (record";
      for (auto r : records) msg += detail::cat(" ", r);
      msg += ")";
    }
    throw IngestionError(msg);
  }
  return docs;
}

inline std::vector<Document> load_docred(const std::string& path, const RelationInfo& rels) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path);
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(path + ": " + e.what());
  }
  return parse_docred(root, rels);
}

inline nlohmann::json to_docred_json(const std::vector<Document>& docs, const RelationInfo& rels) {
  nlohmann::json root = nlohmann::json::array();
  for (const auto& doc : docs) {
    nlohmann::json rec;
    rec["title"] = doc.title;
    rec["sents"] = doc.sentences;
    nlohmann::json vertex_set = nlohmann::json::array();
    for (const auto& ent : doc.entities) {
      nlohmann::json mentions = nlohmann::json::array();
      for (const auto& m : ent.mentions) {
        mentions.push_back({{"name", m.name},
                            {"sent_id", m.sent_id},
                            {"pos", {m.begin, m.end}},
                            {"type", m.type}});
      }
      vertex_set.push_back(std::move(mentions));
    }
    rec["vertexSet"] = std::move(vertex_set);
    nlohmann::json labels = nlohmann::json::array();
    for (const auto& l : doc.labels) {
      labels.push_back(
          {{"h", l.head}, {"t", l.tail}, {"r", rels.name(l.relation)}, {"evidence", l.evidence}});
    }
    rec["labels"] = std::move(labels);
    root.push_back(std::move(rec));
  }
  return root;
}

inline void save_docred(const std::vector<Document>& docs, const RelationInfo& rels,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << to_docred_json(docs, rels).dump() << '\n';
}

}  // namespace docunet
