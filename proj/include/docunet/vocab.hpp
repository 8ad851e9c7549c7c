#pragma once

#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "docunet/document.hpp"

namespace docunet {

/// Token to id map. Ids 0..3 are reserved for <pad>, <unk>, <e>, </e>.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kEntityStart = 2;
  static constexpr std::size_t kEntityEnd = 3;

  Vocabulary() {
    for (const char* t : {"<pad>", "<unk>", "<e>", "</e>"}) add(t);
  }

  static Vocabulary from_documents(const std::vector<Document>& docs) {
    Vocabulary v;
    for (const auto& d : docs)
      for (const auto& s : d.sentences)
        for (const auto& t : s) v.add(t);
    return v;
  }

  /// Ids follow line order; the first four lines must be the reserved tokens.
  static Vocabulary from_lines(const std::vector<std::string>& lines) {
    static const char* reserved[] = {"<pad>", "<unk>", "<e>", "</e>"};
    if (lines.size() < 4) throw IngestionError("vocabulary: fewer than 4 reserved entries");
    for (std::size_t i = 0; i < 4; ++i) {
      if (lines[i] != reserved[i]) {
        throw IngestionError(detail::cat("vocabulary: line ", i + 1, " must be '", reserved[i],
                                         "', found '", lines[i], "'"));
      }
    }
    Vocabulary v;
    for (std::size_t i = 4; i < lines.size(); ++i) {
      if (v.index_.count(lines[i])) {
        throw IngestionError(detail::cat("vocabulary: duplicate token '", lines[i], "' on line ",
                                         i + 1));
      }
      v.add(lines[i]);
    }
    return v;
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open vocabulary file " + path);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
    return from_lines(lines);
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write vocabulary file " + path);
    for (const auto& t : tokens_) out << t << '\n';
  }

  std::size_t add(const std::string& token) {
    auto [it, inserted] = index_.emplace(token, tokens_.size());
    if (inserted) tokens_.push_back(token);
    return it->second;
  }

  std::size_t id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace docunet
