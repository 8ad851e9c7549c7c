#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "docunet/docred.hpp"

namespace docunet {

/// Three-level containment world: cities lie in regions, regions in
/// countries. Each document states the atomic facts in separate sentences;
/// the city-to-country fact is only recoverable by composing two of them.
struct SyntheticWorldConfig {
  std::size_t num_docs = 100;
  std::size_t min_countries = 2, max_countries = 2;
  std::size_t min_regions = 3, max_regions = 4;  // per document, >= countries
  std::size_t min_cities = 4, max_cities = 8;    // per document, >= regions
  std::size_t num_distractors = 0;  // entities mentioned once with no relation
  std::size_t name_pool = 400;      // entity names n0 .. n{pool-1}
  double noise_rate = 0.0;          // chance of a filler sentence after each sentence
  bool closure = true;              // add composed (city, country, country) facts
  std::uint64_t seed = 0;

  void validate() const {
    if (num_docs == 0) throw ConfigError("synthetic: num_docs must be >= 1");
    if (min_countries == 0 || min_regions == 0 || min_cities == 0) {
      throw ConfigError("synthetic: countries, regions and cities must be >= 1");
    }
    if (min_countries > max_countries || min_regions > max_regions || min_cities > max_cities) {
      throw ConfigError("synthetic: min counts must not exceed max counts");
    }
    if (max_countries > min_regions || max_regions > min_cities) {
      throw ConfigError("synthetic: every country needs a region and every region a city");
    }
    if (name_pool == 0) throw ConfigError("synthetic: name_pool must be >= 1");
    if (noise_rate < 0.0 || noise_rate >= 1.0) throw ConfigError("synthetic: noise_rate in [0,1)");
  }
};

namespace synth {
constexpr std::size_t kLocatedIn = 0;
constexpr std::size_t kCountry = 1;
inline RelationInfo relations() { return RelationInfo({"located_in", "country"}); }
}  // namespace synth

/// Adds (a, country, c) for every (a, located_in, b) and (b, country, c),
/// with the union of both evidence sets. Idempotent.
inline std::vector<RelationLabel> compose_closure(const std::vector<RelationLabel>& labels) {
  std::vector<RelationLabel> out = labels;
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> have;
  for (const auto& l : labels) have.insert({l.head, l.tail, l.relation});
  for (const auto& a : labels) {
    if (a.relation != synth::kLocatedIn) continue;
    for (const auto& b : labels) {
      if (b.relation != synth::kCountry || b.head != a.tail) continue;
      if (!have.insert({a.head, b.tail, synth::kCountry}).second) continue;
      RelationLabel c{a.head, b.tail, synth::kCountry, a.evidence};
      c.evidence.insert(c.evidence.end(), b.evidence.begin(), b.evidence.end());
      std::sort(c.evidence.begin(), c.evidence.end());
      c.evidence.erase(std::unique(c.evidence.begin(), c.evidence.end()), c.evidence.end());
      out.push_back(std::move(c));
    }
  }
  return out;
}

namespace detail {

// Picks a name from the pool; a name already used in the document, or one
// that collides with a function word, is suffixed until unique.
inline std::string fresh_name(std::set<std::string>& used, std::size_t pool, std::mt19937_64& rng) {
  static const std::set<std::string> reserved{"locatedin", "country", "is", "remote", "and",
                                              "also", "."};
  std::string base = "n" + std::to_string(rng() % pool);
  std::string name = base;
  for (std::size_t k = 1; used.count(name) || reserved.count(name); ++k) {
    name = base + "_" + std::to_string(k);
  }
  used.insert(name);
  return name;
}

inline std::size_t draw(std::size_t lo, std::size_t hi, std::mt19937_64& rng) {
  return lo + std::size_t(rng() % (hi - lo + 1));
}

}  // namespace detail

/// Deterministic per seed: the same config yields identical corpora.
inline std::vector<Document> generate_synthetic(const SyntheticWorldConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::vector<Document> docs;
  for (std::size_t d = 0; d < cfg.num_docs; ++d) {
    const std::size_t n_countries = detail::draw(cfg.min_countries, cfg.max_countries, rng);
    const std::size_t n_regions = std::max(n_countries, detail::draw(cfg.min_regions, cfg.max_regions, rng));
    const std::size_t n_cities = std::max(n_regions, detail::draw(cfg.min_cities, cfg.max_cities, rng));

    // Every country gets a region and every region a city; the rest are random.
    std::vector<std::size_t> region_country(n_regions), city_region(n_cities);
    for (std::size_t r = 0; r < n_regions; ++r) region_country[r] = r < n_countries ? r : rng() % n_countries;
    for (std::size_t c = 0; c < n_cities; ++c) city_region[c] = c < n_regions ? c : rng() % n_regions;
    std::shuffle(region_country.begin(), region_country.end(), rng);
    std::shuffle(city_region.begin(), city_region.end(), rng);

    std::set<std::string> used;
    auto names = [&](std::size_t n) {
      std::vector<std::string> v;
      for (std::size_t i = 0; i < n; ++i) v.push_back(detail::fresh_name(used, cfg.name_pool, rng));
      return v;
    };
    auto country_names = names(n_countries), region_names = names(n_regions),
         city_names = names(n_cities), distractor_names = names(cfg.num_distractors);

    Document doc;
    doc.title = "synthetic-" + std::to_string(cfg.seed) + "-" + std::to_string(d);
    std::vector<std::size_t> entity_of_city(n_cities), entity_of_region(n_regions),
        entity_of_country(n_countries, ~std::size_t{0});
    auto mention = [&](std::size_t sent, std::size_t pos, const std::string& name,
                       const char* type) -> std::size_t {
      doc.entities.push_back({{{sent, pos, pos + 1, name, type}}});
      return doc.entities.size() - 1;
    };
    auto add_mention = [&](std::size_t entity, std::size_t sent, std::size_t pos) {
      const auto& first = doc.entities[entity].mentions.front();
      doc.entities[entity].mentions.push_back({sent, pos, pos + 1, first.name, first.type});
    };
    auto maybe_filler = [&] {
      if (cfg.noise_rate > 0 && std::uniform_real_distribution<double>()(rng) < cfg.noise_rate) {
        doc.sentences.push_back({"n" + std::to_string(rng() % cfg.name_pool), "is", "also", "."});
      }
    };
    std::vector<std::size_t> distractor_slots;
    for (std::size_t i = 0; i < cfg.num_distractors; ++i) distractor_slots.push_back(rng() % (n_regions + 1));

    auto emit_distractors = [&](std::size_t slot) {
      for (std::size_t i = 0; i < cfg.num_distractors; ++i) {
        if (distractor_slots[i] != slot) continue;
        const std::size_t s = doc.sentences.size();
        doc.sentences.push_back({distractor_names[i], "is", "remote", "."});
        mention(s, 0, distractor_names[i], "LOC");
        maybe_filler();
      }
    };

    // Regions in random order; each one's city sentences, then its country sentence.
    std::vector<std::size_t> region_order(n_regions);
    std::iota(region_order.begin(), region_order.end(), 0);
    std::shuffle(region_order.begin(), region_order.end(), rng);
    for (std::size_t slot = 0; slot < n_regions; ++slot) {
      emit_distractors(slot);
      const std::size_t r = region_order[slot];
      bool region_seen = false;
      for (std::size_t c = 0; c < n_cities; ++c) {
        if (city_region[c] != r) continue;
        const std::size_t s = doc.sentences.size();
        doc.sentences.push_back({city_names[c], "locatedin", region_names[r], "."});
        entity_of_city[c] = mention(s, 0, city_names[c], "LOC");
        if (region_seen) {
          add_mention(entity_of_region[r], s, 2);
        } else {
          entity_of_region[r] = mention(s, 2, region_names[r], "LOC");
          region_seen = true;
        }
        doc.labels.push_back({entity_of_city[c], entity_of_region[r], synth::kLocatedIn, {s}});
        maybe_filler();
      }
      const std::size_t k = region_country[r];
      const std::size_t s = doc.sentences.size();
      doc.sentences.push_back({region_names[r], "country", country_names[k], "."});
      add_mention(entity_of_region[r], s, 0);
      if (entity_of_country[k] == ~std::size_t{0}) {
        entity_of_country[k] = mention(s, 2, country_names[k], "LOC");
      } else {
        add_mention(entity_of_country[k], s, 2);
      }
      doc.labels.push_back({entity_of_region[r], entity_of_country[k], synth::kCountry, {s}});
      maybe_filler();
    }
    emit_distractors(n_regions);
    if (cfg.closure) doc.labels = compose_closure(doc.labels);
    docs.push_back(std::move(doc));
  }
  return docs;
}

}  // namespace docunet
