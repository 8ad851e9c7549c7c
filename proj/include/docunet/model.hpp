#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "docunet/classifier.hpp"
#include "docunet/metrics.hpp"
#include "docunet/relmatrix.hpp"
#include "docunet/segmentation.hpp"
#include "docunet/vocab.hpp"

namespace docunet {

struct ModelConfig {
  EncoderConfig encoder;
  PairStrategy strategy = PairStrategy::Context;
  bool elementwise_similarity = false;
  std::size_t matrix_size = 0;        // N; must cover every document's entity count
  std::size_t reduced_channels = 3;   // D''
  bool use_unet = true;               // false: per-cell FFN with a matched budget
  UNetConfig unet{};                  // channels[0] is forced to reduced_channels
  std::size_t head_hidden = 64;
  CombineMode combine = CombineMode::Concat;
  std::size_t num_relations = 1;
  LossKind loss = LossKind::Balanced;
  bool include_diagonal = false;

  /// Channels of the pair features F before reduction.
  std::size_t feature_channels() const {
    if (strategy == PairStrategy::Context) return encoder.embed_dim;
    return elementwise_similarity ? encoder.embed_dim + 2 : 3;
  }

  void validate() const {
    encoder.validate();
    if (matrix_size == 0) throw ConfigError("matrix size N must be >= 1");
    if (reduced_channels == 0) throw ConfigError("reduced channel count must be >= 1");
    if (num_relations == 0) throw ConfigError("num_relations must be >= 1");
    if (head_hidden == 0) throw ConfigError("head hidden width must be >= 1");
  }
};

/// A document converted to model inputs. Entities are reordered by first
/// appearance; `order[i]` is the original index of model entity i.
struct PreparedDoc {
  std::vector<std::size_t> ids;
  std::vector<std::vector<std::size_t>> mention_index;
  std::vector<std::size_t> order;
  std::size_t n = 0;
  std::size_t num_relations = 0;
  std::vector<double> gold;  // [n*n x R] indicators in model entity order

  bool is_gold(std::size_t s, std::size_t o, std::size_t r) const {
    return gold[(s * n + o) * num_relations + r] > 0.5;
  }
};

inline PreparedDoc prepare(const Document& doc, const Vocabulary& vocab, std::size_t num_relations) {
  validate(doc, num_relations);
  if (doc.entities.empty()) throw DataError("document '" + doc.title + "' has no entities");
  auto marked = insert_markers(doc);
  PreparedDoc p;
  p.n = doc.entities.size();
  p.num_relations = num_relations;
  for (const auto& t : marked.tokens) p.ids.push_back(vocab.id(t));
  p.order = first_appearance_order(doc);
  std::vector<std::size_t> model_index(p.n);
  for (std::size_t i = 0; i < p.n; ++i) {
    model_index[p.order[i]] = i;
    p.mention_index.push_back(marked.mention_index[p.order[i]]);
  }
  p.gold.assign(p.n * p.n * num_relations, 0.0);
  for (const auto& l : doc.labels) {
    p.gold[(model_index[l.head] * p.n + model_index[l.tail]) * num_relations + l.relation] = 1.0;
  }
  return p;
}

/// Scores of the pairs that enter the loss and decoding.
struct DocScores {
  Tensor scores;  // [P x R]
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // model entity indices
};

/// The full pipeline: encoder, pair features, channel reduction, segmentation
/// (or per-cell FFN), and the bilinear pair classifier.
class DocuNet {
 public:
  DocuNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.unet.channels[0] = cfg_.reduced_channels;
    cfg_.validate();
    std::mt19937_64 rng(seed);
    encoder_ = Encoder(cfg_.encoder, store_, rng);
    const std::size_t d = cfg_.encoder.embed_dim, D = cfg_.feature_channels();
    auto H = ParamGroup::Head;
    pair_.elementwise_similarity = cfg_.elementwise_similarity;
    if (cfg_.strategy == PairStrategy::Similarity) {
      pair_.w1 = store_.add("pair.w1", init::glorot(d, d, rng), true, H);
    } else {
      pair_.w2 = store_.add("pair.w2", init::glorot(d, D, rng), true, H);
      pair_.b2 = store_.add("pair.b2", Tensor::zeros({D}), false, H);
    }
    w3_ = store_.add("reduce.w3", init::glorot(D, cfg_.reduced_channels, rng), true, H);
    b3_ = store_.add("reduce.b3", Tensor::zeros({cfg_.reduced_channels}), false, H);
    const std::size_t out = cfg_.unet.channels[5];
    if (cfg_.use_unet) {
      mixer_ = std::make_shared<UNet>(cfg_.unet, store_, rng);
    } else {
      const std::size_t hidden =
          CellFFN::width_for_budget(cfg_.reduced_channels, out, UNet::parameter_count(cfg_.unet));
      mixer_ = std::make_shared<CellFFN>(cfg_.reduced_channels, hidden, out, store_, rng);
    }
    PairHeadConfig hc;
    hc.entity_dim = d;
    hc.cell_dim = out;
    hc.hidden_dim = cfg_.head_hidden;
    hc.num_relations = cfg_.num_relations;
    hc.combine = cfg_.combine;
    head_ = PairHead(hc, store_, rng);
  }

  DocuNet(const DocuNet&) = delete;
  DocuNet& operator=(const DocuNet&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const PairMixer& mixer() const { return *mixer_; }

  /// Relation matrix F [N x N x D] of one document.
  RelationMatrixF relation_matrix(const PreparedDoc& doc) const {
    auto enc = encoder_.dynamic_window_encode(doc.ids, doc.mention_index);
    return build_matrix(enc, entity_embeddings(enc), cfg_.strategy, pair_, cfg_.matrix_size);
  }

  DocScores forward(const PreparedDoc& doc) const {
    if (doc.n > cfg_.matrix_size) {
      throw CapacityError(detail::cat("document has ", doc.n, " entities but the matrix size N is ",
                                      cfg_.matrix_size));
    }
    auto enc = encoder_.dynamic_window_encode(doc.ids, doc.mention_index);
    Tensor E = entity_embeddings(enc);
    auto F = build_matrix(enc, E, cfg_.strategy, pair_, cfg_.matrix_size);
    Tensor image = to_image(reduce_channels(F, w3_, b3_));
    Tensor cells = pair_cells(mixer_->forward(image), doc.n);

    DocScores out;
    std::vector<std::size_t> rows, subj, obj;
    for (std::size_t s = 0; s < doc.n; ++s)
      for (std::size_t o = 0; o < doc.n; ++o) {
        if (s == o && !cfg_.include_diagonal) continue;
        rows.push_back(s * doc.n + o);
        subj.push_back(s);
        obj.push_back(o);
        out.pairs.emplace_back(s, o);
      }
    if (rows.empty()) return out;
    out.scores = head_.scores(gather_rows(E, subj), gather_rows(E, obj), gather_rows(cells, rows));
    return out;
  }

  /// Gold indicators aligned with forward(doc).pairs.
  std::vector<double> pair_gold(const PreparedDoc& doc, const DocScores& s) const {
    std::vector<double> g;
    g.reserve(s.pairs.size() * cfg_.num_relations);
    for (auto [a, b] : s.pairs)
      for (std::size_t r = 0; r < cfg_.num_relations; ++r) g.push_back(doc.is_gold(a, b, r) ? 1.0 : 0.0);
    return g;
  }

  /// Number of pairs forward(doc) scores.
  std::size_t pair_count(const PreparedDoc& doc) const {
    return cfg_.include_diagonal ? doc.n * doc.n : doc.n * (doc.n - 1);
  }

  /// Summed per-pair loss of one document and the number of pairs in it.
  std::pair<Tensor, std::size_t> loss_sum(const PreparedDoc& doc) const {
    auto s = forward(doc);
    if (s.pairs.empty()) return {Tensor(), 0};
    return {reduce_sum(pair_losses(s.scores, pair_gold(doc, s), cfg_.loss)), s.pairs.size()};
  }

  /// Mean per-pair loss over a set of documents.
  Tensor loss(const std::vector<const PreparedDoc*>& docs) const {
    Tensor total;
    std::size_t count = 0;
    for (const auto* d : docs) {
      auto [sum, n] = loss_sum(*d);
      if (!n) continue;
      total = total.defined() ? add(total, sum) : sum;
      count += n;
    }
    if (!count) throw DataError("loss: no pairs included in the batch");
    return scale(total, 1.0 / double(count));
  }

  /// Decoded triples with original entity indices.
  std::vector<Prediction> predict(const PreparedDoc& doc, std::size_t doc_index) const {
    NoGradScope no_grad;
    auto s = forward(doc);
    std::vector<Prediction> out;
    const std::size_t R = cfg_.num_relations;
    auto values = s.scores.defined() ? s.scores.data() : std::span<const double>{};
    for (std::size_t p = 0; p < s.pairs.size(); ++p) {
      for (auto r : decode(values.subspan(p * R, R))) {
        out.push_back({doc_index, doc.order[s.pairs[p].first], doc.order[s.pairs[p].second], r});
      }
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  Encoder encoder_;
  PairFeatureParams pair_;
  Tensor w3_, b3_;
  std::shared_ptr<PairMixer> mixer_;
  PairHead head_;
};

}  // namespace docunet
