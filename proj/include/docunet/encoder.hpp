#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "docunet/document.hpp"
#include "docunet/ops.hpp"
#include "docunet/params.hpp"
#include "docunet/vocab.hpp"

namespace docunet {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t feedforward_dim = 128;
  std::size_t window_length = 128;
  std::size_t window_stride = 64;
  // Attention maps averaged over all layers, or taken from the last one.
  bool last_layer_attention = false;

  void validate() const {
    if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
      throw ConfigError(detail::cat("embed_dim ", embed_dim, " must be a positive multiple of "
                                    "num_heads ", num_heads));
    }
    if (num_layers == 0) throw ConfigError("num_layers must be >= 1");
    if (window_length == 0) throw ConfigError("window_length must be >= 1");
    if (window_stride == 0 || window_stride > window_length) {
      throw ConfigError(detail::cat("window_stride ", window_stride,
                                    " must be in [1, window_length=", window_length, "]"));
    }
  }
};

/// Marked token sequence: every mention wrapped in <e> ... </e>.
struct MarkedTokens {
  std::vector<std::string> tokens;
  // Per entity (document order): positions of the <e> marker of each mention.
  std::vector<std::vector<std::size_t>> mention_index;
  std::size_t max_mention_span = 0;
};

/// Flattens the sentences and wraps every mention in entity markers.
inline MarkedTokens insert_markers(const Document& doc) {
  struct Span {
    std::size_t begin, end, entity, mention;
  };
  std::vector<std::vector<Span>> per_sentence(doc.sentences.size());
  for (std::size_t e = 0; e < doc.entities.size(); ++e) {
    const auto& ms = doc.entities[e].mentions;
    for (std::size_t k = 0; k < ms.size(); ++k) {
      const auto& m = ms[k];
      if (m.sent_id >= doc.sentences.size() || m.begin >= m.end ||
          m.end > doc.sentences[m.sent_id].size()) {
        throw IngestionError(detail::cat("document '", doc.title, "': mention ", k, " of entity ",
                                         e, " has invalid span [", m.begin, ",", m.end,
                                         ") in sentence ", m.sent_id));
      }
      per_sentence[m.sent_id].push_back({m.begin, m.end, e, k});
    }
  }
  std::string overlaps;
  for (std::size_t s = 0; s < per_sentence.size(); ++s) {
    auto& spans = per_sentence[s];
    std::stable_sort(spans.begin(), spans.end(),
                     [](const Span& a, const Span& b) { return a.begin < b.begin; });
    for (std::size_t i = 1; i < spans.size(); ++i) {
      if (spans[i].begin < spans[i - 1].end) {
        overlaps += detail::cat(overlaps.empty() ? "" : "; ", "sentence ", s, ": entity ",
                                spans[i - 1].entity, " [", spans[i - 1].begin, ",",
                                spans[i - 1].end, ") and entity ", spans[i].entity, " [",
                                spans[i].begin, ",", spans[i].end, ")");
      }
    }
  }
  if (!overlaps.empty()) {
    throw IngestionError("document '" + doc.title + "': overlapping mentions: " + overlaps);
  }

  MarkedTokens out;
  out.mention_index.resize(doc.entities.size());
  for (std::size_t s = 0; s < doc.sentences.size(); ++s) {
    const auto& spans = per_sentence[s];
    std::size_t next = 0;
    for (std::size_t t = 0; t < doc.sentences[s].size(); ++t) {
      if (next < spans.size() && spans[next].begin == t) {
        out.mention_index[spans[next].entity].push_back(out.tokens.size());
        out.tokens.push_back("<e>");
        out.max_mention_span = std::max(out.max_mention_span, spans[next].end - spans[next].begin);
      }
      out.tokens.push_back(doc.sentences[s][t]);
      if (next < spans.size() && spans[next].end == t + 1) {
        out.tokens.push_back("</e>");
        ++next;
      }
    }
  }
  for (auto& positions : out.mention_index) std::sort(positions.begin(), positions.end());
  return out;
}

/// Contextual token embeddings and layer-averaged attention of one document.
struct EncodedDoc {
  Tensor hidden;     // [L x d]
  Tensor attention;  // [K x L x L], rows sum to one
  std::vector<std::vector<std::size_t>> mention_index;

  std::size_t length() const { return hidden.dim(0); }
  std::size_t heads() const { return attention.dim(0); }
};

/// Windows [start, start + length) covering a sequence of `total` tokens.
inline std::vector<std::size_t> window_starts(std::size_t total, std::size_t length,
                                              std::size_t stride) {
  if (stride == 0 || stride > length) {
    throw ConfigError(detail::cat("window stride ", stride, " must be in [1, ", length, "]"));
  }
  std::vector<std::size_t> starts{0};
  if (total <= length) return starts;
  std::size_t s = 0;
  while (s + length < total) {
    s = std::min(s + stride, total - length);
    starts.push_back(s);
  }
  return starts;
}

/// Pre-norm transformer encoder with learned positional embeddings.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, ParamStore& store, std::mt19937_64& rng) : cfg_(cfg) {
    cfg_.validate();
    if (cfg_.vocab_size == 0) throw ConfigError("encoder vocab_size must be set");
    const std::size_t d = cfg_.embed_dim, f = cfg_.feedforward_dim;
    const double emb_std = 1.0 / std::sqrt(double(d));
    auto E = ParamGroup::Encoder;
    tok_emb_ = store.add("enc.tok_emb", init::normal({cfg_.vocab_size, d}, 1.0, rng), true, E);
    pos_emb_ = store.add("enc.pos_emb", init::normal({cfg_.window_length, d}, emb_std, rng), true, E);
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
      const std::string p = "enc.l" + std::to_string(l) + ".";
      Layer L;
      L.ln1_g = store.add(p + "ln1.g", Tensor::ones({d}), true, E);
      L.ln1_b = store.add(p + "ln1.b", Tensor::zeros({d}), false, E);
      L.w_qkv = store.add(p + "qkv.w", init::glorot(d, 3 * d, rng), true, E);
      L.b_qkv = store.add(p + "qkv.b", Tensor::zeros({3 * d}), false, E);
      L.w_out = store.add(p + "out.w", init::glorot(d, d, rng), true, E);
      L.b_out = store.add(p + "out.b", Tensor::zeros({d}), false, E);
      L.ln2_g = store.add(p + "ln2.g", Tensor::ones({d}), true, E);
      L.ln2_b = store.add(p + "ln2.b", Tensor::zeros({d}), false, E);
      L.w_ff1 = store.add(p + "ff1.w", init::glorot(d, f, rng), true, E);
      L.b_ff1 = store.add(p + "ff1.b", Tensor::zeros({f}), false, E);
      L.w_ff2 = store.add(p + "ff2.w", init::glorot(f, d, rng), true, E);
      L.b_ff2 = store.add(p + "ff2.b", Tensor::zeros({d}), false, E);
      layers_.push_back(L);
    }
    lnf_g_ = store.add("enc.lnf.g", Tensor::ones({d}), true, E);
    lnf_b_ = store.add("enc.lnf.b", Tensor::zeros({d}), false, E);
  }

  const EncoderConfig& config() const { return cfg_; }

  /// Single-pass encoding; the sequence must fit one window.
  EncodedDoc encode(const std::vector<std::size_t>& ids,
                    std::vector<std::vector<std::size_t>> mention_index = {}) const {
    const std::size_t L = ids.size(), d = cfg_.embed_dim, K = cfg_.num_heads;
    if (L == 0) throw DataError("encode: empty token sequence");
    if (L > cfg_.window_length) {
      throw DimensionError(detail::cat("encode: sequence of ", L, " tokens exceeds window_length ",
                                       cfg_.window_length, "; use dynamic_window_encode"));
    }
    std::vector<std::size_t> positions(L);
    std::iota(positions.begin(), positions.end(), 0);
    std::vector<std::size_t> clamped(ids);
    for (auto& id : clamped) {
      if (id >= cfg_.vocab_size) id = Vocabulary::kUnk;
    }
    Tensor x = add(gather_rows(tok_emb_, clamped), gather_rows(pos_emb_, positions));

    const std::size_t dh = d / K;
    const double inv_sqrt = 1.0 / std::sqrt(double(dh));
    std::vector<Tensor> head_sum(K);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& layer = layers_[l];
      Tensor h = layer_norm(x, layer.ln1_g, layer.ln1_b);
      Tensor qkv = linear(h, layer.w_qkv, layer.b_qkv);
      std::vector<Tensor> heads;
      const bool keep = !cfg_.last_layer_attention || l + 1 == layers_.size();
      for (std::size_t k = 0; k < K; ++k) {
        Tensor q = slice(qkv, 1, k * dh, (k + 1) * dh);
        Tensor kk = slice(qkv, 1, d + k * dh, d + (k + 1) * dh);
        Tensor v = slice(qkv, 1, 2 * d + k * dh, 2 * d + (k + 1) * dh);
        Tensor probs = softmax(scale(matmul(q, transpose(kk)), inv_sqrt), 1);
        heads.push_back(matmul(probs, v));
        if (keep) head_sum[k] = head_sum[k].defined() ? add(head_sum[k], probs) : probs;
      }
      Tensor attn_out = heads.size() == 1 ? heads[0] : concat(heads, 1);
      x = add(x, linear(attn_out, layer.w_out, layer.b_out));
      Tensor h2 = layer_norm(x, layer.ln2_g, layer.ln2_b);
      x = add(x, linear(relu(linear(h2, layer.w_ff1, layer.b_ff1)), layer.w_ff2, layer.b_ff2));
    }
    EncodedDoc out;
    out.hidden = layer_norm(x, lnf_g_, lnf_b_);
    const double denom = cfg_.last_layer_attention ? 1.0 : double(layers_.size());
    std::vector<Tensor> maps;
    for (auto& t : head_sum) maps.push_back(reshape(scale(t, 1.0 / denom), {1, L, L}));
    out.attention = maps.size() == 1 ? maps[0] : concat(maps, 0);
    out.mention_index = std::move(mention_index);
    return out;
  }

  /// Encodes overlapping windows and averages token embeddings and attention
  /// rows over the windows covering each token. Identical to encode() when the
  /// sequence fits one window.
  EncodedDoc dynamic_window_encode(const std::vector<std::size_t>& ids,
                                   std::vector<std::vector<std::size_t>> mention_index = {}) const {
    const std::size_t L = ids.size(), W = cfg_.window_length;
    if (L <= W) return encode(ids, std::move(mention_index));
    const std::size_t d = cfg_.embed_dim, K = cfg_.num_heads;
    auto starts = window_starts(L, W, cfg_.window_stride);
    std::vector<double> coverage(L, 0.0);
    Tensor hidden_sum, attn_sum;
    for (std::size_t s : starts) {
      std::vector<std::size_t> part(ids.begin() + s, ids.begin() + s + W);
      EncodedDoc w = encode(part);
      Tensor h = pad(w.hidden, 0, s, L - s - W);
      Tensor a = pad(pad(w.attention, 1, s, L - s - W), 2, s, L - s - W);
      hidden_sum = hidden_sum.defined() ? add(hidden_sum, h) : h;
      attn_sum = attn_sum.defined() ? add(attn_sum, a) : a;
      for (std::size_t t = s; t < s + W; ++t) coverage[t] += 1.0;
    }
    std::vector<double> inv_h(L * d), inv_a(K * L * L);
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t j = 0; j < d; ++j) inv_h[t * d + j] = 1.0 / coverage[t];
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t t = 0; t < L; ++t)
        for (std::size_t j = 0; j < L; ++j) inv_a[(k * L + t) * L + j] = 1.0 / coverage[t];
    EncodedDoc out;
    out.hidden = mul(hidden_sum, Tensor::from({L, d}, std::move(inv_h)));
    out.attention = normalize(mul(attn_sum, Tensor::from({K, L, L}, std::move(inv_a))), 2);
    out.mention_index = std::move(mention_index);
    return out;
  }

 private:
  struct Layer {
    Tensor ln1_g, ln1_b, w_qkv, b_qkv, w_out, b_out, ln2_g, ln2_b, w_ff1, b_ff1, w_ff2, b_ff2;
  };

  EncoderConfig cfg_;
  Tensor tok_emb_, pos_emb_, lnf_g_, lnf_b_;
  std::vector<Layer> layers_;
};

/// Logsumexp pooling of an entity's mention (marker) embeddings, [d].
inline Tensor entity_pool(const EncodedDoc& enc, const std::vector<std::size_t>& mentions) {
  if (mentions.empty()) throw DataError("entity_pool: entity has no mentions");
  return logsumexp(gather_rows(enc.hidden, mentions), 0);
}

/// Per-head token importance for an entity, [K x L]: the mean of its marker
/// attention rows, renormalized to sum to one.
inline Tensor entity_attention(const EncodedDoc& enc, const std::vector<std::size_t>& mentions) {
  if (mentions.empty()) throw DataError("entity_attention: entity has no mentions");
  const std::size_t K = enc.heads(), L = enc.length(), m = mentions.size();
  std::vector<std::size_t> rows;
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t pos : mentions) rows.push_back(k * L + pos);
  Tensor picked = gather_rows(reshape(enc.attention, {K * L, L}), rows);
  return normalize(sum(reshape(picked, {K, m, L}), 1), 1);
}

/// Entity-pair attention over tokens, [L]: softmax over the head-summed
/// product of the two entities' attention.
inline Tensor pair_attention(const Tensor& subject_attn, const Tensor& object_attn) {
  return softmax(sum(mul(subject_attn, object_attn), 0), 0);
}

/// Context feature W2 (H^T a) + b2 for one pair, [D].
inline Tensor context_features(const Tensor& hidden, const Tensor& pair_attn, const Tensor& w2,
                               const Tensor& b2) {
  const std::size_t L = hidden.dim(0);
  Tensor pooled = matmul(reshape(pair_attn, {1, L}), hidden);
  Tensor out = linear(pooled, w2, b2);
  return reshape(out, {out.dim(1)});
}

/// [dot(es, eo), cos(es, eo), es^T W1 eo] for one pair, [3].
inline Tensor similarity_features(const Tensor& subject, const Tensor& object, const Tensor& w1) {
  const std::size_t d = subject.numel();
  Tensor s = reshape(subject, {1, d}), o = reshape(object, {1, d});
  Tensor dot = reduce_sum(mul(s, o));
  Tensor cos = cosine_rows(s, o);
  Tensor bil = reduce_sum(mul(matmul(s, w1), o));
  return concat({dot, cos, bil}, 0);
}

}  // namespace docunet
