#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "docunet/encoder.hpp"
#include "docunet/gradcheck.hpp"
#include "test_util.hpp"

using namespace docunet;
using docunet::testing::max_abs_diff;
using docunet::testing::random_tensor;

namespace {

Document tiny_doc() {
  Document d;
  d.title = "tiny";
  d.sentences = {{"Paris", "is", "in", "France", "."}, {"Lyon", "too", "."}};
  d.entities = {{{{0, 0, 1, "Paris", "LOC"}}},
                {{{0, 3, 4, "France", "LOC"}}},
                {{{1, 0, 1, "Lyon", "LOC"}}}};
  return d;
}

Encoder make_encoder(ParamStore& store, std::size_t vocab, std::size_t d, std::size_t layers,
                     std::size_t heads, std::size_t window, std::size_t stride, unsigned seed) {
  EncoderConfig cfg;
  cfg.vocab_size = vocab;
  cfg.embed_dim = d;
  cfg.num_layers = layers;
  cfg.num_heads = heads;
  cfg.feedforward_dim = 2 * d;
  cfg.window_length = window;
  cfg.window_stride = stride;
  std::mt19937_64 rng(seed);
  return Encoder(cfg, store, rng);
}

std::vector<std::size_t> random_ids(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dist(0, vocab - 1);
  std::vector<std::size_t> ids(n);
  for (auto& x : ids) x = dist(rng);
  return ids;
}

}  // namespace

TEST(Markers, WrapsEveryMention) {
  auto m = insert_markers(tiny_doc());
  std::vector<std::string> want{"<e>", "Paris", "</e>", "is", "in", "<e>", "France", "</e>", ".",
                                "<e>", "Lyon",  "</e>", "too", "."};
  EXPECT_EQ(m.tokens, want);
  ASSERT_EQ(m.mention_index.size(), 3u);
  EXPECT_EQ(m.mention_index[0], std::vector<std::size_t>{0});
  EXPECT_EQ(m.mention_index[1], std::vector<std::size_t>{5});
  EXPECT_EQ(m.mention_index[2], std::vector<std::size_t>{9});
  EXPECT_EQ(m.max_mention_span, 1u);
}

TEST(Markers, MultiTokenAndRepeatedMentions) {
  Document d;
  d.sentences = {{"New", "York", "and", "York"}};
  d.entities = {{{{0, 0, 2, "New York", ""}, {0, 3, 4, "York", ""}}}};
  auto m = insert_markers(d);
  std::vector<std::string> want{"<e>", "New", "York", "</e>", "and", "<e>", "York", "</e>"};
  EXPECT_EQ(m.tokens, want);
  EXPECT_EQ(m.mention_index[0], (std::vector<std::size_t>{0, 5}));
  EXPECT_EQ(m.max_mention_span, 2u);
}

TEST(Markers, OverlappingMentionsNameBothSpans) {
  Document d;
  d.title = "clash";
  d.sentences = {{"a", "b", "c"}};
  d.entities = {{{{0, 0, 2, "", ""}}}, {{{0, 1, 3, "", ""}}}};
  try {
    insert_markers(d);
    FAIL() << "expected IngestionError";
  } catch (const IngestionError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[0,2)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[1,3)"), std::string::npos) << msg;
  }
}

TEST(Markers, OutOfRangeSpanRejected) {
  Document d;
  d.sentences = {{"a"}};
  d.entities = {{{{0, 0, 2, "", ""}}}};
  EXPECT_THROW(insert_markers(d), IngestionError);
}

TEST(Vocab, ReservedPrefixAndRoundTrip) {
  auto v = Vocabulary::from_documents({tiny_doc()});
  EXPECT_EQ(v.token(0), "<pad>");
  EXPECT_EQ(v.token(1), "<unk>");
  EXPECT_EQ(v.id("<e>"), Vocabulary::kEntityStart);
  EXPECT_EQ(v.id("</e>"), Vocabulary::kEntityEnd);
  EXPECT_EQ(v.id("never-seen"), Vocabulary::kUnk);
  auto path = std::filesystem::temp_directory_path() / "docunet_vocab_test.txt";
  v.save(path.string());
  auto w = Vocabulary::load(path.string());
  EXPECT_EQ(v.tokens(), w.tokens());
  std::filesystem::remove(path);
  EXPECT_THROW(Vocabulary::from_lines({"<unk>", "<pad>", "<e>", "</e>"}), IngestionError);
  EXPECT_THROW(Vocabulary::from_lines({"<pad>", "<unk>", "<e>", "</e>", "x", "x"}), IngestionError);
}

TEST(Encoder, SingleTokenAttentionIsOne) {
  ParamStore store;
  auto enc = make_encoder(store, 10, 8, 2, 2, 16, 8, 1);
  auto out = enc.encode({5});
  EXPECT_EQ(out.hidden.shape(), (Shape{1, 8}));
  ASSERT_EQ(out.attention.shape(), (Shape{2, 1, 1}));
  EXPECT_NEAR(out.attention[0], 1.0, 1e-15);
  EXPECT_NEAR(out.attention[1], 1.0, 1e-15);
}

TEST(Encoder, DefaultConfigShapes) {
  ParamStore store;
  EncoderConfig cfg;
  cfg.vocab_size = 50;
  std::mt19937_64 rng(3);
  Encoder enc(cfg, store, rng);
  std::mt19937_64 r(4);
  auto out = enc.encode(random_ids(20, 50, r));
  EXPECT_EQ(out.hidden.shape(), (Shape{20, 64}));
  EXPECT_EQ(out.attention.shape(), (Shape{4, 20, 20}));
}

TEST(Encoder, AttentionRowsAreDistributions) {
  ParamStore store;
  auto enc = make_encoder(store, 30, 8, 2, 2, 32, 16, 2);
  std::mt19937_64 rng(9);
  auto out = enc.encode(random_ids(17, 30, rng));
  const std::size_t L = 17;
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t i = 0; i < L; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < L; ++j) {
        double a = out.attention[(k * L + i) * L + j];
        EXPECT_GE(a, 0.0);
        s += a;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Encoder, InvalidConfigRejected) {
  ParamStore store;
  EncoderConfig cfg;
  cfg.vocab_size = 5;
  cfg.embed_dim = 10;
  cfg.num_heads = 4;
  std::mt19937_64 rng(0);
  EXPECT_THROW(Encoder(cfg, store, rng), ConfigError);
}

TEST(Encoder, TooLongForOneWindow) {
  ParamStore store;
  auto enc = make_encoder(store, 10, 8, 1, 2, 4, 2, 1);
  EXPECT_THROW(enc.encode({1, 2, 3, 4, 5}), DimensionError);
}

TEST(Windows, StartsCoverEveryToken) {
  for (std::size_t total = 1; total <= 200; ++total) {
    auto starts = window_starts(total, 16, 8);
    std::vector<int> cover(total, 0);
    for (auto s : starts) {
      ASSERT_LE(s + std::min<std::size_t>(16, total), total);
      for (std::size_t t = s; t < std::min(total, s + 16); ++t) cover[t]++;
    }
    for (std::size_t t = 0; t < total; ++t) ASSERT_GE(cover[t], 1) << "total " << total;
    EXPECT_EQ(starts.back() + std::min<std::size_t>(16, total), total) << total;
  }
}

TEST(Windows, DynamicEncodingMatchesSinglePassWhenItFits) {
  ParamStore store;
  auto enc = make_encoder(store, 40, 8, 2, 2, 24, 12, 5);
  std::mt19937_64 rng(11);
  for (std::size_t L : {1u, 7u, 24u}) {
    auto ids = random_ids(L, 40, rng);
    auto a = enc.encode(ids), b = enc.dynamic_window_encode(ids);
    EXPECT_EQ(max_abs_diff(a.hidden, b.hidden), 0.0);
    EXPECT_EQ(max_abs_diff(a.attention, b.attention), 0.0);
  }
}

// Straight-line oracle: encode each window on its own and average by coverage.
TEST(Windows, DynamicEncodingAveragesOverlappingWindows) {
  ParamStore store;
  const std::size_t W = 8, S = 4, d = 8, K = 2;
  auto enc = make_encoder(store, 40, d, 1, K, W, S, 6);
  std::mt19937_64 rng(12);
  for (std::size_t L = 1; L <= 60; ++L) {
    auto ids = random_ids(L, 40, rng);
    auto got = enc.dynamic_window_encode(ids);
    ASSERT_EQ(got.hidden.shape(), (Shape{L, d}));
    ASSERT_EQ(got.attention.shape(), (Shape{K, L, L}));
    if (L <= W) continue;
    std::vector<double> h(L * d, 0.0), a(K * L * L, 0.0), cov(L, 0.0);
    for (auto s : window_starts(L, W, S)) {
      auto w = enc.encode(std::vector<std::size_t>(ids.begin() + s, ids.begin() + s + W));
      for (std::size_t t = 0; t < W; ++t) {
        cov[s + t] += 1;
        for (std::size_t j = 0; j < d; ++j) h[(s + t) * d + j] += w.hidden[t * d + j];
        for (std::size_t k = 0; k < K; ++k)
          for (std::size_t u = 0; u < W; ++u)
            a[(k * L + s + t) * L + s + u] += w.attention[(k * W + t) * W + u];
      }
    }
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t j = 0; j < d; ++j)
        ASSERT_NEAR(got.hidden[t * d + j], h[t * d + j] / cov[t], 1e-12);
      for (std::size_t k = 0; k < K; ++k) {
        // Averaged rows already sum to one, so renormalization is a no-op.
        double s = 0;
        for (std::size_t u = 0; u < L; ++u) {
          ASSERT_NEAR(got.attention[(k * L + t) * L + u], a[(k * L + t) * L + u] / cov[t], 1e-12);
          s += got.attention[(k * L + t) * L + u];
        }
        ASSERT_NEAR(s, 1.0, 1e-12);
      }
    }
  }
}

TEST(Pooling, SingleMentionIsItsMarkerEmbedding) {
  ParamStore store;
  auto enc = make_encoder(store, 40, 8, 1, 2, 32, 16, 7);
  std::mt19937_64 rng(1);
  auto out = enc.encode(random_ids(10, 40, rng), {{3}, {1, 6}});
  auto e0 = entity_pool(out, {3});
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(e0[j], out.hidden[3 * 8 + j], 1e-14);
  auto e1 = entity_pool(out, {1, 6});
  for (std::size_t j = 0; j < 8; ++j) {
    double a = out.hidden[8 + j], b = out.hidden[6 * 8 + j];
    EXPECT_NEAR(e1[j], std::max(a, b) + std::log1p(std::exp(-std::abs(a - b))), 1e-12);
    EXPECT_GE(e1[j], std::max(a, b));
    EXPECT_LE(e1[j], std::max(a, b) + std::log(2.0) + 1e-12);
  }
  EXPECT_THROW(entity_pool(out, {}), DataError);
}

TEST(Pooling, EntityAndPairAttentionAreDistributions) {
  ParamStore store;
  auto enc = make_encoder(store, 40, 8, 2, 2, 32, 16, 8);
  std::mt19937_64 rng(2);
  const std::size_t L = 12;
  auto out = enc.encode(random_ids(L, 40, rng));
  auto as = entity_attention(out, {0, 4});
  auto ao = entity_attention(out, {7});
  ASSERT_EQ(as.shape(), (Shape{2, L}));
  for (std::size_t k = 0; k < 2; ++k) {
    double s = 0;
    for (std::size_t j = 0; j < L; ++j) {
      // Mean of the two marker rows.
      double mean = 0.5 * (out.attention[(k * L + 0) * L + j] + out.attention[(k * L + 4) * L + j]);
      EXPECT_NEAR(as[k * L + j], mean, 1e-12);
      s += as[k * L + j];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  auto a = pair_attention(as, ao);
  ASSERT_EQ(a.shape(), (Shape{L}));
  std::vector<double> logits(L, 0.0);
  double z = 0;
  for (std::size_t j = 0; j < L; ++j) {
    for (std::size_t k = 0; k < 2; ++k) logits[j] += as[k * L + j] * ao[k * L + j];
    z += std::exp(logits[j]);
  }
  for (std::size_t j = 0; j < L; ++j) EXPECT_NEAR(a[j], std::exp(logits[j]) / z, 1e-12);
}

TEST(PairFeatures, ContextMatchesStraightLineLoops) {
  std::mt19937_64 rng(21);
  const std::size_t L = 9, d = 4, D = 5;
  auto H = random_tensor({L, d}, rng);
  auto a = random_tensor({L}, rng);
  std::vector<double> av(a.values());
  double z = 0;
  for (auto& v : av) z += (v = std::abs(v));
  for (auto& v : av) v /= z;
  auto attn = Tensor::from({L}, av);
  auto W2 = random_tensor({d, D}, rng), b2 = random_tensor({D}, rng);
  auto got = context_features(H, attn, W2, b2);
  ASSERT_EQ(got.shape(), (Shape{D}));
  for (std::size_t c = 0; c < D; ++c) {
    double want = b2[c];
    for (std::size_t j = 0; j < d; ++j) {
      double pooled = 0;
      for (std::size_t t = 0; t < L; ++t) pooled += H[t * d + j] * av[t];
      want += pooled * W2[j * D + c];
    }
    EXPECT_NEAR(got[c], want, 1e-12);
  }
}

TEST(PairFeatures, SimilarityOfIdenticalUnitVectors) {
  const std::size_t d = 6;
  std::vector<double> e(d, 0.0), eye(d * d, 0.0);
  e[2] = 1.0;
  for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  auto v = Tensor::from({d}, e);
  auto f = similarity_features(v, v, Tensor::from({d, d}, eye));
  ASSERT_EQ(f.shape(), (Shape{3}));
  EXPECT_NEAR(f[0], 1.0, 1e-15);
  EXPECT_NEAR(f[1], 1.0, 1e-15);
  EXPECT_NEAR(f[2], 1.0, 1e-15);
}

TEST(PairFeatures, SimilarityOfOrthogonalVectors) {
  auto s = Tensor::from({3}, {2, 0, 0}), o = Tensor::from({3}, {0, 3, 0});
  auto w1 = Tensor::from({3, 3}, {0, 1, 0, 0, 0, 0, 0, 0, 0});
  auto f = similarity_features(s, o, w1);
  EXPECT_NEAR(f[0], 0.0, 1e-15);
  EXPECT_NEAR(f[1], 0.0, 1e-15);
  EXPECT_NEAR(f[2], 6.0, 1e-15);
}

TEST(EncoderGradients, FiniteDifferences) {
  ParamStore store;
  auto enc = make_encoder(store, 12, 8, 2, 2, 8, 4, 31);
  std::mt19937_64 rng(5);
  auto ids = random_ids(11, 12, rng);  // forces two windows
  auto target = random_tensor({11, 8}, rng);
  auto loss = [&] {
    auto out = enc.dynamic_window_encode(ids, {{1, 7}, {4}});
    auto e = entity_pool(out, {1, 7});
    auto pa = pair_attention(entity_attention(out, {1, 7}), entity_attention(out, {4}));
    return reduce_sum(mul(out.hidden, target)) + reduce_sum(mul(e, e)) +
           reduce_sum(mul(pa, reshape(slice(target, 1, 0, 1), {11})));
  };
  GradCheckOptions opts;
  opts.max_entries_per_tensor = 12;
  auto r = check_gradients(loss, store.tensors(), store.names(), opts);
  EXPECT_LE(r.max_rel_error, 1e-6) << r.worst;
}
