#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "docunet/ablate.hpp"
#include "docunet/train.hpp"

using namespace docunet;

namespace {

// A few small documents and a narrow model, so every test trains in well
// under a second.
TrainConfig small_config() {
  TrainConfig c;
  c.train_docs = 6;
  c.dev_docs = 2;
  c.world.min_countries = c.world.max_countries = 1;
  c.world.min_regions = c.world.max_regions = 2;
  c.world.min_cities = 2, c.world.max_cities = 3;
  c.model.encoder.embed_dim = 8;
  c.model.encoder.num_heads = 2;
  c.model.encoder.feedforward_dim = 16;
  c.model.head_hidden = 8;
  c.model.unet.channels = {3, 4, 8, 4, 4, 4};
  c.epochs = 2;
  c.batch_size = 2;
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("docunet_test_" + name)).string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<double>> snapshot(const ParamStore& store) {
  std::vector<std::vector<double>> out;
  for (const auto& p : store.all()) {
    auto v = p.value.data();
    out.emplace_back(v.begin(), v.end());
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Schedule, clipping, optimizer

TEST(Schedule, WarmupAndDecayEndpoints) {
  EXPECT_EQ(lr_schedule(0, 1000), 0.0);
  EXPECT_DOUBLE_EQ(lr_schedule(60, 1000), 1.0);
  EXPECT_EQ(lr_schedule(1000, 1000), 0.0);
  EXPECT_DOUBLE_EQ(lr_schedule(30, 1000), 0.5);
  EXPECT_DOUBLE_EQ(lr_schedule(530, 1000), 0.5);
}

TEST(Schedule, RisesThenFalls) {
  double prev = -1;
  for (std::size_t s = 0; s <= 60; ++s) {
    EXPECT_GT(lr_schedule(s, 1000), prev);
    prev = lr_schedule(s, 1000);
  }
  for (std::size_t s = 61; s <= 1000; ++s) {
    EXPECT_LT(lr_schedule(s, 1000), prev);
    prev = lr_schedule(s, 1000);
  }
}

TEST(Clip, SmallNormUntouched) {
  ParamStore store;
  auto p = store.add("p", Tensor::zeros({2}), true, ParamGroup::Head);
  p.mutable_grad()[0] = 0.3, p.mutable_grad()[1] = 0.4;
  EXPECT_EQ(clip_gradients(store, 1.0), 1.0);
  EXPECT_EQ(p.grad(), (std::vector<double>{0.3, 0.4}));
}

TEST(Clip, ThreeFourBecomesPointSixPointEight) {
  ParamStore store;
  auto p = store.add("p", Tensor::zeros({2}), true, ParamGroup::Head);
  p.mutable_grad()[0] = 3, p.mutable_grad()[1] = 4;
  EXPECT_DOUBLE_EQ(clip_gradients(store, 1.0), 0.2);
  EXPECT_DOUBLE_EQ(p.grad()[0], 0.6);
  EXPECT_DOUBLE_EQ(p.grad()[1], 0.8);
}

TEST(Clip, RandomGradientsEndAtMostUnitNorm) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> dist(0.0, 5.0);
  for (int trial = 0; trial < 100; ++trial) {
    ParamStore store;
    for (int t = 0; t < 4; ++t) {
      auto p = store.add("p" + std::to_string(t), Tensor::zeros({std::size_t(1 + rng() % 20)}), true,
                         ParamGroup::Head);
      for (auto& g : p.mutable_grad()) g = dist(rng);
    }
    clip_gradients(store, 1.0);
    EXPECT_LE(global_grad_norm(store), 1.0 + 1e-12);
  }
}

TEST(AdamW, ZeroGradientZeroDecayLeavesParameters) {
  ParamStore store;
  auto p = store.add("p", Tensor::from({3}, {1, -2, 3}), true, ParamGroup::Head);
  p.mutable_grad();  // allocated, all zero
  AdamWConfig cfg;
  cfg.weight_decay = 0;
  AdamW opt(store, cfg);
  opt.step(store, 0.1, 0.1);
  EXPECT_EQ(p.values(), (std::vector<double>{1, -2, 3}));
}

TEST(AdamW, StepMovesAgainstTheGradient) {
  ParamStore store;
  auto p = store.add("p", Tensor::scalar(1.0), true, ParamGroup::Head);
  p.mutable_grad()[0] = 1.0;
  AdamWConfig cfg;
  cfg.weight_decay = 0;
  AdamW opt(store, cfg);
  opt.step(store, 0.1, 0.1);
  EXPECT_LT(p[0], 1.0);
}

TEST(AdamW, TwoStepsOnAQuadraticMatchStraightLineOracle) {
  // f(w) = 0.5 * sum(a_i * w_i^2), g = a * w; decay on, two groups.
  const std::vector<double> a = {1.0, 3.0, 0.5};
  ParamStore store;
  auto w = store.add("w", Tensor::from({3}, {1.0, -2.0, 0.5}), true, ParamGroup::Encoder);
  auto b = store.add("b", Tensor::from({1}, {0.7}), false, ParamGroup::Head);
  AdamWConfig cfg;
  cfg.weight_decay = 0.01;
  AdamW opt(store, cfg);
  const double lr_e = 0.05, lr_h = 0.2;

  std::vector<double> ow = {1.0, -2.0, 0.5}, om(3, 0), ov(3, 0);
  double ob = 0.7, bm = 0, bv = 0;
  for (int t = 1; t <= 2; ++t) {
    for (std::size_t i = 0; i < 3; ++i) w.mutable_grad()[i] = a[i] * w[i];
    b.mutable_grad()[0] = 2.0 * b[0];
    opt.step(store, lr_e, lr_h);

    const double c1 = 1 - std::pow(0.9, t), c2 = 1 - std::pow(0.999, t);
    for (std::size_t i = 0; i < 3; ++i) {
      const double g = a[i] * ow[i];
      om[i] = 0.9 * om[i] + 0.1 * g;
      ov[i] = 0.999 * ov[i] + 0.001 * g * g;
      ow[i] -= lr_e * 0.01 * ow[i];
      ow[i] -= lr_e * (om[i] / c1) / (std::sqrt(ov[i] / c2) + 1e-8);
    }
    const double g = 2.0 * ob;
    bm = 0.9 * bm + 0.1 * g;
    bv = 0.999 * bv + 0.001 * g * g;
    ob -= lr_h * (bm / c1) / (std::sqrt(bv / c2) + 1e-8);  // no decay on biases
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_LE(std::abs(w[i] - ow[i]), 1e-12 * std::abs(ow[i]));
  EXPECT_LE(std::abs(b[0] - ob), 1e-12 * std::abs(ob));
}

TEST(AdamW, NonFiniteGradientNamesTheParameter) {
  ParamStore store;
  store.add("good", Tensor::zeros({2}), true, ParamGroup::Head);
  auto bad = store.add("enc.bad", Tensor::zeros({2}), true, ParamGroup::Encoder);
  bad.mutable_grad()[1] = std::nan("");
  AdamW opt(store, {});
  try {
    opt.step(store, 0.1, 0.1);
    FAIL() << "expected a divergence error";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("enc.bad"), std::string::npos) << e.what();
  }
  EXPECT_EQ(bad[0], 0.0);  // nothing was applied
}

// ---------------------------------------------------------------------------
// Config

TEST(Config, ParsesValuesCommentsAndBlankLines) {
  auto c = parse_config(
      "# comment line\n"
      "\n"
      "epochs = 7   # trailing comment\n"
      "lr_head=0.002\n"
      "loss = bce\n"
      "strategy = similarity\n"
      "use_unet = false\n"
      "unet_channels = 3, 8, 16, 8, 4, 8\n"
      "world.max_cities = 11\n");
  EXPECT_EQ(c.epochs, 7u);
  EXPECT_EQ(c.lr_head, 0.002);
  EXPECT_EQ(c.model.loss, LossKind::BCE);
  EXPECT_EQ(c.model.strategy, PairStrategy::Similarity);
  EXPECT_FALSE(c.model.use_unet);
  EXPECT_EQ(c.model.unet.channels, (std::array<std::size_t, 6>{3, 8, 16, 8, 4, 8}));
  EXPECT_EQ(c.world.max_cities, 11u);
  EXPECT_EQ(c.batch_size, TrainConfig{}.batch_size);  // untouched default
}

TEST(Config, UnknownKeyIsAnError) {
  try {
    parse_config("epochs = 3\nlearning_rate = 0.1\n");
    FAIL() << "expected a config error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Config, MalformedLinesAndValuesAreErrors) {
  EXPECT_THROW(parse_config("epochs 3\n"), ConfigError);
  EXPECT_THROW(parse_config("epochs = three\n"), ConfigError);
  EXPECT_THROW(parse_config("epochs = 3\nepochs = 4\n"), ConfigError);
  EXPECT_THROW(parse_config("loss = hinge\n"), ConfigError);
  EXPECT_THROW(parse_config("use_unet = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("unet_channels = 3,4\n"), ConfigError);
}

TEST(Config, TextRoundTripIsExact) {
  auto c = parse_config("lr_encoder = 0.1\nwarmup = 0.0625\nseed = 12345678901\ncombine = add\n");
  const auto text = config_to_text(c);
  EXPECT_EQ(config_to_text(parse_config(text)), text);
  EXPECT_EQ(parse_config(text).lr_encoder, 0.1);
  EXPECT_EQ(parse_config(text).seed, 12345678901u);
}

TEST(Config, EveryFieldIsAddressable) {
  // Each serialized key can be set on its own, and changing it changes the text.
  const auto defaults = config_to_text(TrainConfig{});
  std::istringstream in(defaults);
  std::size_t keys = 0;
  for (std::string line; std::getline(in, line);) {
    const auto key = line.substr(0, line.find(" = "));
    const auto value = line.substr(line.find(" = ") + 3);
    EXPECT_NO_THROW(parse_config(key + " = " + value + "\n")) << key;
    ++keys;
  }
  EXPECT_GE(keys, 40u);
  for (const auto& [key, value] : std::vector<std::pair<std::string, std::string>>{
           {"batch_size", "9"}, {"accumulation_steps", "3"}, {"patience", "2"},
           {"reduced_channels", "5"}, {"matrix_size", "42"}, {"weight_decay", "0.1"},
           {"clip_norm", "2.5"}, {"max_steps", "10"}, {"world.noise_rate", "0.25"}}) {
    EXPECT_NE(config_to_text(parse_config(key + " = " + value + "\n")), defaults) << key;
  }
}

TEST(Config, ValidationCatchesBadCombinations) {
  auto c = TrainConfig{};
  EXPECT_NO_THROW(c.validate());
  c.warmup = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lr_head = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.model.reduced_channels = 4;  // unet_channels still starts at 3
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.train_path = "train.json";  // no rel_info
  EXPECT_THROW(c.validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// Training loop

TEST(Train, ZeroLearningRateLeavesParametersBitEqual) {
  auto cfg = small_config();
  cfg.lr_encoder = cfg.lr_head = 0.0;
  const auto corpus = load_corpus(cfg);
  Trainer t(cfg, corpus);
  const auto before = snapshot(t.model().params());
  t.run();
  EXPECT_EQ(snapshot(t.model().params()), before);
}

TEST(Train, SameSeedGivesIdenticalLogs) {
  auto cfg = small_config();
  const auto corpus = load_corpus(cfg);
  Trainer a(cfg, corpus), b(cfg, corpus);
  const auto la = a.run().csv(), lb = b.run().csv();
  EXPECT_EQ(la, lb);
  EXPECT_EQ(la.substr(0, la.find('\n')), "epoch,step,split,loss,precision,recall,f1,ign_f1");
  cfg.seed = 1;
  Trainer c(cfg, corpus);
  EXPECT_NE(c.run().csv(), la);
}

TEST(Train, LogFileMatchesInMemoryLog) {
  auto cfg = small_config();
  cfg.log_path = temp_path("log.csv");
  const auto corpus = load_corpus(cfg);
  Trainer t(cfg, corpus);
  const auto r = t.run();
  EXPECT_EQ(read_file(cfg.log_path), r.csv());
  // One train and one dev row per epoch.
  EXPECT_EQ(r.log.size(), 2 * cfg.epochs);
  std::remove(cfg.log_path.c_str());
}

TEST(Train, AccumulationMatchesFullBatch) {
  auto full = small_config();
  full.batch_size = 4;
  full.accumulation_steps = 1;
  auto accum = full;
  accum.batch_size = 1;
  accum.accumulation_steps = 4;
  const auto corpus = load_corpus(full);
  Trainer a(full, corpus), b(accum, corpus);
  for (const auto& docs : std::vector<std::vector<std::size_t>>{{0, 1, 2, 3}, {4, 5, 0, 2}, {1, 3, 5, 4}}) {
    const double la = a.train_step(docs), lb = b.train_step(docs);
    EXPECT_LE(std::abs(la - lb), 1e-10 * std::abs(la));
  }
  const auto pa = snapshot(a.model().params()), pb = snapshot(b.model().params());
  double worst = 0;
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i].size(); ++j) {
      worst = std::max(worst, std::abs(pa[i][j] - pb[i][j]) / std::max(std::abs(pa[i][j]), 1e-3));
    }
  EXPECT_LE(worst, 1e-10);
}

TEST(Train, UnevenMicroBatchesStillPoolPairs) {
  // Batch 2 with accumulation 2 over three documents equals one pooled batch.
  auto one = small_config();
  one.batch_size = 3;
  auto split = one;
  split.batch_size = 2;
  split.accumulation_steps = 2;
  const auto corpus = load_corpus(one);
  Trainer a(one, corpus), b(split, corpus);
  const std::vector<std::size_t> docs{0, 3, 5};
  const double expect = a.loss_on(docs);
  EXPECT_LE(std::abs(b.train_step(docs) - expect), 1e-12 * expect);
}

TEST(Train, EarlyStoppingHonoursPatience) {
  auto cfg = small_config();
  cfg.lr_encoder = cfg.lr_head = 0.0;  // dev F1 never improves after epoch 1
  cfg.epochs = 20;
  cfg.patience = 3;
  const auto corpus = load_corpus(cfg);
  Trainer t(cfg, corpus);
  const auto r = t.run();
  EXPECT_EQ(r.best_epoch, 1u);
  EXPECT_EQ(r.epochs_run, 4u);
}

TEST(Train, MaxStepsBoundsTheRun) {
  auto cfg = small_config();
  cfg.epochs = 50;
  cfg.max_steps = 5;
  cfg.dev_docs = 0;
  const auto corpus = load_corpus(cfg);
  Trainer t(cfg, corpus);
  const auto r = t.run();
  EXPECT_EQ(r.steps, 5u);
  EXPECT_EQ(r.best_epoch, 0u);
}

TEST(Train, BestParametersAreRestored) {
  auto cfg = small_config();
  cfg.epochs = 4;
  cfg.lr_encoder = cfg.lr_head = 1e-2;
  const auto corpus = load_corpus(cfg);
  Trainer t(cfg, corpus);
  const auto r = t.run();
  EXPECT_EQ(t.evaluate_dev().overall.f1, r.best_dev.overall.f1);
}

TEST(Train, CapacityErrorWhenMatrixTooSmall) {
  auto cfg = small_config();
  cfg.model.matrix_size = 2;
  EXPECT_THROW(Trainer(cfg, load_corpus(cfg)), CapacityError);
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto cfg = small_config();
  const auto corpus = load_corpus(cfg);
  Trainer t(cfg, corpus);
  t.run();
  std::ostringstream first;
  t.save(first);
  std::istringstream in(first.str());
  auto loaded = Trainer::load(in);
  std::ostringstream second;
  loaded->save(second);
  EXPECT_EQ(first.str().substr(0, 4), "DUNC");
  EXPECT_EQ(first.str(), second.str());
}

TEST(Checkpoint, ResumedTrainerTakesTheSameNextStep) {
  auto cfg = small_config();
  const auto corpus = load_corpus(cfg);
  Trainer t(cfg, corpus);
  t.train_step({0, 1});
  t.train_step({2, 3});
  const auto path = temp_path("resume.dunc");
  t.save(path);
  auto r = Trainer::load(path);
  r->attach(corpus);
  EXPECT_EQ(r->step_count(), 2u);
  const double a = t.train_step({4, 5}), b = r->train_step({4, 5});
  EXPECT_EQ(a, b);
  EXPECT_EQ(snapshot(t.model().params()), snapshot(r->model().params()));
  // Shuffling continues identically as well.
  auto ra = t.run(), rb = r->run();
  EXPECT_EQ(ra.csv(), rb.csv());
  std::remove(path.c_str());
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  auto cfg = small_config();
  const auto corpus = load_corpus(cfg);
  Trainer t(cfg, corpus);
  std::ostringstream out;
  t.save(out);
  auto bytes = out.str();
  {
    auto bad = bytes;
    bad[0] = 'X';
    std::istringstream in(bad);
    EXPECT_THROW(Trainer::load(in), IngestionError);
  }
  {
    std::istringstream in(bytes.substr(0, bytes.size() / 2));
    EXPECT_THROW(Trainer::load(in), IngestionError);
  }
  {
    std::istringstream in(bytes + "x");
    EXPECT_THROW(Trainer::load(in), IngestionError);
  }
}

TEST(Checkpoint, DivergenceKeepsTheLastCheckpoint) {
  auto cfg = small_config();
  cfg.checkpoint_path = temp_path("diverge.dunc");
  cfg.epochs = 1;
  const auto corpus = load_corpus(cfg);
  Trainer t(cfg, corpus);
  t.run();
  const auto saved = read_file(cfg.checkpoint_path);
  ASSERT_FALSE(saved.empty());
  // Poison a weight: the next loss is NaN and training must stop.
  for (auto& v : t.model().params().all().front().value.mutable_data()) v = std::nan("");
  EXPECT_THROW(t.train_step({0, 1}), DivergenceError);
  EXPECT_EQ(read_file(cfg.checkpoint_path), saved);
  std::remove(cfg.checkpoint_path.c_str());
}

// ---------------------------------------------------------------------------
// Ablation bookkeeping

TEST(Ablate, EveryVariantAndSeedIsRun) {
  auto cfg = small_config();
  cfg.epochs = 1;
  const auto corpus = load_corpus(cfg);
  std::size_t calls = 0;
  auto report = ablate(cfg, corpus, all_variants(), {0, 1}, [&](const AblationRun&) { ++calls; });
  EXPECT_EQ(report.runs.size(), 8u);
  EXPECT_EQ(calls, 8u);
  ASSERT_EQ(report.summaries.size(), 4u);
  for (auto v : all_variants()) {
    EXPECT_EQ(report.runs_of(v).size(), 2u);
    const auto& s = report.summary(v);
    const double f0 = report.runs_of(v)[0]->result.best_dev.overall.f1;
    const double f1 = report.runs_of(v)[1]->result.best_dev.overall.f1;
    EXPECT_DOUBLE_EQ(s.mean_f1, (f0 + f1) / 2);
    EXPECT_NEAR(s.sd_f1, std::abs(f0 - f1) / std::sqrt(2.0), 1e-12);
  }
  const auto table = format_report(report);
  for (auto v : all_variants()) EXPECT_NE(table.find(to_string(v)), std::string::npos);
}

TEST(Ablate, VariantsSwitchExactlyOneComponent) {
  const TrainConfig base;
  EXPECT_FALSE(apply_variant(base, Variant::NoUNet).model.use_unet);
  EXPECT_EQ(apply_variant(base, Variant::BCE).model.loss, LossKind::BCE);
  EXPECT_EQ(apply_variant(base, Variant::Similarity).model.strategy, PairStrategy::Similarity);
  EXPECT_EQ(config_to_text(apply_variant(base, Variant::Full)), config_to_text(base));
  EXPECT_EQ(parse_variant("wo_unet"), Variant::NoUNet);
  EXPECT_THROW(parse_variant("nope"), ConfigError);
}

TEST(Ablate, LocalityProbeSeparatesMixers) {
  auto cfg = small_config();
  const auto corpus = load_corpus(cfg);
  Trainer full(cfg, corpus), local(apply_variant(cfg, Variant::NoUNet), corpus);
  EXPECT_EQ(locality_probe(local.model().mixer(), 9, 0, 4, 4), 0u);
  EXPECT_GT(locality_probe(full.model().mixer(), 9, 0, 4, 4), 8u);
}

TEST(Ablate, FfnReplacementMatchesUNetBudget) {
  auto cfg = small_config();
  cfg.model.unet = UNetConfig{};  // desk schedule
  const auto corpus = load_corpus(cfg);
  Trainer full(cfg, corpus), local(apply_variant(cfg, Variant::NoUNet), corpus);
  auto mixer_params = [](const ParamStore& s, const std::string& prefix) {
    std::size_t n = 0;
    for (const auto& p : s.all())
      if (p.name.rfind(prefix, 0) == 0) n += p.value.numel();
    return n;
  };
  const double u = double(mixer_params(full.model().params(), "unet."));
  const double f = double(mixer_params(local.model().params(), "ffn."));
  EXPECT_GT(u, 0);
  EXPECT_LE(std::abs(f - u) / u, 0.10);
}
