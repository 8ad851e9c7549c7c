#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "docunet/binary_io.hpp"
#include "docunet/config.hpp"
#include "docunet/metrics.hpp"
#include "docunet/model.hpp"
#include "docunet/optim.hpp"

namespace docunet {

struct Corpus {
  RelationInfo relations;
  std::vector<Document> train, dev;
};

/// Reads the DocRED files named in the config, or generates the synthetic
/// corpus (the first `train_docs` documents train, the rest are dev).
inline Corpus load_corpus(const TrainConfig& cfg) {
  Corpus c;
  if (!cfg.train_path.empty()) {
    c.relations = RelationInfo::load(cfg.rel_info_path);
    c.train = load_docred(cfg.train_path, c.relations);
    if (!cfg.dev_path.empty()) c.dev = load_docred(cfg.dev_path, c.relations);
    return c;
  }
  auto world = cfg.world;
  world.num_docs = cfg.train_docs + cfg.dev_docs;
  auto docs = generate_synthetic(world);
  c.relations = synth::relations();
  c.train.assign(docs.begin(), docs.begin() + std::ptrdiff_t(cfg.train_docs));
  c.dev.assign(docs.begin() + std::ptrdiff_t(cfg.train_docs), docs.end());
  return c;
}

/// Fraction of scored (ordered, non-diagonal) entity pairs with no gold relation.
inline double na_fraction(const std::vector<Document>& docs) {
  std::size_t pairs = 0, positive = 0;
  for (const auto& d : docs) {
    const std::size_t n = d.entities.size();
    pairs += n * (n - 1);
    std::set<std::pair<std::size_t, std::size_t>> with_label;
    for (const auto& l : d.labels) with_label.insert({l.head, l.tail});
    positive += with_label.size();
  }
  return pairs ? 1.0 - double(positive) / double(pairs) : 0.0;
}

struct LogRow {
  std::size_t epoch = 0, step = 0;
  std::string split;
  double loss = 0.0;
  bool scored = false;  // precision .. ign_f1 present
  double precision = 0, recall = 0, f1 = 0, ign_f1 = 0;

  std::string csv() const {
    char buf[256];
    if (scored) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%s,%.10g,%.10g,%.10g,%.10g,%.10g", epoch, step,
                    split.c_str(), loss, precision, recall, f1, ign_f1);
    } else {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%s,%.10g,,,,", epoch, step, split.c_str(), loss);
    }
    return buf;
  }
};

inline constexpr const char* kLogHeader = "epoch,step,split,loss,precision,recall,f1,ign_f1";

struct TrainResult {
  EvalReport best_dev;          // dev report at the best epoch
  std::size_t best_epoch = 0;   // 1-based; 0 when there is no dev split
  std::size_t epochs_run = 0;
  std::size_t steps = 0;
  double first_loss = 0.0, last_loss = 0.0;  // training loss of the first and last step
  std::vector<LogRow> log;

  std::string csv() const {
    std::string out = std::string(kLogHeader) + "\n";
    for (const auto& r : log) out += r.csv() + "\n";
    return out;
  }
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Model, optimizer and data-independent training state.
///
/// Checkpoints hold the full config text, the vocabulary, relation names,
/// counters, the shuffling RNG state, every parameter tensor and both AdamW
/// moment buffers, so a loaded trainer continues exactly where it stopped.
class Trainer {
 public:
  /// `matrix_size = 0` in the config is resolved to the largest entity count
  /// in the corpus. The vocabulary is built from the training split.
  Trainer(TrainConfig cfg, const Corpus& corpus)
      : cfg_(std::move(cfg)), rels_(corpus.relations), vocab_(Vocabulary::from_documents(corpus.train)) {
    if (cfg_.model.matrix_size == 0) {
      for (const auto* split : {&corpus.train, &corpus.dev})
        for (const auto& d : *split) cfg_.model.matrix_size = std::max(cfg_.model.matrix_size, d.entities.size());
    }
    build();
    attach(corpus);
  }

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const TrainConfig& config() const { return cfg_; }
  DocuNet& model() { return *model_; }
  const DocuNet& model() const { return *model_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const RelationInfo& relations() const { return rels_; }
  AdamW& optimizer() { return opt_; }
  std::size_t step_count() const { return step_; }
  std::size_t epoch() const { return epoch_; }

  /// Prepares a corpus for training and evaluation with this trainer's vocabulary.
  void attach(const Corpus& corpus) {
    if (corpus.relations.names() != rels_.names()) {
      throw DataError("corpus relation inventory differs from the trainer's");
    }
    train_docs_ = corpus.train;
    dev_docs_ = corpus.dev;
    facts_ = train_facts(train_docs_);
    train_.clear();
    dev_.clear();
    for (const auto& d : train_docs_) train_.push_back(prepare(d, vocab_, rels_.size()));
    for (const auto& d : dev_docs_) dev_.push_back(prepare(d, vocab_, rels_.size()));
    for (const auto* split : {&train_, &dev_})
      for (const auto& p : *split) {
        if (p.n > cfg_.model.matrix_size) {
          throw CapacityError(detail::cat("a document has ", p.n, " entities but matrix_size is ",
                                          cfg_.model.matrix_size));
        }
      }
  }

  std::size_t steps_per_epoch() const {
    const std::size_t chunk = cfg_.batch_size * cfg_.accumulation_steps;
    return (train_.size() + chunk - 1) / chunk;
  }

  std::size_t total_steps() const {
    return cfg_.max_steps ? cfg_.max_steps : cfg_.epochs * steps_per_epoch();
  }

  /// Mean per-pair loss over the given training documents, without gradients.
  double loss_on(const std::vector<std::size_t>& docs) const {
    NoGradScope no_grad;
    std::vector<const PreparedDoc*> ptrs;
    for (auto i : docs) ptrs.push_back(&train_.at(i));
    return model_->loss(ptrs).item();
  }

  /// One optimizer update on the given training documents. They are split
  /// into micro-batches of `batch_size`; each micro-batch's summed pair loss
  /// is divided by the pair count of the whole update, so the accumulated
  /// gradient equals that of the pooled mean. Returns the pooled mean loss.
  double train_step(const std::vector<std::size_t>& docs) {
    std::size_t total_pairs = 0;
    for (auto i : docs) total_pairs += model_->pair_count(train_.at(i));
    if (!total_pairs) throw DataError("training step without any entity pairs");
    model_->params().zero_grad();
    double loss = 0.0;
    for (std::size_t b = 0; b < docs.size(); b += cfg_.batch_size) {
      Tape tape;
      TapeScope scope(tape);
      Tensor sum;
      for (std::size_t k = b; k < std::min(docs.size(), b + cfg_.batch_size); ++k) {
        auto [s, n] = model_->loss_sum(train_[docs[k]]);
        if (!n) continue;
        sum = sum.defined() ? add(sum, s) : s;
      }
      if (!sum.defined()) continue;
      Tensor part = scale(sum, 1.0 / double(total_pairs));
      loss += part.item();
      tape.backward(part);
    }
    if (!std::isfinite(loss)) {
      throw DivergenceError(detail::cat("non-finite training loss at step ", step_));
    }
    clip_gradients(model_->params(), cfg_.clip_norm);
    const double m = lr_schedule(step_, total_steps(), cfg_.warmup);
    opt_.step(model_->params(), cfg_.lr_encoder * m, cfg_.lr_head * m);
    ++step_;
    return loss;
  }

  std::vector<Prediction> predict(const std::vector<PreparedDoc>& docs) const {
    std::vector<Prediction> out;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      auto p = model_->predict(docs[i], i);
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  EvalReport evaluate_train() const { return evaluate(predict(train_), train_docs_, facts_); }
  EvalReport evaluate_dev() const { return evaluate(predict(dev_), dev_docs_, facts_); }

  double dev_loss() const {
    NoGradScope no_grad;
    std::vector<const PreparedDoc*> ptrs;
    for (const auto& d : dev_) ptrs.push_back(&d);
    return ptrs.empty() ? 0.0 : model_->loss(ptrs).item();
  }

  /// Trains until the epoch budget, `max_steps`, or early stopping ends the
  /// run, then restores the parameters of the best dev epoch. Without a dev
  /// split the final parameters are kept.
  TrainResult run() {
    TrainResult result;
    std::vector<std::size_t> order(train_.size());
    std::vector<std::vector<double>> best_params;
    const std::size_t chunk = cfg_.batch_size * cfg_.accumulation_steps;
    std::ofstream log;
    if (!cfg_.log_path.empty()) {
      log.open(cfg_.log_path);
      if (!log) throw Error("cannot write log file " + cfg_.log_path);
      log << kLogHeader << '\n';
    }
    auto emit = [&](const LogRow& row) {
      result.log.push_back(row);
      if (log) log << row.csv() << '\n' << std::flush;
    };

    bool first = true;
    while (epoch_ < cfg_.epochs && (!cfg_.max_steps || step_ < cfg_.max_steps)) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng_);
      double loss_sum = 0.0;
      std::size_t steps = 0;
      for (std::size_t b = 0; b < order.size(); b += chunk) {
        if (cfg_.max_steps && step_ >= cfg_.max_steps) break;
        std::vector<std::size_t> docs(order.begin() + std::ptrdiff_t(b),
                                      order.begin() + std::ptrdiff_t(std::min(order.size(), b + chunk)));
        const double loss = train_step(docs);
        if (first) result.first_loss = loss, first = false;
        result.last_loss = loss;
        loss_sum += loss;
        ++steps;
      }
      ++epoch_;
      LogRow train_row{epoch_, step_, "train", steps ? loss_sum / double(steps) : 0.0};
      if (cfg_.eval_train) fill_scores(train_row, evaluate_train());
      emit(train_row);

      if (dev_.empty()) continue;
      const auto report = evaluate_dev();
      LogRow dev_row{epoch_, step_, "dev", dev_loss()};
      fill_scores(dev_row, report);
      emit(dev_row);
      if (!std::isfinite(dev_row.loss)) {
        throw DivergenceError(detail::cat("non-finite dev loss after epoch ", epoch_));
      }
      if (report.overall.f1 > best_f1_) {
        best_f1_ = report.overall.f1;
        bad_epochs_ = 0;
        result.best_dev = report;
        result.best_epoch = epoch_;
        best_params.clear();
        for (const auto& p : model_->params().all()) {
          auto v = p.value.data();
          best_params.emplace_back(v.begin(), v.end());
        }
        if (!cfg_.checkpoint_path.empty()) save(cfg_.checkpoint_path);
      } else if (++bad_epochs_ >= cfg_.patience) {
        break;
      }
    }
    if (!best_params.empty()) {
      auto& params = model_->params().all();
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto dst = params[i].value.mutable_data();
        std::copy(best_params[i].begin(), best_params[i].end(), dst.begin());
      }
    } else if (!cfg_.checkpoint_path.empty()) {
      save(cfg_.checkpoint_path);
    }
    result.epochs_run = epoch_;
    result.steps = step_;
    return result;
  }

  // -- checkpoints ----------------------------------------------------------

  void save(std::ostream& out) const {
    out.write("DUNC", 4);
    binio::put_u32(out, kCheckpointVersion);
    binio::put_string(out, config_to_text(cfg_));
    binio::put_u64(out, vocab_.size());
    for (const auto& t : vocab_.tokens()) binio::put_string(out, t);
    binio::put_u64(out, rels_.size());
    for (const auto& r : rels_.names()) binio::put_string(out, r);
    binio::put_u64(out, step_);
    binio::put_u64(out, epoch_);
    binio::put_u64(out, bad_epochs_);
    binio::put_f64(out, best_f1_);
    binio::put_u64(out, opt_.steps());
    std::ostringstream rng_state;
    rng_state << rng_;
    binio::put_string(out, rng_state.str());

    const auto& params = model_->params().all();
    binio::put_u64(out, params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = params[i];
      binio::put_string(out, p.name);
      binio::put_u32(out, std::uint32_t(p.value.rank()));
      for (auto d : p.value.shape()) binio::put_u64(out, d);
      for (double v : p.value.data()) binio::put_f64(out, v);
      for (double v : opt_.first_moments()[i]) binio::put_f64(out, v);
      for (double v : opt_.second_moments()[i]) binio::put_f64(out, v);
    }
  }

  void save(const std::string& path) const {
    // Write to a side file first so a crash never leaves a torn checkpoint.
    const std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw Error("cannot write checkpoint " + tmp);
      save(out);
      if (!out) throw Error("failed writing checkpoint " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot move checkpoint to " + path);
  }

  /// Restores a trainer without data; call attach() before training on it.
  static std::unique_ptr<Trainer> load(std::istream& in) {
    char magic[4];
    binio::read_exact(in, magic, 4);
    if (std::string(magic, 4) != "DUNC") throw IngestionError("not a checkpoint (bad magic)");
    const auto version = binio::get_u32(in);
    if (version != kCheckpointVersion) {
      throw IngestionError(detail::cat("unsupported checkpoint version ", version));
    }
    auto cfg = parse_config(binio::get_string(in));
    std::vector<std::string> tokens(binio::get_u64(in));
    for (auto& t : tokens) t = binio::get_string(in);
    std::vector<std::string> rels(binio::get_u64(in));
    for (auto& r : rels) r = binio::get_string(in);

    std::unique_ptr<Trainer> t(new Trainer(std::move(cfg), Vocabulary::from_lines(tokens),
                                           RelationInfo(std::move(rels))));
    t->step_ = binio::get_u64(in);
    t->epoch_ = binio::get_u64(in);
    t->bad_epochs_ = binio::get_u64(in);
    t->best_f1_ = binio::get_f64(in);
    t->opt_.set_steps(binio::get_u64(in));
    std::istringstream rng_state(binio::get_string(in));
    rng_state >> t->rng_;
    if (!rng_state) throw IngestionError("checkpoint: bad RNG state");

    auto& params = t->model_->params().all();
    const auto count = binio::get_u64(in);
    if (count != params.size()) {
      throw IngestionError(detail::cat("checkpoint has ", count, " tensors, model expects ", params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      const auto name = binio::get_string(in);
      if (name != p.name) throw IngestionError("checkpoint tensor '" + name + "' where '" + p.name + "' expected");
      Shape shape(binio::get_u32(in));
      for (auto& d : shape) d = binio::get_u64(in);
      if (shape != p.value.shape()) {
        throw IngestionError(detail::cat("checkpoint tensor ", name, " has shape ", detail::shape_str(shape),
                                         ", model expects ", detail::shape_str(p.value.shape())));
      }
      for (auto& v : p.value.mutable_data()) v = binio::get_f64(in);
      for (auto& v : t->opt_.first_moments()[i]) v = binio::get_f64(in);
      for (auto& v : t->opt_.second_moments()[i]) v = binio::get_f64(in);
    }
    if (in.peek() != std::char_traits<char>::eof()) throw IngestionError("checkpoint: trailing bytes");
    return t;
  }

  static std::unique_ptr<Trainer> load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot open checkpoint " + path);
    try {
      return load(in);
    } catch (const IngestionError& e) {
      throw IngestionError(path + ": " + e.what());
    }
  }

  /// Prepares documents for prediction with this trainer's vocabulary.
  std::vector<PreparedDoc> prepare_all(const std::vector<Document>& docs) const {
    std::vector<PreparedDoc> out;
    for (const auto& d : docs) out.push_back(prepare(d, vocab_, rels_.size()));
    return out;
  }

 private:
  Trainer(TrainConfig cfg, Vocabulary vocab, RelationInfo rels)
      : cfg_(std::move(cfg)), rels_(std::move(rels)), vocab_(std::move(vocab)) {
    build();
  }

  void build() {
    cfg_.validate();
    ModelConfig mc = cfg_.model;
    mc.encoder.vocab_size = vocab_.size();
    mc.num_relations = rels_.size();
    model_ = std::make_unique<DocuNet>(mc, cfg_.seed);
    AdamWConfig oc;
    oc.weight_decay = cfg_.weight_decay;
    opt_ = AdamW(model_->params(), oc);
    // Distinct stream from the one used for initialization.
    rng_.seed(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
  }

  static void fill_scores(LogRow& row, const EvalReport& r) {
    row.scored = true;
    row.precision = r.overall.precision;
    row.recall = r.overall.recall;
    row.f1 = r.overall.f1;
    row.ign_f1 = r.ign_f1;
  }

  TrainConfig cfg_;
  RelationInfo rels_;
  Vocabulary vocab_;
  std::unique_ptr<DocuNet> model_;
  AdamW opt_;
  std::mt19937_64 rng_;
  std::size_t step_ = 0, epoch_ = 0, bad_epochs_ = 0;
  double best_f1_ = -1.0;  // below any F1, so the first dev epoch is kept

  std::vector<Document> train_docs_, dev_docs_;
  std::vector<PreparedDoc> train_, dev_;
  FactSet facts_;
};

}  // namespace docunet
