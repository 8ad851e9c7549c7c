// docunet command-line front end: train, eval, ablate, gradcheck, gen-synthetic.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "docunet/ablate.hpp"
#include "docunet/diagnostics.hpp"
#include "docunet/train.hpp"

using namespace docunet;

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    out.push_back(detail::parse_number<std::uint64_t>("--seeds", detail::trim(item)));
  }
  if (out.empty()) throw ConfigError("--seeds: at least one seed required");
  return out;
}

void print_report(const EvalReport& r) {
  std::printf("P %.4f  R %.4f  F1 %.4f  Ign F1 %.4f  composed recall %.4f (%zu facts)\n",
              r.overall.precision, r.overall.recall, r.overall.f1, r.ign_f1, r.composed.recall,
              r.composed.gold);
  for (const auto& b : r.buckets) {
    if (!b.docs) continue;
    std::printf("  entities %-6s docs %4zu  F1 %.4f\n", b.label().c_str(), b.docs, b.scores.f1);
  }
}

int cmd_train(const std::string& config, std::optional<std::uint64_t> seed, const std::string& log,
              const std::string& checkpoint) {
  auto cfg = load_config(config);
  if (seed) cfg.seed = *seed;
  if (!log.empty()) cfg.log_path = log;
  if (!checkpoint.empty()) cfg.checkpoint_path = checkpoint;
  const auto corpus = load_corpus(cfg);
  Trainer trainer(cfg, corpus);
  std::printf("train %zu docs, dev %zu docs, N = %zu, %zu parameters\n", corpus.train.size(),
              corpus.dev.size(), trainer.config().model.matrix_size, trainer.model().params().count());
  auto result = trainer.run();
  for (const auto& row : result.log) std::printf("%s\n", row.csv().c_str());
  if (result.best_epoch) {
    std::printf("best epoch %zu: ", result.best_epoch);
    print_report(result.best_dev);
  } else {
    std::printf("train: ");
    print_report(trainer.evaluate_train());
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& train_data,
             const std::string& out) {
  auto trainer = Trainer::load(checkpoint);
  const auto docs = load_docred(data, trainer->relations());
  FactSet facts;
  if (!train_data.empty()) facts = train_facts(load_docred(train_data, trainer->relations()));
  const auto preds = trainer->predict(trainer->prepare_all(docs));
  print_report(evaluate(preds, docs, facts));
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw Error("cannot write " + out);
    f << predictions_to_json(preds, docs, trainer->relations()).dump(1) << '\n';
  }
  return 0;
}

int cmd_ablate(const std::string& config, const std::string& seeds, const std::string& variants,
               const std::string& out) {
  const auto cfg = load_config(config);
  std::vector<Variant> vs;
  if (variants.empty()) {
    vs = all_variants();
  } else {
    std::stringstream ss(variants);
    for (std::string item; std::getline(ss, item, ',');) vs.push_back(parse_variant(detail::trim(item)));
  }
  const auto corpus = load_corpus(cfg);
  auto report = ablate(cfg, corpus, vs, parse_seeds(seeds), [](const AblationRun& r) {
    std::printf("%-10s seed %-3llu  dev F1 %.4f  composed recall %.4f  best epoch %zu  %.1fs\n",
                to_string(r.variant), static_cast<unsigned long long>(r.seed), r.result.best_dev.overall.f1,
                r.result.best_dev.composed.recall, r.result.best_epoch, r.seconds);
    std::fflush(stdout);
  });
  const auto table = format_report(report);
  std::printf("\n%s", table.c_str());
  for (auto v : vs) {
    if (v != Variant::NoUNet) continue;
    // The replacement network must not mix cells; the U-Net must.
    auto no_unet = apply_variant(cfg, Variant::NoUNet);
    Trainer probe(no_unet, corpus);
    const auto n = probe.config().model.matrix_size;
    std::printf("\nlocality probe (cells changed by a one-cell perturbation): wo_unet %zu",
                locality_probe(probe.model().mixer(), n, 0, n / 2, n / 2));
    Trainer full(apply_variant(cfg, Variant::Full), corpus);
    std::printf(", full %zu of %zu\n", locality_probe(full.model().mixer(), n, 0, n / 2, n / 2), n * n - 1);
  }
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw Error("cannot write " + out);
    f << table;
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t entries) {
  bool ok = true;
  for (auto strategy : {PairStrategy::Context, PairStrategy::Similarity})
    for (bool unet : {true, false}) {
      ModelGradCheckOptions o;
      o.seed = seed;
      o.strategy = strategy;
      o.use_unet = unet;
      o.entries_per_tensor = entries;
      const auto r = model_gradcheck(o);
      const bool pass = r.max_rel_error <= 1e-4;
      ok = ok && pass;
      std::printf("%-4s %-10s %-7s entries %5zu  max rel err %.3e  worst %s\n", pass ? "ok" : "FAIL",
                  to_string(strategy), unet ? "unet" : "ffn", r.entries_checked, r.max_rel_error,
                  r.worst.c_str());
    }
  return ok ? 0 : 1;
}

int cmd_gen(const std::string& out, std::uint64_t seed, const std::string& config, std::size_t docs,
            const std::string& rel_out) {
  TrainConfig cfg = config.empty() ? TrainConfig{} : load_config(config);
  auto world = cfg.world;
  world.seed = seed;
  world.num_docs = docs ? docs : cfg.train_docs + cfg.dev_docs;
  const auto corpus = generate_synthetic(world);
  save_docred(corpus, synth::relations(), out);
  if (!rel_out.empty()) synth::relations().save(rel_out);
  std::printf("wrote %zu documents to %s\n", corpus.size(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DocuNet: document-level relation extraction as relation-matrix segmentation"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train one model and keep the best dev checkpoint");
  std::string config, log, checkpoint;
  std::optional<std::uint64_t> seed;
  train->add_option("--config", config, "key = value config file")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "overrides the config seed");
  train->add_option("--log", log, "CSV metrics log (overrides log_path)");
  train->add_option("--checkpoint", checkpoint, "checkpoint file (overrides checkpoint_path)");

  auto* eval = app.add_subcommand("eval", "score a checkpoint on a DocRED-format file");
  std::string data, train_data, preds_out;
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "DocRED-format JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("--train-data", train_data, "training split, for Ign F1");
  eval->add_option("--predictions", preds_out, "write predictions as JSON");

  auto* abl = app.add_subcommand("ablate", "train each variant with each seed");
  std::string seeds = "0,1,2,3,4", variants, report_out;
  abl->add_option("--config", config, "key = value config file")->required()->check(CLI::ExistingFile);
  abl->add_option("--seeds", seeds, "comma-separated seeds")->capture_default_str();
  abl->add_option("--variants", variants, "subset of full,wo_unet,bce,similarity (default all)");
  abl->add_option("--out", report_out, "also write the tables here");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the composed model");
  std::uint64_t gc_seed = 0;
  std::size_t entries = 32;
  gc->add_option("--seed", gc_seed)->capture_default_str();
  gc->add_option("--entries", entries, "entries checked per tensor (0 = all)")->capture_default_str();

  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic corpus in DocRED format");
  std::string out, rel_out;
  std::uint64_t gen_seed = 0;
  std::size_t docs = 0;
  gen->add_option("--out", out, "output JSON")->required();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--config", config, "take world settings from this config");
  gen->add_option("--docs", docs, "number of documents (default train_docs + dev_docs)");
  gen->add_option("--rel-info", rel_out, "also write the relation map");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(config, seed, log, checkpoint);
    if (*eval) return cmd_eval(checkpoint, data, train_data, preds_out);
    if (*abl) return cmd_ablate(config, seeds, variants, report_out);
    if (*gc) return cmd_gradcheck(gc_seed, entries);
    if (*gen) return cmd_gen(out, gen_seed, config, docs, rel_out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
