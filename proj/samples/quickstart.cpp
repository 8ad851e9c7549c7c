// Trains a small model on a generated geography corpus and prints what it
// predicts for one held-out document.
//
//   ./quickstart [epochs]

#include <cstdio>
#include <string>

#include "docunet/train.hpp"

using namespace docunet;

int main(int argc, char** argv) {
  TrainConfig cfg;
  cfg.train_docs = 40;
  cfg.dev_docs = 10;
  cfg.world.min_countries = cfg.world.max_countries = 2;
  cfg.world.min_regions = cfg.world.max_regions = 3;
  cfg.world.min_cities = 3, cfg.world.max_cities = 5;
  cfg.model.encoder.embed_dim = 16;
  cfg.model.encoder.feedforward_dim = 32;
  cfg.model.head_hidden = 16;
  cfg.patience = 40;
  cfg.epochs = argc > 1 ? std::stoul(argv[1]) : 40;
  cfg.lr_encoder = cfg.lr_head = 1e-3;

  const auto corpus = load_corpus(cfg);
  Trainer trainer(cfg, corpus);
  std::printf("%zu train / %zu dev documents, %zu relations, %zu parameters\n", corpus.train.size(),
              corpus.dev.size(), corpus.relations.size(), trainer.model().params().count());

  const auto result = trainer.run();
  for (const auto& row : result.log) std::printf("%s\n", row.csv().c_str());
  std::printf("best dev F1 %.3f at epoch %zu\n", result.best_dev.overall.f1, result.best_epoch);

  const auto& doc = corpus.dev.front();
  std::printf("\n");
  for (const auto& sent : doc.sentences) {
    for (const auto& tok : sent) std::printf("%s ", tok.c_str());
    std::printf("\n");
  }
  const auto prepared = prepare(doc, trainer.vocabulary(), corpus.relations.size());
  for (const auto& p : trainer.model().predict(prepared, 0)) {
    bool gold = false;
    for (const auto& l : doc.labels) gold = gold || (l.head == p.head && l.tail == p.tail && l.relation == p.relation);
    std::printf("  %-12s %-10s %-12s %s\n", doc.entities[p.head].mentions[0].name.c_str(),
                corpus.relations.name(p.relation).c_str(), doc.entities[p.tail].mentions[0].name.c_str(),
                gold ? "" : "(wrong)");
  }
}
