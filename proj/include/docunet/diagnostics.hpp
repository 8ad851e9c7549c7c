#pragma once

#include <random>
#include <string>
#include <vector>

#include "docunet/gradcheck.hpp"
#include "docunet/model.hpp"
#include "docunet/synthetic.hpp"

namespace docunet {

/// Adds Gaussian noise to every parameter. Zero-initialized biases otherwise
/// leave relu inputs on padded cells exactly at the kink, where central
/// differences do not estimate the one-sided derivative autodiff returns.
inline void jitter_parameters(ParamStore& store, std::mt19937_64& rng, double scale = 0.1) {
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& p : store.all())
    for (auto& v : p.value.mutable_data()) v += dist(rng);
}

struct ModelGradCheckOptions {
  std::size_t embed_dim = 16;
  std::size_t num_layers = 2;
  std::size_t matrix_size = 8;
  UNetConfig unet{};
  PairStrategy strategy = PairStrategy::Context;
  bool use_unet = true;
  LossKind loss = LossKind::Balanced;
  std::size_t window_length = 0;  // 0 keeps the encoder default; small values force several windows
  std::size_t entries_per_tensor = 6;
  std::uint64_t seed = 0;
};

/// Finite-difference check of the whole pipeline, encoder to loss, on a
/// small synthetic document.
inline GradCheckResult model_gradcheck(const ModelGradCheckOptions& o = {}) {
  SyntheticWorldConfig w;
  w.num_docs = 1;
  w.min_countries = w.max_countries = 2;
  w.min_regions = w.max_regions = 2;
  w.min_cities = w.max_cities = 3;
  w.seed = o.seed;
  const auto docs = generate_synthetic(w);
  const auto vocab = Vocabulary::from_documents(docs);

  ModelConfig mc;
  mc.encoder.vocab_size = vocab.size();
  mc.encoder.embed_dim = o.embed_dim;
  mc.encoder.num_layers = o.num_layers;
  mc.encoder.num_heads = 2;
  mc.encoder.feedforward_dim = 2 * o.embed_dim;
  if (o.window_length) {
    mc.encoder.window_length = o.window_length;
    mc.encoder.window_stride = std::max<std::size_t>(1, o.window_length / 2);
  }
  mc.matrix_size = o.matrix_size;
  mc.unet = o.unet;
  mc.strategy = o.strategy;
  mc.use_unet = o.use_unet;
  mc.loss = o.loss;
  mc.head_hidden = o.embed_dim;
  mc.num_relations = synth::relations().size();
  DocuNet model(mc, o.seed);
  std::mt19937_64 rng(o.seed + 1);
  jitter_parameters(model.params(), rng);

  const auto doc = prepare(docs[0], vocab, mc.num_relations);
  GradCheckOptions gc;
  gc.max_entries_per_tensor = o.entries_per_tensor;
  gc.seed = unsigned(o.seed);
  return check_gradients([&] { return model.loss({&doc}); }, model.params().tensors(),
                         model.params().names(), gc);
}

}  // namespace docunet
