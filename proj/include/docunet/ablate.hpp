#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "docunet/train.hpp"

namespace docunet {

enum class Variant { Full, NoUNet, BCE, Similarity };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoUNet: return "wo_unet";
    case Variant::BCE: return "bce";
    case Variant::Similarity: return "similarity";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (auto v : {Variant::Full, Variant::NoUNet, Variant::BCE, Variant::Similarity})
    if (s == to_string(v)) return v;
  throw ConfigError("unknown variant '" + s + "' (full, wo_unet, bce, similarity)");
}

inline std::vector<Variant> all_variants() {
  return {Variant::Full, Variant::NoUNet, Variant::BCE, Variant::Similarity};
}

/// The base config with one component switched off.
inline TrainConfig apply_variant(TrainConfig cfg, Variant v) {
  switch (v) {
    case Variant::Full: break;
    case Variant::NoUNet: cfg.model.use_unet = false; break;
    case Variant::BCE: cfg.model.loss = LossKind::BCE; break;
    case Variant::Similarity: cfg.model.strategy = PairStrategy::Similarity; break;
  }
  return cfg;
}

struct AblationRun {
  Variant variant = Variant::Full;
  std::uint64_t seed = 0;
  TrainResult result;
  double seconds = 0.0;
};

struct VariantSummary {
  Variant variant = Variant::Full;
  double mean_f1 = 0, sd_f1 = 0;
  double mean_ign_f1 = 0;
  double mean_composed_recall = 0;
  std::vector<BucketReport> buckets;  // scores.f1 holds the mean over seeds
  std::vector<double> bucket_sd;
};

struct AblationReport {
  std::vector<AblationRun> runs;
  std::vector<VariantSummary> summaries;

  const VariantSummary& summary(Variant v) const {
    for (const auto& s : summaries)
      if (s.variant == v) return s;
    throw UsageError(std::string("no summary for variant ") + to_string(v));
  }
  std::vector<const AblationRun*> runs_of(Variant v) const {
    std::vector<const AblationRun*> out;
    for (const auto& r : runs)
      if (r.variant == v) out.push_back(&r);
    return out;
  }
};

namespace detail {

inline std::pair<double, double> mean_sd(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double m = 0;
  for (double x : xs) m += x;
  m /= double(xs.size());
  double v = 0;
  for (double x : xs) v += (x - m) * (x - m);
  return {m, xs.size() > 1 ? std::sqrt(v / double(xs.size() - 1)) : 0.0};
}

}  // namespace detail

inline VariantSummary summarize(Variant v, const std::vector<const AblationRun*>& runs) {
  VariantSummary s;
  s.variant = v;
  std::vector<double> f1, ign, comp;
  for (const auto* r : runs) {
    f1.push_back(r->result.best_dev.overall.f1);
    ign.push_back(r->result.best_dev.ign_f1);
    comp.push_back(r->result.best_dev.composed.recall);
  }
  std::tie(s.mean_f1, s.sd_f1) = detail::mean_sd(f1);
  s.mean_ign_f1 = detail::mean_sd(ign).first;
  s.mean_composed_recall = detail::mean_sd(comp).first;
  if (!runs.empty()) {
    s.buckets = runs.front()->result.best_dev.buckets;
    for (std::size_t b = 0; b < s.buckets.size(); ++b) {
      std::vector<double> xs;
      for (const auto* r : runs) xs.push_back(r->result.best_dev.buckets.at(b).scores.f1);
      auto [m, sd] = detail::mean_sd(xs);
      s.buckets[b].scores.f1 = m;
      s.bucket_sd.push_back(sd);
    }
  }
  return s;
}

/// Trains every variant with every seed on one fixed corpus. `progress`, if
/// set, is called after each run.
inline AblationReport ablate(const TrainConfig& base, const Corpus& corpus,
                             const std::vector<Variant>& variants,
                             const std::vector<std::uint64_t>& seeds,
                             const std::function<void(const AblationRun&)>& progress = {}) {
  AblationReport report;
  for (auto v : variants) {
    for (auto seed : seeds) {
      auto cfg = apply_variant(base, v);
      cfg.seed = seed;
      cfg.log_path.clear();
      cfg.checkpoint_path.clear();
      const auto t0 = std::chrono::steady_clock::now();
      Trainer trainer(cfg, corpus);
      AblationRun run{v, seed, trainer.run()};
      run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (progress) progress(run);
      report.runs.push_back(std::move(run));
    }
    report.summaries.push_back(summarize(v, report.runs_of(v)));
  }
  return report;
}

/// Plain-text tables: one row per variant, then per-bucket F1.
inline std::string format_report(const AblationReport& r) {
  std::ostringstream out;
  char buf[256];
  out << "variant      dev F1 (mean +- sd)   Ign F1   composed recall   per-seed F1\n";
  for (const auto& s : r.summaries) {
    std::snprintf(buf, sizeof buf, "%-12s %7.4f +- %.4f      %7.4f  %8.4f          ", to_string(s.variant),
                  s.mean_f1, s.sd_f1, s.mean_ign_f1, s.mean_composed_recall);
    out << buf;
    for (const auto* run : r.runs_of(s.variant)) {
      std::snprintf(buf, sizeof buf, " %.4f", run->result.best_dev.overall.f1);
      out << buf;
    }
    out << '\n';
  }
  out << "\nF1 by entity count (mean over seeds; docs per bucket in brackets)\n";
  out << "variant     ";
  if (!r.summaries.empty())
    for (const auto& b : r.summaries.front().buckets) {
      std::snprintf(buf, sizeof buf, " %10s", (b.label() + " [" + std::to_string(b.docs) + "]").c_str());
      out << buf;
    }
  out << '\n';
  for (const auto& s : r.summaries) {
    std::snprintf(buf, sizeof buf, "%-12s", to_string(s.variant));
    out << buf;
    for (std::size_t b = 0; b < s.buckets.size(); ++b) {
      if (s.buckets[b].docs == 0) {
        std::snprintf(buf, sizeof buf, " %10s", "-");
      } else {
        std::snprintf(buf, sizeof buf, " %10.4f", s.buckets[b].scores.f1);
      }
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

/// Perturbs one cell of a random input image and counts the output cells,
/// other than the perturbed one, that change. A per-cell network must give 0.
inline std::size_t locality_probe(const PairMixer& mixer, std::size_t n, std::uint64_t seed,
                                  std::size_t row, std::size_t col) {
  NoGradScope no_grad;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  const std::size_t c = mixer.in_channels();
  std::vector<double> v(c * n * n);
  for (auto& x : v) x = dist(rng);
  Tensor base = Tensor::from({c, n, n}, v);
  for (std::size_t ch = 0; ch < c; ++ch) v[(ch * n + row) * n + col] += 1.0;
  Tensor bumped = Tensor::from({c, n, n}, v);
  const auto y0 = mixer.forward(base), y1 = mixer.forward(bumped);
  const auto a = y0.data(), b = y1.data();
  const std::size_t oc = mixer.out_channels();
  std::size_t changed = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == row && j == col) continue;
      for (std::size_t ch = 0; ch < oc; ++ch) {
        const std::size_t k = (ch * n + i) * n + j;
        if (a[k] != b[k]) {
          ++changed;
          break;
        }
      }
    }
  return changed;
}

}  // namespace docunet
