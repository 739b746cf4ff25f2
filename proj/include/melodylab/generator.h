/**
 * @file generator.h
 * @brief Seeded melody sampling, 100-song generation reports, representative-song
 *        selection and model comparison tables.
 */

#ifndef MELODYLAB_GENERATOR_H
#define MELODYLAB_GENERATOR_H

#include <array>
#include <cstddef>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "melodylab/dataset.h"
#include "melodylab/metrics.h"
#include "melodylab/nn.h"

namespace melodylab {

/// D4 half note, E4 quarter, F4 quarter.
Melody default_seed_melody();

struct SamplerConfig {
  Melody seed_melody = default_seed_melody();
  int notes_to_generate = 30;
  /// At or below kArgmaxTemperature sampling becomes greedy.
  double temperature = 1.0;
  std::uint64_t rng_seed = 0;
  int songs = 100;
};

constexpr double kArgmaxTemperature = 0.01;

/// A trained network together with the vocabulary and encoding it was trained on.
struct MelodyModel {
  const ModelParams<float>& params;
  const TokenVocab& vocab;
  DatasetVariant variant;
};

/// Seed tokens for the model's encoding; throws std::out_of_range naming the
/// first seed token missing from the vocabulary.
std::vector<std::uint32_t> encode_seed(const MelodyModel& model, const Melody& seed);

/// Index drawn from softmax(logits / temperature) with a uniform variate u in
/// [0, 1); argmax (lowest index on ties) when temperature <= kArgmaxTemperature.
std::size_t draw_token(std::span<const float> logits, double temperature, double u);

/// Feeds the seed through the network, then draws `notes_to_generate` tokens,
/// each fed back as the next input. Interval models are decoded from the seed's
/// first pitch. `stream` selects the random stream derived from cfg.rng_seed.
Melody sample(const MelodyModel& model, const SamplerConfig& cfg, std::uint64_t stream = 0);

/// cfg.songs melodies; song i uses stream i.
std::vector<Melody> generate_corpus(const MelodyModel& model, const SamplerConfig& cfg);

/// Index of the triple nearest (plain Euclidean) to the mean triple; lowest index on ties.
std::size_t representative(std::span<const MetricTriple> triples);

struct GenerationReport {
  std::string name;
  std::string variant;
  std::string cell_type;
  std::vector<MetricTriple> per_song;
  MetricStats stats;
  std::size_t representative_index = 0;
  MetricTriple representative_triple;
  SamplerConfig sampler;
  SpanConfig spans;
};

/// Scores generated melodies and fills stats and the representative. Throws if
/// any melody cannot be scored.
GenerationReport make_report(std::string name, std::string variant, std::string cell_type,
                             std::span<const Melody> melodies, const SamplerConfig& sampler,
                             const SpanConfig& spans = {});

nlohmann::json to_json(const MetricTriple& t);
nlohmann::json to_json(const MetricStats& s);
nlohmann::json to_json(const GenerationReport& report);
GenerationReport report_from_json(const nlohmann::json& j);

struct ComparisonRow {
  std::string name;
  MetricStats stats;
  /// Best CMM (closest to 1), best LM (closest to 1), best CENTR (highest).
  std::array<bool, 3> best{};
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;
  std::string text;
  nlohmann::json json;
};

/// One row per report, best mean per metric flagged (all rows on exact ties).
ComparisonTable compare_models(std::span<const GenerationReport> reports);

/// Reference values for the original scraped corpus, for side-by-side display only.
struct BaselineReference {
  MetricSummary cmm{2.23, 0.98};
  MetricSummary lm{2.05, 1.18};
  MetricSummary centr{0.27, 0.14};
};

std::string format_stats_row(const std::string& name, const MetricStats& stats);

}  // namespace melodylab

#endif  // MELODYLAB_GENERATOR_H
