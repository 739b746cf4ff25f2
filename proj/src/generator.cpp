/**
 * @file generator.cpp
 * @brief Two-phase sampling, report building and model comparison.
 */

#include "melodylab/generator.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>

namespace melodylab {

namespace {

std::mt19937_64 song_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::vector<Token> tokens_for(const MelodyModel& model, const Melody& melody) {
  return model.variant == DatasetVariant::interval ? interval_tokens(melody) : absolute_tokens(melody);
}

std::string format_summary(const MetricSummary& s) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.2f \xC2\xB1 %.2f", s.mean, s.std);
  return buf;
}

/// Left-justifies to `width` terminal columns (UTF-8 continuation bytes take none).
std::string pad(std::string s, std::size_t width) {
  const auto columns = static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
  if (columns < width) s.append(width - columns, ' ');
  return s;
}

constexpr std::size_t kNameWidth = 17;
constexpr std::size_t kCellWidth = 19;

MetricSummary summary_from_json(const nlohmann::json& j) { return {j.at("mean").get<double>(), j.at("std").get<double>()}; }

}  // namespace

Melody default_seed_melody() { return {{62, 8}, {64, 4}, {65, 4}}; }

std::vector<std::uint32_t> encode_seed(const MelodyModel& model, const Melody& seed) {
  std::vector<std::uint32_t> out;
  for (const Token& t : tokens_for(model, seed)) {
    const auto idx = model.vocab.find(t);
    if (!idx) throw std::out_of_range("seed token " + to_string(t) + " is not in the model vocabulary");
    out.push_back(*idx);
  }
  return out;
}

std::size_t draw_token(std::span<const float> logits, double temperature, double u) {
  if (logits.empty()) throw std::invalid_argument("empty logits");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (temperature <= kArgmaxTemperature) {
    return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> weights(logits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    weights[k] = std::exp((static_cast<double>(logits[k]) - peak) / temperature);
    total += weights[k];
  }
  const double target = u * total;
  double cumulative = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    cumulative += weights[k];
    if (target < cumulative) return k;
  }
  // Rounding can leave target == total; fall back to the last non-zero weight.
  for (std::size_t k = weights.size(); k-- > 0;) {
    if (weights[k] > 0.0) return k;
  }
  return weights.size() - 1;
}

Melody sample(const MelodyModel& model, const SamplerConfig& cfg, std::uint64_t stream) {
  if (cfg.seed_melody.empty()) throw std::invalid_argument("seed melody is empty");
  if (!(cfg.temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (cfg.notes_to_generate < 0) throw std::invalid_argument("notes_to_generate must be non-negative");
  if (model.vocab.size() != static_cast<std::size_t>(model.params.config.vocab_size)) {
    throw std::invalid_argument("vocabulary size " + std::to_string(model.vocab.size()) +
                                " does not match model output size " +
                                std::to_string(model.params.config.vocab_size));
  }
  const std::vector<std::uint32_t> seed = encode_seed(model, cfg.seed_melody);
  std::vector<Token> tokens = tokens_for(model, cfg.seed_melody);
  if (cfg.notes_to_generate == 0) return cfg.seed_melody;

  std::mt19937_64 rng = song_stream(cfg.rng_seed, stream);
  ModelState<float> state = ModelState<float>::zeros(model.params.config, 1);
  Matrix<float> logits;
  for (std::uint32_t idx : seed) {
    const std::uint32_t one[] = {idx};
    logits = infer_step(model.params, state, one);
  }
  for (int k = 0; k < cfg.notes_to_generate; ++k) {
    const double u = unit_uniform(rng);
    const auto next = static_cast<std::uint32_t>(
        draw_token({logits.data(), static_cast<std::size_t>(logits.rows())}, cfg.temperature, u));
    tokens.push_back(model.vocab.token_of(next));
    if (k + 1 < cfg.notes_to_generate) {
      const std::uint32_t one[] = {next};
      logits = infer_step(model.params, state, one);
    }
  }

  if (model.variant == DatasetVariant::interval) {
    return decode_intervals(tokens, cfg.seed_melody.front().pitch).melody;
  }
  Melody out;
  out.reserve(tokens.size());
  for (const Token& t : tokens) out.push_back({t.value, t.duration});
  return out;
}

std::vector<Melody> generate_corpus(const MelodyModel& model, const SamplerConfig& cfg) {
  if (cfg.songs < 1) throw std::invalid_argument("song count must be positive");
  std::vector<Melody> out;
  out.reserve(static_cast<std::size_t>(cfg.songs));
  for (int i = 0; i < cfg.songs; ++i) out.push_back(sample(model, cfg, static_cast<std::uint64_t>(i)));
  return out;
}

std::size_t representative(std::span<const MetricTriple> triples) {
  if (triples.empty()) throw std::invalid_argument("no triples to choose a representative from");
  const MetricStats stats = summarize(triples);
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < triples.size(); ++k) {
    const double dc = triples[k].cmm - stats.cmm.mean;
    const double dl = triples[k].lm - stats.lm.mean;
    const double dz = triples[k].centr - stats.centr.mean;
    const double dist = dc * dc + dl * dl + dz * dz;  // squared: same order, no rounding from sqrt
    if (dist < best_dist) {
      best = k;
      best_dist = dist;
    }
  }
  return best;
}

GenerationReport make_report(std::string name, std::string variant, std::string cell_type,
                             std::span<const Melody> melodies, const SamplerConfig& sampler,
                             const SpanConfig& spans) {
  GenerationReport report;
  report.name = std::move(name);
  report.variant = std::move(variant);
  report.cell_type = std::move(cell_type);
  report.sampler = sampler;
  report.spans = spans;
  for (const Melody& m : melodies) report.per_song.push_back(evaluate(m, spans));
  report.stats = summarize(report.per_song);
  report.representative_index = representative(report.per_song);
  report.representative_triple = report.per_song[report.representative_index];
  return report;
}

nlohmann::json to_json(const MetricTriple& t) { return {{"cmm", t.cmm}, {"lm", t.lm}, {"centr", t.centr}}; }

nlohmann::json to_json(const MetricStats& s) {
  auto one = [](const MetricSummary& m) { return nlohmann::json{{"mean", m.mean}, {"std", m.std}}; };
  return {{"cmm", one(s.cmm)}, {"lm", one(s.lm)}, {"centr", one(s.centr)}, {"count", s.count}, {"skipped", s.skipped}};
}

nlohmann::json to_json(const GenerationReport& report) {
  nlohmann::json per_song = nlohmann::json::array();
  for (const auto& t : report.per_song) per_song.push_back(to_json(t));
  nlohmann::json seed = nlohmann::json::array();
  for (const auto& n : report.sampler.seed_melody) seed.push_back({n.pitch, n.duration});
  return {
      {"name", report.name},
      {"variant", report.variant},
      {"cell_type", report.cell_type},
      {"per_melody", per_song},
      {"stats", to_json(report.stats)},
      {"representative", {{"index", report.representative_index}, {"triple", to_json(report.representative_triple)}}},
      {"sampler",
       {{"seed_melody", seed},
        {"notes_to_generate", report.sampler.notes_to_generate},
        {"temperature", report.sampler.temperature},
        {"rng_seed", report.sampler.rng_seed},
        {"songs", report.sampler.songs}}},
      {"config", {{"n", report.spans.span}, {"m", report.spans.step},
                  {"cmm_mode", report.spans.cmm_mode == CmmMode::global ? "global" : "per_span"}}},
  };
}

GenerationReport report_from_json(const nlohmann::json& j) {
  GenerationReport r;
  r.name = j.at("name").get<std::string>();
  r.variant = j.value("variant", "");
  r.cell_type = j.value("cell_type", "");
  for (const auto& t : j.at("per_melody")) {
    r.per_song.push_back({t.at("cmm").get<double>(), t.at("lm").get<double>(), t.at("centr").get<double>()});
  }
  const auto& stats = j.at("stats");
  r.stats.cmm = summary_from_json(stats.at("cmm"));
  r.stats.lm = summary_from_json(stats.at("lm"));
  r.stats.centr = summary_from_json(stats.at("centr"));
  r.stats.count = stats.value("count", r.per_song.size());
  r.stats.skipped = stats.value("skipped", std::size_t{0});
  const auto& rep = j.at("representative");
  r.representative_index = rep.at("index").get<std::size_t>();
  const auto& rt = rep.at("triple");
  r.representative_triple = {rt.at("cmm").get<double>(), rt.at("lm").get<double>(), rt.at("centr").get<double>()};
  if (j.contains("sampler")) {
    const auto& s = j.at("sampler");
    r.sampler.seed_melody.clear();
    for (const auto& n : s.at("seed_melody")) r.sampler.seed_melody.push_back({n.at(0).get<int>(), n.at(1).get<int>()});
    r.sampler.notes_to_generate = s.at("notes_to_generate").get<int>();
    r.sampler.temperature = s.at("temperature").get<double>();
    r.sampler.rng_seed = s.at("rng_seed").get<std::uint64_t>();
    r.sampler.songs = s.at("songs").get<int>();
  }
  if (j.contains("config")) {
    r.spans.span = j.at("config").at("n").get<int>();
    r.spans.step = j.at("config").at("m").get<int>();
    r.spans.cmm_mode = j.at("config").value("cmm_mode", "per_span") == "global" ? CmmMode::global : CmmMode::per_span;
  }
  return r;
}

std::string format_stats_row(const std::string& name, const MetricStats& stats) {
  return pad(name, kNameWidth) + pad(format_summary(stats.cmm), kCellWidth) + pad(format_summary(stats.lm), kCellWidth) +
         format_summary(stats.centr);
}

ComparisonTable compare_models(std::span<const GenerationReport> reports) {
  if (reports.empty()) throw std::invalid_argument("no reports to compare");
  ComparisonTable table;
  double best_cmm = std::numeric_limits<double>::infinity();
  double best_lm = std::numeric_limits<double>::infinity();
  double best_centr = -std::numeric_limits<double>::infinity();
  for (const auto& r : reports) {
    best_cmm = std::min(best_cmm, std::abs(r.stats.cmm.mean - 1.0));
    best_lm = std::min(best_lm, std::abs(r.stats.lm.mean - 1.0));
    best_centr = std::max(best_centr, r.stats.centr.mean);
  }
  for (const auto& r : reports) {
    ComparisonRow row{r.name, r.stats, {}};
    row.best[0] = std::abs(r.stats.cmm.mean - 1.0) == best_cmm;
    row.best[1] = std::abs(r.stats.lm.mean - 1.0) == best_lm;
    row.best[2] = r.stats.centr.mean == best_centr;
    table.rows.push_back(row);
  }

  std::ostringstream text;
  text << pad("model", kNameWidth) << pad("CMM", kCellWidth) << pad("LM", kCellWidth) << "CENTR\n";
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : table.rows) {
    const auto cell = [&](const MetricSummary& s, bool best) { return format_summary(s) + (best ? " *" : ""); };
    text << pad(row.name, kNameWidth) << pad(cell(row.stats.cmm, row.best[0]), kCellWidth)
         << pad(cell(row.stats.lm, row.best[1]), kCellWidth) << cell(row.stats.centr, row.best[2]) << '\n';
    rows.push_back({{"name", row.name},
                    {"stats", to_json(row.stats)},
                    {"best", {{"cmm", row.best[0]}, {"lm", row.best[1]}, {"centr", row.best[2]}}}});
  }
  text << "* best mean: CMM and LM closest to 1, CENTR highest\n";
  table.text = text.str();
  table.json = {{"rows", rows}};
  return table;
}

}  // namespace melodylab
