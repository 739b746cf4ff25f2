/**
 * @file metrics.cpp
 * @brief CMM, LM and CENTR over sliding onset-grid windows.
 */

#include "melodylab/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>

namespace melodylab {

namespace {

constexpr int kMinMacroharmony = 5;
constexpr int kMaxMacroharmony = 8;

/// Pitches (grid value - 1) of the onsets inside a window, in time order.
std::vector<int> onsets_in(const OnsetGrid& grid, SpanWindow w) {
  std::vector<int> out;
  for (std::size_t t = w.begin; t < w.end; ++t) {
    if (grid.cells[t] != 0) out.push_back(grid.cells[t] - 1);
  }
  return out;
}

double mean_abs_interval(const std::vector<int>& pitches) {
  double sum = 0.0;
  for (std::size_t k = 1; k < pitches.size(); ++k) sum += std::abs(pitches[k] - pitches[k - 1]);
  return sum / static_cast<double>(pitches.size() - 1);
}

double macroharmony_score(std::size_t distinct) {
  const auto d = static_cast<double>(distinct);
  if (distinct < kMinMacroharmony) return kMinMacroharmony / d;
  if (distinct <= kMaxMacroharmony) return 1.0;
  return d / kMaxMacroharmony;
}

double mean(const std::vector<double>& values) {
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

MetricSummary summarize_one(std::span<const MetricTriple> triples, double MetricTriple::*field) {
  double sum = 0.0;
  for (const auto& t : triples) sum += t.*field;
  const double m = sum / static_cast<double>(triples.size());
  double sq = 0.0;
  for (const auto& t : triples) sq += (t.*field - m) * (t.*field - m);
  return {m, std::sqrt(sq / static_cast<double>(triples.size()))};
}

}  // namespace

void validate(const SpanConfig& cfg) {
  if (cfg.span < 1 || cfg.step < 1 || cfg.step > cfg.span) {
    throw std::invalid_argument("invalid span config: span " + std::to_string(cfg.span) + ", step " +
                                std::to_string(cfg.step));
  }
}

OnsetGrid to_onset_grid(const Melody& melody) {
  if (melody.empty()) throw std::invalid_argument("cannot build an onset grid from an empty melody");
  std::size_t len = 0;
  for (const NoteEvent& n : melody) {
    if (n.duration < 1) throw std::invalid_argument("note duration must be positive");
    len += static_cast<std::size_t>(n.duration);
  }
  OnsetGrid grid;
  grid.cells.assign(len, 0);
  std::size_t t = 0;
  for (const NoteEvent& n : melody) {
    grid.cells[t] = n.pitch + 1;
    t += static_cast<std::size_t>(n.duration);
  }
  return grid;
}

std::size_t span_count(std::size_t song_len, const SpanConfig& cfg) {
  validate(cfg);
  if (song_len == 0) throw std::invalid_argument("song length must be positive");
  const auto n = static_cast<std::size_t>(cfg.span);
  if (song_len <= n) return 1;
  return (song_len - n) / static_cast<std::size_t>(cfg.step) + 1;
}

std::vector<SpanWindow> spans(const OnsetGrid& grid, const SpanConfig& cfg) {
  if (grid.size() == 0) throw std::invalid_argument("empty onset grid");
  const std::size_t count = span_count(grid.size(), cfg);
  std::vector<SpanWindow> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t begin = i * static_cast<std::size_t>(cfg.step);
    const std::size_t end = i + 1 == count ? grid.size() : std::min(grid.size(), begin + cfg.span);
    out.push_back({begin, end});
  }
  return out;
}

double cmm(const OnsetGrid& grid, const SpanConfig& cfg) {
  const std::vector<int> all = onsets_in(grid, {0, grid.size()});
  if (all.size() < 2) throw std::invalid_argument("CMM needs at least two onsets");
  if (cfg.cmm_mode == CmmMode::global) return mean_abs_interval(all);

  std::vector<double> scores;
  for (const SpanWindow& w : spans(grid, cfg)) {
    const std::vector<int> pitches = onsets_in(grid, w);
    if (pitches.size() >= 2) scores.push_back(mean_abs_interval(pitches));
  }
  return scores.empty() ? mean_abs_interval(all) : mean(scores);
}

double lm(const OnsetGrid& grid, const SpanConfig& cfg) {
  std::vector<double> scores;
  for (const SpanWindow& w : spans(grid, cfg)) {
    std::vector<int> pitches = onsets_in(grid, w);
    if (pitches.empty()) continue;
    std::sort(pitches.begin(), pitches.end());
    const auto distinct = static_cast<std::size_t>(std::unique(pitches.begin(), pitches.end()) - pitches.begin());
    scores.push_back(macroharmony_score(distinct));
  }
  if (scores.empty()) throw std::invalid_argument("LM needs at least one onset");
  return mean(scores);
}

double centr(const OnsetGrid& grid, const SpanConfig& cfg) {
  std::vector<double> scores;
  for (const SpanWindow& w : spans(grid, cfg)) {
    const std::vector<int> pitches = onsets_in(grid, w);
    if (pitches.empty()) continue;
    std::map<int, int> counts;
    for (int p : pitches) ++counts[p];
    int modal = 0;
    for (const auto& [pitch, count] : counts) modal = std::max(modal, count);
    scores.push_back(static_cast<double>(modal) / static_cast<double>(pitches.size()));
  }
  if (scores.empty()) throw std::invalid_argument("CENTR needs at least one onset");
  return mean(scores);
}

MetricTriple evaluate(const Melody& melody, const SpanConfig& cfg) {
  if (melody.size() < 2) throw std::invalid_argument("evaluation needs at least two notes");
  validate(cfg);
  const OnsetGrid grid = to_onset_grid(melody);
  return {cmm(grid, cfg), lm(grid, cfg), centr(grid, cfg)};
}

MetricStats summarize(std::span<const MetricTriple> triples) {
  if (triples.empty()) throw std::invalid_argument("no metric triples to summarize");
  MetricStats stats;
  stats.cmm = summarize_one(triples, &MetricTriple::cmm);
  stats.lm = summarize_one(triples, &MetricTriple::lm);
  stats.centr = summarize_one(triples, &MetricTriple::centr);
  stats.count = triples.size();
  return stats;
}

CorpusEvaluation evaluate_corpus(std::span<const Melody> melodies, const SpanConfig& cfg) {
  CorpusEvaluation result;
  std::vector<MetricTriple> scored;
  std::size_t skipped = 0;
  for (const Melody& m : melodies) {
    if (m.size() < 2) {
      result.per_melody.emplace_back();
      ++skipped;
      continue;
    }
    result.per_melody.emplace_back(evaluate(m, cfg));
    scored.push_back(*result.per_melody.back());
  }
  if (scored.empty()) throw std::invalid_argument("no evaluable melodies");
  result.stats = summarize(scored);
  result.stats.skipped = skipped;
  return result;
}

MetricStats corpus_stats(std::span<const Melody> melodies, const SpanConfig& cfg) {
  return evaluate_corpus(melodies, cfg).stats;
}

}  // namespace melodylab
