/**
 * @file metrics.h
 * @brief Span-based tonality metrics on a 16th-note onset grid.
 *
 * A melody is laid out on a grid of 16 cells per bar holding pitch + 1 at each
 * onset and 0 elsewhere. Windows of `span` cells advance by `step` cells; the
 * number of windows is 1 for songs no longer than a span and
 * floor((len - span) / step) + 1 otherwise. The last window runs to the end of
 * the grid so that every cell belongs to some window.
 *
 * Three scores are averaged over the windows:
 *  - CMM: mean absolute semitone interval between consecutive onsets.
 *  - LM: 5/d for d < 5 distinct pitches, 1 for 5..8, d/8 above 8.
 *  - CENTR: share of the window's onsets taken by its most frequent pitch.
 */

#ifndef MELODYLAB_METRICS_H
#define MELODYLAB_METRICS_H

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "melodylab/midi_io.h"

namespace melodylab {

struct OnsetGrid {
  std::vector<int> cells;

  std::size_t size() const { return cells.size(); }
};

enum class CmmMode { per_span, global };

struct SpanConfig {
  int span = 32;
  int step = 4;
  CmmMode cmm_mode = CmmMode::per_span;
};

void validate(const SpanConfig& cfg);

struct MetricTriple {
  double cmm = 0.0;
  double lm = 0.0;
  double centr = 0.0;

  bool operator==(const MetricTriple&) const = default;
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;
};

struct MetricStats {
  MetricSummary cmm;
  MetricSummary lm;
  MetricSummary centr;
  std::size_t count = 0;
  std::size_t skipped = 0;
};

/// Half-open cell range of one window.
struct SpanWindow {
  std::size_t begin = 0;
  std::size_t end = 0;
};

OnsetGrid to_onset_grid(const Melody& melody);

std::size_t span_count(std::size_t song_len, const SpanConfig& cfg);
std::vector<SpanWindow> spans(const OnsetGrid& grid, const SpanConfig& cfg);

double cmm(const OnsetGrid& grid, const SpanConfig& cfg);
double lm(const OnsetGrid& grid, const SpanConfig& cfg);
double centr(const OnsetGrid& grid, const SpanConfig& cfg);

/// Requires at least two notes.
MetricTriple evaluate(const Melody& melody, const SpanConfig& cfg = {});

/// Population mean / std over a list of triples, in order. Throws on empty input.
MetricStats summarize(std::span<const MetricTriple> triples);

struct CorpusEvaluation {
  /// One entry per input melody; nullopt where the melody could not be scored.
  std::vector<std::optional<MetricTriple>> per_melody;
  MetricStats stats;
};

/// Scores each melody, skipping (and counting) the ones with fewer than two notes.
/// Throws if none can be scored.
CorpusEvaluation evaluate_corpus(std::span<const Melody> melodies, const SpanConfig& cfg = {});
MetricStats corpus_stats(std::span<const Melody> melodies, const SpanConfig& cfg = {});

}  // namespace melodylab

#endif  // MELODYLAB_METRICS_H
