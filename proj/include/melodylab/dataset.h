/**
 * @file dataset.h
 * @brief Corpus cleaning and the control / interval / DB12 training datasets.
 */

#ifndef MELODYLAB_DATASET_H
#define MELODYLAB_DATASET_H

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "melodylab/midi_io.h"

namespace melodylab {

/// Fewest notes a melody needs to survive cleaning.
constexpr std::size_t kMinSongNotes = 12;

struct Corpus {
  std::vector<Melody> melodies;
  std::vector<std::string> names;
};

/// Reads every *.mid / *.midi file of a directory, sorted by file name.
/// Files that fail to parse are skipped with a warning.
Corpus load_corpus(const std::filesystem::path& dir);

/// Keeps melodies with at least kMinSongNotes notes and no duration above kMaxDuration.
Corpus clean(const Corpus& corpus);

enum class TokenKind : std::uint8_t { absolute = 0, interval = 1 };

struct Token {
  TokenKind kind = TokenKind::absolute;
  int value = 0;  ///< pitch for absolute tokens, semitone delta for interval tokens
  int duration = 1;

  auto operator<=>(const Token&) const = default;
};

std::string to_string(const Token& token);

/// Token <-> index bijection, indices assigned in ascending (kind, value, duration) order.
class TokenVocab {
 public:
  TokenVocab() = default;
  explicit TokenVocab(std::span<const Token> tokens);

  std::size_t size() const { return tokens_.size(); }
  const Token& token_of(std::size_t index) const { return tokens_.at(index); }
  std::optional<std::uint32_t> find(const Token& token) const;
  /// Throws std::out_of_range naming the token when absent.
  std::uint32_t index_of(const Token& token) const;
  const std::vector<Token>& tokens() const { return tokens_; }

  bool operator==(const TokenVocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<Token> tokens_;
  std::map<Token, std::uint32_t> index_;
};

enum class DatasetVariant : std::uint8_t { control = 0, interval = 1, db12 = 2 };

std::string_view to_string(DatasetVariant variant);
DatasetVariant parse_variant(std::string_view name);

struct EncodedDataset {
  DatasetVariant variant = DatasetVariant::control;
  std::vector<std::uint32_t> x;
  std::vector<std::uint32_t> y;
  TokenVocab vocab;
  /// Offset in x where each song starts; first entry is 0.
  std::vector<std::size_t> song_boundaries;

  std::size_t song_count() const { return song_boundaries.size(); }
  bool operator==(const EncodedDataset&) const = default;
};

/// Y[i] = X[i + 1], last element wrapping to X[0].
std::vector<std::uint32_t> shift_targets(std::span<const std::uint32_t> x);

std::vector<Token> absolute_tokens(const Melody& melody);
/// (0, d1) followed by (p[k] - p[k-1], d[k]).
std::vector<Token> interval_tokens(const Melody& melody);

struct DecodedIntervals {
  Melody melody;
  /// Notes whose running pitch left 0..127 and were clamped.
  int clamped = 0;
};

/// Rebuilds absolute pitches from interval tokens anchored at `start_pitch`. The
/// first token's delta is ignored; the running pitch is clamped to 0..127.
DecodedIntervals decode_intervals(std::span<const Token> tokens, int start_pitch);

/// Builds X, Y and vocab from per-song token lists, in order.
EncodedDataset encode_songs(DatasetVariant variant, const std::vector<std::vector<Token>>& songs);

EncodedDataset build_control(const Corpus& corpus);
/// Twelve upward transpositions (+0..+11) per song; out-of-range copies dropped.
EncodedDataset build_db12(const Corpus& corpus);
EncodedDataset build_intervals(const Corpus& corpus);
EncodedDataset build_dataset(DatasetVariant variant, const Corpus& corpus);

/// Song boundary nearest to (1 - val_fraction) * |X|, excluding 0. Ties go to the
/// earlier boundary.
std::size_t split_boundary(const EncodedDataset& ds, double val_fraction);

/// Splits at split_boundary; both halves keep the full vocabulary and re-derive Y.
std::pair<EncodedDataset, EncodedDataset> split_train_val(const EncodedDataset& ds, double val_fraction);

class DatasetFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr std::uint16_t kDatasetVersion = 1;

std::vector<std::uint8_t> serialize_dataset(const EncodedDataset& ds);
EncodedDataset deserialize_dataset(std::span<const std::uint8_t> bytes);

/// Writes the binary file and a `.json` mirror next to it.
void save_dataset(const EncodedDataset& ds, const std::filesystem::path& path);
EncodedDataset load_dataset(const std::filesystem::path& path);

}  // namespace melodylab

#endif  // MELODYLAB_DATASET_H
