/**
 * @file dataset.cpp
 * @brief Cleaning, tokenization, dataset variants and the MMTD file format.
 */

#include "melodylab/dataset.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

#include "melodylab/binary_io.h"

namespace melodylab {

namespace {

constexpr char kDatasetMagic[] = "MMTD";
constexpr int kTranspositions = 12;

void require_nonempty(const Corpus& corpus, std::string_view what) {
  if (corpus.melodies.empty()) {
    throw std::invalid_argument("cannot build " + std::string(what) + " dataset from an empty corpus");
  }
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".mid" || ext == ".midi")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  Corpus corpus;
  for (const auto& path : files) {
    try {
      Melody melody = load_melody(path);
      corpus.melodies.push_back(std::move(melody));
      corpus.names.push_back(path.filename().string());
    } catch (const std::exception& e) {
      spdlog::warn("skipping {}: {}", path.filename().string(), e.what());
    }
  }
  return corpus;
}

Corpus clean(const Corpus& corpus) {
  Corpus out;
  for (std::size_t i = 0; i < corpus.melodies.size(); ++i) {
    const Melody& m = corpus.melodies[i];
    const bool durations_ok =
        std::all_of(m.begin(), m.end(), [](const NoteEvent& n) { return n.duration <= kMaxDuration; });
    if (m.size() >= kMinSongNotes && durations_ok) {
      out.melodies.push_back(m);
      out.names.push_back(i < corpus.names.size() ? corpus.names[i] : std::to_string(i));
    }
  }
  return out;
}

std::string to_string(const Token& token) {
  return std::string(token.kind == TokenKind::absolute ? "(" : "(d") + std::to_string(token.value) + "," +
         std::to_string(token.duration) + ")";
}

TokenVocab::TokenVocab(std::span<const Token> tokens) : tokens_(tokens.begin(), tokens.end()) {
  std::sort(tokens_.begin(), tokens_.end());
  tokens_.erase(std::unique(tokens_.begin(), tokens_.end()), tokens_.end());
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<std::uint32_t>(i));
}

std::optional<std::uint32_t> TokenVocab::find(const Token& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::uint32_t TokenVocab::index_of(const Token& token) const {
  if (auto idx = find(token)) return *idx;
  throw std::out_of_range("token " + to_string(token) + " is not in the vocabulary");
}

std::string_view to_string(DatasetVariant variant) {
  switch (variant) {
    case DatasetVariant::control:
      return "control";
    case DatasetVariant::interval:
      return "interval";
    case DatasetVariant::db12:
      return "db12";
  }
  return "unknown";
}

DatasetVariant parse_variant(std::string_view name) {
  if (name == "control") return DatasetVariant::control;
  if (name == "interval") return DatasetVariant::interval;
  if (name == "db12") return DatasetVariant::db12;
  throw std::invalid_argument("unknown dataset variant: " + std::string(name));
}

std::vector<std::uint32_t> shift_targets(std::span<const std::uint32_t> x) {
  std::vector<std::uint32_t> y(x.size());
  if (x.empty()) return y;
  std::copy(x.begin() + 1, x.end(), y.begin());
  y.back() = x.front();
  return y;
}

std::vector<Token> absolute_tokens(const Melody& melody) {
  std::vector<Token> out;
  out.reserve(melody.size());
  for (const NoteEvent& n : melody) out.push_back({TokenKind::absolute, n.pitch, n.duration});
  return out;
}

std::vector<Token> interval_tokens(const Melody& melody) {
  std::vector<Token> out;
  out.reserve(melody.size());
  for (std::size_t k = 0; k < melody.size(); ++k) {
    const int delta = k == 0 ? 0 : melody[k].pitch - melody[k - 1].pitch;
    out.push_back({TokenKind::interval, delta, melody[k].duration});
  }
  return out;
}

DecodedIntervals decode_intervals(std::span<const Token> tokens, int start_pitch) {
  DecodedIntervals out;
  out.melody.reserve(tokens.size());
  int pitch = start_pitch;
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    if (k > 0) pitch += tokens[k].value;
    if (pitch < 0 || pitch > 127) {
      pitch = std::clamp(pitch, 0, 127);
      ++out.clamped;
    }
    out.melody.push_back({pitch, tokens[k].duration});
  }
  if (out.clamped > 0) spdlog::warn("interval decode clamped {} notes to the MIDI range", out.clamped);
  return out;
}

EncodedDataset encode_songs(DatasetVariant variant, const std::vector<std::vector<Token>>& songs) {
  if (songs.empty()) throw std::invalid_argument("no songs to encode");
  std::vector<Token> all;
  for (const auto& song : songs) all.insert(all.end(), song.begin(), song.end());

  EncodedDataset ds;
  ds.variant = variant;
  ds.vocab = TokenVocab(all);
  ds.x.reserve(all.size());
  for (const auto& song : songs) {
    ds.song_boundaries.push_back(ds.x.size());
    for (const Token& t : song) ds.x.push_back(ds.vocab.index_of(t));
  }
  ds.y = shift_targets(ds.x);
  return ds;
}

EncodedDataset build_control(const Corpus& corpus) {
  require_nonempty(corpus, "control");
  std::vector<std::vector<Token>> songs;
  for (const Melody& m : corpus.melodies) songs.push_back(absolute_tokens(m));
  return encode_songs(DatasetVariant::control, songs);
}

EncodedDataset build_db12(const Corpus& corpus) {
  require_nonempty(corpus, "db12");
  std::vector<std::vector<Token>> songs;
  std::size_t discarded = 0;
  for (std::size_t i = 0; i < corpus.melodies.size(); ++i) {
    const Melody& m = corpus.melodies[i];
    for (int shift = 0; shift < kTranspositions; ++shift) {
      try {
        songs.push_back(absolute_tokens(transpose(m, shift)));
      } catch (const std::out_of_range&) {
        ++discarded;
        spdlog::info("db12: dropped +{} copy of {}", shift, i < corpus.names.size() ? corpus.names[i] : "song");
      }
    }
  }
  if (discarded > 0) spdlog::warn("db12: {} transposed copies exceeded MIDI range and were dropped", discarded);
  return encode_songs(DatasetVariant::db12, songs);
}

EncodedDataset build_intervals(const Corpus& corpus) {
  require_nonempty(corpus, "interval");
  std::vector<std::vector<Token>> songs;
  for (const Melody& m : corpus.melodies) songs.push_back(interval_tokens(m));
  return encode_songs(DatasetVariant::interval, songs);
}

EncodedDataset build_dataset(DatasetVariant variant, const Corpus& corpus) {
  switch (variant) {
    case DatasetVariant::control:
      return build_control(corpus);
    case DatasetVariant::interval:
      return build_intervals(corpus);
    case DatasetVariant::db12:
      return build_db12(corpus);
  }
  throw std::invalid_argument("unknown dataset variant");
}

std::size_t split_boundary(const EncodedDataset& ds, double val_fraction) {
  if (!(val_fraction > 0.0 && val_fraction < 0.5)) {
    throw std::invalid_argument("val_fraction must lie in (0, 0.5), got " + std::to_string(val_fraction));
  }
  if (ds.song_boundaries.size() < 2) throw std::invalid_argument("need at least 2 songs to split");
  const double target = (1.0 - val_fraction) * static_cast<double>(ds.x.size());
  std::size_t best = ds.song_boundaries[1];
  double best_dist = std::abs(static_cast<double>(best) - target);
  for (std::size_t k = 2; k < ds.song_boundaries.size(); ++k) {
    const double dist = std::abs(static_cast<double>(ds.song_boundaries[k]) - target);
    if (dist < best_dist) {
      best = ds.song_boundaries[k];
      best_dist = dist;
    }
  }
  return best;
}

std::pair<EncodedDataset, EncodedDataset> split_train_val(const EncodedDataset& ds, double val_fraction) {
  const std::size_t cut = split_boundary(ds, val_fraction);
  EncodedDataset train, val;
  train.variant = val.variant = ds.variant;
  train.vocab = val.vocab = ds.vocab;
  train.x.assign(ds.x.begin(), ds.x.begin() + static_cast<std::ptrdiff_t>(cut));
  val.x.assign(ds.x.begin() + static_cast<std::ptrdiff_t>(cut), ds.x.end());
  for (std::size_t b : ds.song_boundaries) {
    if (b < cut) {
      train.song_boundaries.push_back(b);
    } else {
      val.song_boundaries.push_back(b - cut);
    }
  }
  train.y = shift_targets(train.x);
  val.y = shift_targets(val.x);
  return {std::move(train), std::move(val)};
}

std::vector<std::uint8_t> serialize_dataset(const EncodedDataset& ds) {
  BinaryWriter w;
  w.raw(std::string_view(kDatasetMagic, 4));
  w.u16(kDatasetVersion);
  w.u8(static_cast<std::uint8_t>(ds.variant));
  w.u32(static_cast<std::uint32_t>(ds.vocab.size()));
  for (const Token& t : ds.vocab.tokens()) {
    w.u8(static_cast<std::uint8_t>(t.kind));
    w.i16(static_cast<std::int16_t>(t.value));
    w.u8(static_cast<std::uint8_t>(t.duration));
  }
  w.u64(ds.x.size());
  for (std::uint32_t idx : ds.x) w.u32(idx);
  w.u64(ds.song_boundaries.size());
  for (std::size_t b : ds.song_boundaries) w.u64(b);
  return w.take();
}

EncodedDataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  BinaryReader r(bytes);
  try {
    const std::string magic = r.raw(4);
    if (magic != std::string_view(kDatasetMagic, 4)) {
      throw DatasetFormatError("bad dataset magic '" + magic + "', expected 'MMTD'");
    }
    const std::uint16_t version = r.u16();
    if (version != kDatasetVersion) {
      throw DatasetFormatError("dataset version " + std::to_string(version) + " is not supported (expected " +
                               std::to_string(kDatasetVersion) + ")");
    }
    EncodedDataset ds;
    const std::uint8_t variant = r.u8();
    if (variant > 2) throw DatasetFormatError("unknown dataset variant code " + std::to_string(variant));
    ds.variant = static_cast<DatasetVariant>(variant);

    const std::uint32_t vocab_size = r.u32();
    if (static_cast<std::uint64_t>(vocab_size) * 4 > r.remaining()) {
      throw DatasetFormatError("vocabulary length " + std::to_string(vocab_size) + " exceeds file size");
    }
    std::vector<Token> tokens;
    tokens.reserve(vocab_size);
    for (std::uint32_t i = 0; i < vocab_size; ++i) {
      const std::uint8_t kind = r.u8();
      if (kind > 1) throw DatasetFormatError("unknown token kind " + std::to_string(kind));
      const int value = r.i16();
      const int duration = r.u8();
      tokens.push_back({static_cast<TokenKind>(kind), value, duration});
    }
    ds.vocab = TokenVocab(tokens);
    if (ds.vocab.tokens() != tokens) throw DatasetFormatError("vocabulary entries are not sorted and unique");

    const std::uint64_t n = r.u64();
    if (n > r.remaining() / 4) throw DatasetFormatError("sequence length " + std::to_string(n) + " exceeds file size");
    ds.x.resize(n);
    for (auto& idx : ds.x) {
      idx = r.u32();
      if (idx >= vocab_size) throw DatasetFormatError("token index " + std::to_string(idx) + " out of vocabulary");
    }
    const std::uint64_t songs = r.u64();
    if (songs > r.remaining() / 8) throw DatasetFormatError("song count " + std::to_string(songs) + " exceeds file size");
    ds.song_boundaries.resize(songs);
    for (std::size_t k = 0; k < songs; ++k) {
      ds.song_boundaries[k] = r.u64();
      const bool ordered = k == 0 ? ds.song_boundaries[k] == 0 : ds.song_boundaries[k] > ds.song_boundaries[k - 1];
      if (!ordered || ds.song_boundaries[k] >= std::max<std::uint64_t>(n, 1)) {
        throw DatasetFormatError("invalid song boundary table");
      }
    }
    if (r.remaining() != 0) throw DatasetFormatError("trailing bytes after dataset");
    ds.y = shift_targets(ds.x);
    return ds;
  } catch (const TruncatedDataError& e) {
    throw DatasetFormatError(std::string("corrupt dataset: ") + e.what());
  }
}

void save_dataset(const EncodedDataset& ds, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_dataset(ds));

  nlohmann::json vocab = nlohmann::json::array();
  for (const Token& t : ds.vocab.tokens()) vocab.push_back({static_cast<int>(t.kind), t.value, t.duration});
  nlohmann::json mirror = {
      {"magic", "MMTD"},
      {"version", kDatasetVersion},
      {"variant", to_string(ds.variant)},
      {"vocab_size", ds.vocab.size()},
      {"vocab", vocab},
      {"x", ds.x},
      {"song_boundaries", ds.song_boundaries},
  };
  auto json_path = path;
  json_path.replace_extension(".json");
  std::ofstream out(json_path);
  if (!out) throw std::runtime_error("cannot write " + json_path.string());
  out << mirror.dump() << '\n';
}

EncodedDataset load_dataset(const std::filesystem::path& path) { return deserialize_dataset(read_file_bytes(path)); }

}  // namespace melodylab
