/**
 * @file midi_io.h
 * @brief Standard MIDI File reading, 16th-note quantization and writing.
 */

#ifndef MELODYLAB_MIDI_IO_H
#define MELODYLAB_MIDI_IO_H

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace melodylab {

/// Grid cells per whole note. A quarter note lasts 4 cells.
constexpr int kCellsPerBar = 16;
/// Longest duration a NoteEvent may carry after cleaning.
constexpr int kMaxDuration = 16;

/// One melodic note: MIDI pitch and duration in 16th-note units.
struct NoteEvent {
  int pitch = 0;
  int duration = 1;

  auto operator<=>(const NoteEvent&) const = default;
};

using Melody = std::vector<NoteEvent>;

/// A note as found in the file, before quantization.
struct RawNote {
  std::int64_t onset_ticks = 0;
  std::int64_t duration_ticks = 1;
  int pitch = 0;
  int track_index = 0;

  auto operator<=>(const RawNote&) const = default;
};

struct ParsedMidi {
  std::vector<RawNote> notes;
  int ticks_per_quarter = 0;
  int format = 0;
  int track_count = 0;
  /// Tracks dropped by a lenient parse, with the reason.
  std::vector<std::string> skipped_tracks;
};

/// Malformed file content. `offset` is the byte position where decoding failed.
class MidiParseError : public std::runtime_error {
 public:
  MidiParseError(const std::string& what, std::size_t offset);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Well-formed but unsupported file (format 2, SMPTE time division).
class UnsupportedMidiError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParseOptions {
  /// Skip a track whose events cannot be decoded instead of failing the file.
  bool skip_bad_tracks = false;
};

/// Decodes every note-on/note-off pair of a format 0 or 1 file. Notes are sorted
/// by onset, ties by descending pitch. Note-on with velocity 0 counts as note-off;
/// repeated note-ons of one pitch are closed first-in first-out.
ParsedMidi parse_midi(std::span<const std::uint8_t> bytes, const ParseOptions& options = {});

/// Notes of the first track that has any, in parse order.
std::vector<RawNote> first_note_track(std::span<const RawNote> notes);

/// Snaps notes to the 16th grid and enforces monophony.
///
/// Onsets and durations round to the nearest 16th (ppq / 4 ticks), durations are at
/// least one cell. Of notes starting together only the highest survives; a note
/// overlapping the next onset is cut there. A gap before the next onset is folded
/// into the preceding note when the onset spacing stays within kMaxDuration cells;
/// larger gaps split the melody and the longest piece (earliest on ties) is kept.
Melody quantize(std::span<const RawNote> raw, int ppq);

/// Format 0 file at 480 PPQ and 120 BPM, notes back to back. Throws
/// std::invalid_argument for an empty melody.
std::vector<std::uint8_t> write_midi(const Melody& melody);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// parse (lenient) + first note track + quantize.
Melody load_melody(const std::filesystem::path& path);

/// Shifts every pitch by `semitones`; throws std::out_of_range if any leaves 0..127.
Melody transpose(const Melody& melody, int semitones);

}  // namespace melodylab

#endif  // MELODYLAB_MIDI_IO_H
