/**
 * @file midi_io.cpp
 * @brief SMF parsing, quantization to the 16th grid, and SMF writing.
 */

#include "melodylab/midi_io.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iterator>
#include <map>
#include <utility>

namespace melodylab {

MidiParseError::MidiParseError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}

namespace {

constexpr int kWritePpq = 480;
constexpr int kWriteTicksPerCell = kWritePpq / 4;
constexpr std::uint32_t kMicrosPerQuarter120Bpm = 500000;

/// Bounded big-endian reader over one region of the file. Offsets reported in
/// errors are absolute file positions.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::size_t begin, std::size_t end)
      : bytes_(bytes), pos_(begin), end_(end) {}

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ >= end_; }

  std::uint8_t u8() {
    if (pos_ >= end_) throw MidiParseError("truncated data", pos_);
    return bytes_[pos_++];
  }
  std::uint8_t peek() const {
    if (pos_ >= end_) throw MidiParseError("truncated data", pos_);
    return bytes_[pos_];
  }
  std::uint16_t u16() {
    std::uint16_t hi = u8();
    return static_cast<std::uint16_t>((hi << 8) | u8());
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | u8();
    return v;
  }
  std::uint32_t vlq() {
    const std::size_t start = pos_;
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7F);
      if ((b & 0x80) == 0) return v;
    }
    throw MidiParseError("variable-length quantity longer than 4 bytes", start);
  }
  void skip(std::size_t n) {
    if (n > end_ - pos_) throw MidiParseError("truncated data", pos_);
    pos_ += n;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
  std::size_t end_;
};

std::vector<RawNote> parse_track(ByteReader reader, int track_index) {
  std::vector<RawNote> notes;
  std::map<std::pair<int, int>, std::deque<std::int64_t>> open;
  std::int64_t now = 0;
  std::uint8_t running = 0;

  auto close_note = [&](int channel, int pitch) {
    auto it = open.find({channel, pitch});
    if (it == open.end() || it->second.empty()) return;
    const std::int64_t onset = it->second.front();
    it->second.pop_front();
    if (now > onset) notes.push_back({onset, now - onset, pitch, track_index});
  };

  while (!reader.done()) {
    now += reader.vlq();
    const std::size_t status_pos = reader.pos();
    std::uint8_t status = reader.peek();
    if (status & 0x80) {
      reader.u8();
    } else {
      if (running == 0) throw MidiParseError("data byte without running status", status_pos);
      status = running;
    }

    if (status == 0xFF) {
      const std::uint8_t type = reader.u8();
      const std::uint32_t len = reader.vlq();
      reader.skip(len);
      if (type == 0x2F) break;
      continue;
    }
    if (status == 0xF0 || status == 0xF7) {
      reader.skip(reader.vlq());
      continue;
    }
    if (status >= 0xF0) throw MidiParseError("unexpected system message", status_pos);

    running = status;
    const int kind = status & 0xF0;
    const int channel = status & 0x0F;
    if (kind == 0xC0 || kind == 0xD0) {
      reader.u8();
      continue;
    }
    const int data1 = reader.u8();
    const int data2 = reader.u8();
    if (data1 > 127 || data2 > 127) throw MidiParseError("data byte out of range", status_pos);
    if (kind == 0x90 && data2 > 0) {
      open[{channel, data1}].push_back(now);
    } else if (kind == 0x80 || kind == 0x90) {
      close_note(channel, data1);
    }
  }
  return notes;
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t buf[5];
  int n = 0;
  buf[n++] = v & 0x7F;
  while ((v >>= 7) != 0) buf[n++] = static_cast<std::uint8_t>((v & 0x7F) | 0x80);
  while (n > 0) out.push_back(buf[--n]);
}

}  // namespace

ParsedMidi parse_midi(std::span<const std::uint8_t> bytes, const ParseOptions& options) {
  ByteReader header(bytes, 0, bytes.size());
  if (bytes.size() < 14 || !std::equal(bytes.begin(), bytes.begin() + 4, "MThd")) {
    throw MidiParseError("missing MThd header", 0);
  }
  header.skip(4);
  const std::uint32_t header_len = header.u32();
  if (header_len < 6 || header_len > bytes.size() - 8) {
    throw MidiParseError("bad header length " + std::to_string(header_len), 4);
  }
  ParsedMidi result;
  result.format = header.u16();
  const int declared_tracks = header.u16();
  const std::uint16_t division = header.u16();
  if (result.format == 2) throw UnsupportedMidiError("MIDI format 2 is not supported");
  if (result.format > 2) throw MidiParseError("unknown MIDI format " + std::to_string(result.format), 8);
  if (division & 0x8000) throw UnsupportedMidiError("SMPTE time division is not supported");
  if (division == 0) throw MidiParseError("zero ticks per quarter", 12);
  result.ticks_per_quarter = division;

  std::size_t pos = 8 + header_len;
  int track_index = 0;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 8) throw MidiParseError("truncated chunk header", pos);
    ByteReader chunk(bytes, pos, bytes.size());
    const bool is_track = std::equal(bytes.begin() + pos, bytes.begin() + pos + 4, "MTrk");
    chunk.skip(4);
    const std::uint32_t len = chunk.u32();
    const std::size_t body = pos + 8;
    if (len > bytes.size() - body) {
      throw MidiParseError("chunk length " + std::to_string(len) + " exceeds file size", pos + 4);
    }
    if (is_track) {
      try {
        auto notes = parse_track(ByteReader(bytes, body, body + len), track_index);
        result.notes.insert(result.notes.end(), notes.begin(), notes.end());
      } catch (const MidiParseError& e) {
        if (!options.skip_bad_tracks) throw;
        result.skipped_tracks.push_back("track " + std::to_string(track_index) + ": " + e.what());
      }
      ++track_index;
    }
    pos = body + len;
  }
  result.track_count = track_index;
  if (track_index < declared_tracks) {
    spdlog::debug("header declares {} tracks, found {}", declared_tracks, track_index);
  }

  std::stable_sort(result.notes.begin(), result.notes.end(), [](const RawNote& a, const RawNote& b) {
    if (a.onset_ticks != b.onset_ticks) return a.onset_ticks < b.onset_ticks;
    return a.pitch > b.pitch;
  });
  return result;
}

std::vector<RawNote> first_note_track(std::span<const RawNote> notes) {
  if (notes.empty()) return {};
  const int first = std::min_element(notes.begin(), notes.end(), [](const RawNote& a, const RawNote& b) {
                      return a.track_index < b.track_index;
                    })->track_index;
  std::vector<RawNote> out;
  std::copy_if(notes.begin(), notes.end(), std::back_inserter(out),
               [first](const RawNote& n) { return n.track_index == first; });
  return out;
}

Melody quantize(std::span<const RawNote> raw, int ppq) {
  if (ppq < 24) throw std::invalid_argument("ppq must be at least 24, got " + std::to_string(ppq));
  if (raw.empty()) return {};
  const double ticks_per_cell = ppq / 4.0;
  auto to_cells = [ticks_per_cell](std::int64_t ticks) {
    return static_cast<std::int64_t>(std::llround(static_cast<double>(ticks) / ticks_per_cell));
  };

  struct GridNote {
    std::int64_t onset;
    std::int64_t duration;
    int pitch;
  };
  std::vector<GridNote> grid;
  grid.reserve(raw.size());
  for (const RawNote& n : raw) {
    grid.push_back({to_cells(n.onset_ticks), std::max<std::int64_t>(1, to_cells(n.duration_ticks)), n.pitch});
  }
  std::stable_sort(grid.begin(), grid.end(), [](const GridNote& a, const GridNote& b) {
    if (a.onset != b.onset) return a.onset < b.onset;
    return a.pitch > b.pitch;
  });
  // Highest pitch wins among simultaneous onsets.
  grid.erase(std::unique(grid.begin(), grid.end(),
                         [](const GridNote& a, const GridNote& b) { return a.onset == b.onset; }),
             grid.end());

  std::vector<Melody> segments(1);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    std::int64_t duration = grid[k].duration;
    bool split_after = false;
    if (k + 1 < grid.size()) {
      const std::int64_t spacing = grid[k + 1].onset - grid[k].onset;
      if (duration > spacing) {
        duration = spacing;
      } else if (duration < spacing) {
        if (spacing <= kMaxDuration) {
          duration = spacing;
        } else {
          split_after = true;
        }
      }
    }
    segments.back().push_back({grid[k].pitch, static_cast<int>(duration)});
    if (split_after) segments.emplace_back();
  }

  auto longest = std::max_element(segments.begin(), segments.end(),
                                   [](const Melody& a, const Melody& b) { return a.size() < b.size(); });
  if (segments.size() > 1) {
    spdlog::debug("melody split into {} segments at long rests, keeping {} notes", segments.size(),
                  longest->size());
  }
  return std::move(*longest);
}

std::vector<std::uint8_t> write_midi(const Melody& melody) {
  if (melody.empty()) throw std::invalid_argument("cannot write an empty melody");

  std::vector<std::uint8_t> track;
  put_vlq(track, 0);
  track.insert(track.end(), {0xFF, 0x51, 0x03});
  track.push_back(static_cast<std::uint8_t>(kMicrosPerQuarter120Bpm >> 16));
  track.push_back(static_cast<std::uint8_t>((kMicrosPerQuarter120Bpm >> 8) & 0xFF));
  track.push_back(static_cast<std::uint8_t>(kMicrosPerQuarter120Bpm & 0xFF));
  for (const NoteEvent& note : melody) {
    if (note.pitch < 0 || note.pitch > 127 || note.duration < 1) {
      throw std::invalid_argument("note out of range: pitch " + std::to_string(note.pitch) + ", duration " +
                                  std::to_string(note.duration));
    }
    const auto pitch = static_cast<std::uint8_t>(note.pitch);
    put_vlq(track, 0);
    track.insert(track.end(), {0x90, pitch, 80});
    put_vlq(track, static_cast<std::uint32_t>(note.duration * kWriteTicksPerCell));
    track.insert(track.end(), {0x80, pitch, 64});
  }
  put_vlq(track, 0);
  track.insert(track.end(), {0xFF, 0x2F, 0x00});

  std::vector<std::uint8_t> out{'M', 'T', 'h', 'd'};
  put_u32(out, 6);
  put_u16(out, 0);
  put_u16(out, 1);
  put_u16(out, kWritePpq);
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  put_u32(out, static_cast<std::uint32_t>(track.size()));
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Melody load_melody(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const ParsedMidi parsed = parse_midi(bytes, {.skip_bad_tracks = true});
  for (const auto& reason : parsed.skipped_tracks) {
    spdlog::warn("{}: skipped {}", path.filename().string(), reason);
  }
  const auto notes = first_note_track(parsed.notes);
  if (!notes.empty() && notes.size() != parsed.notes.size()) {
    spdlog::info("{}: using track {} of {} note tracks", path.filename().string(), notes.front().track_index,
                 parsed.track_count);
  }
  return quantize(notes, parsed.ticks_per_quarter);
}

Melody transpose(const Melody& melody, int semitones) {
  Melody out = melody;
  for (NoteEvent& n : out) {
    n.pitch += semitones;
    if (n.pitch < 0 || n.pitch > 127) {
      throw std::out_of_range("transposition by " + std::to_string(semitones) + " leaves MIDI range");
    }
  }
  return out;
}

}  // namespace melodylab
