#include <gtest/gtest.h>

#include <cstdint>
#include <random>
#include <vector>

#include "melodylab/metrics.h"
#include "melodylab/midi_io.h"

using namespace melodylab;

namespace {

using Bytes = std::vector<std::uint8_t>;

void put_u32(Bytes& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

Bytes smf(int format, std::uint16_t division, const std::vector<Bytes>& tracks) {
  Bytes b = {'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, static_cast<std::uint8_t>(format), 0,
             static_cast<std::uint8_t>(tracks.size()), static_cast<std::uint8_t>(division >> 8),
             static_cast<std::uint8_t>(division & 0xFF)};
  for (const Bytes& t : tracks) {
    b.insert(b.end(), {'M', 'T', 'r', 'k'});
    put_u32(b, static_cast<std::uint32_t>(t.size()));
    b.insert(b.end(), t.begin(), t.end());
  }
  return b;
}

const Bytes kEndOfTrack = {0x00, 0xFF, 0x2F, 0x00};

Bytes with_end(Bytes events) {
  events.insert(events.end(), kEndOfTrack.begin(), kEndOfTrack.end());
  return events;
}

}  // namespace

TEST(ParseMidi, SingleNote) {
  // note-on 60 at 0, note-off at 480 (delta 0x83 0x60)
  const Bytes file = smf(0, 480, {with_end({0x00, 0x90, 60, 64, 0x83, 0x60, 0x80, 60, 0})});
  const ParsedMidi p = parse_midi(file);
  EXPECT_EQ(p.ticks_per_quarter, 480);
  EXPECT_EQ(p.format, 0);
  ASSERT_EQ(p.notes.size(), 1u);
  EXPECT_EQ(p.notes[0].onset_ticks, 0);
  EXPECT_EQ(p.notes[0].duration_ticks, 480);
  EXPECT_EQ(p.notes[0].pitch, 60);
}

TEST(ParseMidi, RunningStatusVelocityZeroEndsNote) {
  // note-on 62, then running-status note-on 62 velocity 0 after 240 ticks (0x81 0x70)
  const Bytes file = smf(0, 480, {with_end({0x00, 0x90, 62, 100, 0x81, 0x70, 62, 0})});
  const ParsedMidi p = parse_midi(file);
  ASSERT_EQ(p.notes.size(), 1u);
  EXPECT_EQ(p.notes[0].duration_ticks, 240);
  EXPECT_EQ(p.notes[0].pitch, 62);
}

TEST(ParseMidi, SimultaneousNotesSortedByDescendingPitch) {
  const Bytes file =
      smf(0, 96, {with_end({0x00, 0x90, 60, 90, 0x00, 0x90, 67, 90, 0x60, 0x80, 60, 0, 0x00, 0x80, 67, 0})});
  const ParsedMidi p = parse_midi(file);
  ASSERT_EQ(p.notes.size(), 2u);
  EXPECT_EQ(p.notes[0].pitch, 67);
  EXPECT_EQ(p.notes[1].pitch, 60);
}

TEST(ParseMidi, Format1TracksAreIndexed) {
  const Bytes conductor = with_end({0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20});
  const Bytes melody = with_end({0x00, 0x90, 64, 80, 0x60, 0x80, 64, 0});
  const Bytes bass = with_end({0x00, 0x90, 40, 80, 0x60, 0x80, 40, 0});
  const ParsedMidi p = parse_midi(smf(1, 96, {conductor, melody, bass}));
  EXPECT_EQ(p.track_count, 3);
  ASSERT_EQ(p.notes.size(), 2u);
  const auto first = first_note_track(p.notes);
  ASSERT_EQ(first.size(), 1u);
  EXPECT_EQ(first[0].pitch, 64);
  EXPECT_EQ(first[0].track_index, 1);
}

TEST(ParseMidi, Format2IsUnsupported) {
  EXPECT_THROW(parse_midi(smf(2, 96, {with_end({})})), UnsupportedMidiError);
}

TEST(ParseMidi, SmpteDivisionIsUnsupported) {
  EXPECT_THROW(parse_midi(smf(0, 0xE728, {with_end({})})), UnsupportedMidiError);
}

TEST(ParseMidi, BadMagicNamesOffset) {
  Bytes file = smf(0, 96, {with_end({})});
  file[0] = 'X';
  try {
    parse_midi(file);
    FAIL() << "expected MidiParseError";
  } catch (const MidiParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
    EXPECT_NE(std::string(e.what()).find("byte offset 0"), std::string::npos);
  }
}

TEST(ParseMidi, TruncatedTrackReportsOffset) {
  Bytes file = smf(0, 96, {with_end({0x00, 0x90, 60, 64, 0x60, 0x80, 60, 0})});
  file.resize(file.size() - 6);
  EXPECT_THROW(parse_midi(file), MidiParseError);
}

TEST(ParseMidi, LenientModeSkipsBrokenTrack) {
  const Bytes good = with_end({0x00, 0x90, 64, 80, 0x60, 0x80, 64, 0});
  const Bytes broken = {0x00, 0xF4, 0x00};  // undefined status byte
  EXPECT_THROW(parse_midi(smf(1, 96, {broken, good})), MidiParseError);
  const ParsedMidi p = parse_midi(smf(1, 96, {broken, good}), {.skip_bad_tracks = true});
  EXPECT_EQ(p.skipped_tracks.size(), 1u);
  ASSERT_EQ(p.notes.size(), 1u);
  EXPECT_EQ(p.notes[0].pitch, 64);
}

TEST(Quantize, QuarterNote) {
  const RawNote raw[] = {{0, 480, 60, 0}};
  EXPECT_EQ(quantize(raw, 480), (Melody{{60, 4}}));
}

TEST(Quantize, RoundsToNearestCell) {
  const RawNote raw[] = {{0, 450, 60, 0}, {480, 960, 64, 0}};
  EXPECT_EQ(quantize(raw, 480), (Melody{{60, 4}, {64, 8}}));
}

TEST(Quantize, OverlapTruncatesEarlierNote) {
  const RawNote raw[] = {{0, 960, 60, 0}, {480, 480, 64, 0}};
  EXPECT_EQ(quantize(raw, 480), (Melody{{60, 4}, {64, 4}}));
}

TEST(Quantize, SimultaneousOnsetsKeepHighestPitch) {
  const RawNote raw[] = {{0, 480, 60, 0}, {0, 480, 72, 0}, {0, 480, 67, 0}, {480, 480, 65, 0}};
  EXPECT_EQ(quantize(raw, 480), (Melody{{72, 4}, {65, 4}}));
}

TEST(Quantize, ShortGapAbsorbedByPreviousNote) {
  // one quarter, then an eighth rest
  const RawNote raw[] = {{0, 480, 60, 0}, {720, 480, 62, 0}};
  EXPECT_EQ(quantize(raw, 480), (Melody{{60, 6}, {62, 4}}));
}

TEST(Quantize, LongRestSplitsAndKeepsLongestSegment) {
  std::vector<RawNote> raw = {{0, 120, 50, 0}, {120, 120, 52, 0}};
  // rest of two bars, then three notes
  for (int k = 0; k < 3; ++k) raw.push_back({240 + 3840 + 480 * k, 480, 60 + k, 0});
  EXPECT_EQ(quantize(raw, 480), (Melody{{60, 4}, {61, 4}, {62, 4}}));
}

TEST(Quantize, MinimumDurationIsOneCell) {
  const RawNote raw[] = {{0, 10, 60, 0}, {120, 120, 62, 0}};
  EXPECT_EQ(quantize(raw, 480), (Melody{{60, 1}, {62, 1}}));
}

TEST(Quantize, EmptyInputAndLowPpq) {
  EXPECT_TRUE(quantize({}, 480).empty());
  const RawNote raw[] = {{0, 4, 60, 0}};
  EXPECT_THROW(quantize(raw, 12), std::invalid_argument);
}

TEST(Quantize, IdempotentOnGridAlignedInput) {
  const Melody m = {{60, 4}, {62, 2}, {64, 16}, {65, 1}};
  std::vector<RawNote> raw;
  std::int64_t t = 0;
  for (const auto& n : m) {
    raw.push_back({t * 24, n.duration * 24, n.pitch, 0});
    t += n.duration;
  }
  EXPECT_EQ(quantize(raw, 96), m);
}

TEST(Quantize, OutputIsMonophonic) {
  std::mt19937 rng(3);
  std::vector<RawNote> raw;
  for (int k = 0; k < 200; ++k) {
    raw.push_back({std::uniform_int_distribution<int>(0, 20000)(rng), std::uniform_int_distribution<int>(1, 2000)(rng),
                   std::uniform_int_distribution<int>(40, 90)(rng), 0});
  }
  const Melody m = quantize(raw, 480);
  ASSERT_FALSE(m.empty());
  for (const auto& n : m) EXPECT_GE(n.duration, 1);
}

TEST(WriteMidi, SeedRoundtrip) {
  const Melody seed = {{62, 8}, {64, 4}, {65, 4}};
  const Bytes file = write_midi(seed);
  const ParsedMidi p = parse_midi(file);
  EXPECT_EQ(p.format, 0);
  EXPECT_EQ(p.ticks_per_quarter, 480);
  ASSERT_EQ(p.notes.size(), 3u);
  EXPECT_EQ(p.notes[0].duration_ticks, 960);
  EXPECT_EQ(p.notes[1].onset_ticks, 960);
  EXPECT_EQ(quantize(p.notes, p.ticks_per_quarter), seed);
}

TEST(WriteMidi, MetricsSurviveRoundtrip) {
  const Melody m = {{62, 8}, {64, 4}, {65, 4}, {67, 2}, {65, 2}, {64, 4}, {62, 8}};
  const ParsedMidi p = parse_midi(write_midi(m));
  EXPECT_EQ(evaluate(quantize(p.notes, p.ticks_per_quarter)), evaluate(m));
}

TEST(WriteMidi, RejectsEmptyAndOutOfRange) {
  EXPECT_THROW(write_midi({}), std::invalid_argument);
  EXPECT_THROW(write_midi({{128, 4}}), std::invalid_argument);
  EXPECT_THROW(write_midi({{60, 0}}), std::invalid_argument);
}

TEST(Transpose, ShiftsAndChecksRange) {
  const Melody m = {{60, 4}, {120, 2}};
  EXPECT_EQ(transpose(m, 7), (Melody{{67, 4}, {127, 2}}));
  EXPECT_EQ(transpose(m, 0), m);
  EXPECT_THROW(transpose(m, 8), std::out_of_range);
  EXPECT_THROW(transpose(m, -61), std::out_of_range);
}

TEST(LoadMelody, BundledCorpusFile) {
  const Melody m = load_melody(std::string(MELODYLAB_SOURCE_DIR) + "/corpus/001.mid");
  EXPECT_GE(m.size(), 30u);
  for (const auto& n : m) {
    EXPECT_GE(n.pitch, 0);
    EXPECT_LE(n.pitch, 127);
    EXPECT_GE(n.duration, 1);
  }
}
