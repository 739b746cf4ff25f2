#!/usr/bin/env python3
"""Regenerates the bundled MIDI corpus, the toy memorization song and the
reference note dump for corpus/001.mid.

The melodies are synthetic: seeded random walks over diatonic scales with
mixed rhythms. A few files are deliberately dirty (too short, over-long
notes, overlaps, timing jitter, multi-track layout) so ingestion and
cleaning have something to do.

Requires `mido` (pip install mido). Output is deterministic.
"""
import json
import pathlib
import random

import mido

ROOT = pathlib.Path(__file__).resolve().parent.parent
CORPUS = ROOT / "corpus"
TOY = ROOT / "data" / "toy"
FIXTURES = ROOT / "tests" / "fixtures"

MAJOR = [0, 2, 4, 5, 7, 9, 11]
MINOR = [0, 2, 3, 5, 7, 8, 10]
DURATIONS = [2, 2, 4, 4, 4, 4, 6, 8, 8, 12, 16, 1]
SEED_MOTIF = [(62, 8), (64, 4), (65, 4)]


def scale_pitches(tonic, mode, low=48, high=96):
    steps = MAJOR if mode == "major" else MINOR
    return [p for p in range(low, high + 1) if (p - tonic) % 12 in steps]


def random_melody(rng, length):
    tonic = rng.randrange(12)
    mode = rng.choice(["major", "minor"])
    pitches = scale_pitches(tonic, mode)
    idx = rng.randrange(len(pitches) // 3, 2 * len(pitches) // 3)
    notes = []
    for _ in range(length):
        step = rng.choice([-2, -1, -1, 0, 1, 1, 2, 3, -3, 4, -4])
        idx = min(max(idx + step, 0), len(pitches) - 1)
        notes.append((pitches[idx], rng.choice(DURATIONS)))
    return notes


def track_from_notes(notes, unit, rng=None, jitter=0, rests=None):
    """notes: (pitch, duration16) list; returns absolute (on, off, pitch) events."""
    events = []
    t = 0
    for k, (p, d) in enumerate(notes):
        on = t
        off = t + d * unit
        if jitter and rng is not None:
            on = max(0, on + rng.randint(-jitter, jitter))
            off = max(on + 1, off + rng.randint(-jitter, jitter))
        events.append((on, off, p))
        t += d * unit
        if rests and k in rests:
            t += rests[k] * unit
    return events


def to_track(events, channel=0, with_tempo=False):
    msgs = []
    for on, off, p in events:
        msgs.append((on, 1, mido.Message("note_on", note=p, velocity=80, channel=channel)))
        msgs.append((off, 0, mido.Message("note_off", note=p, velocity=0, channel=channel)))
    msgs.sort(key=lambda m: (m[0], m[1]))
    track = mido.MidiTrack()
    if with_tempo:
        track.append(mido.MetaMessage("set_tempo", tempo=500000, time=0))
    now = 0
    for t, _, msg in msgs:
        msg.time = t - now
        now = t
        track.append(msg)
    track.append(mido.MetaMessage("end_of_track", time=0))
    return track


def save(path, tracks, ppq, fmt):
    mid = mido.MidiFile(type=fmt, ticks_per_beat=ppq)
    for tr in tracks:
        mid.tracks.append(tr)
    mid.save(str(path))


def reference_dump(path):
    """Independent note pairing: FIFO per (track, channel, pitch), all tracks."""
    mid = mido.MidiFile(str(path))
    notes = []
    for ti, track in enumerate(mid.tracks):
        now = 0
        open_notes = {}
        for msg in track:
            now += msg.time
            if msg.type == "note_on" and msg.velocity > 0:
                open_notes.setdefault((msg.channel, msg.note), []).append(now)
            elif msg.type in ("note_off", "note_on"):
                stack = open_notes.get((msg.channel, msg.note))
                if stack:
                    on = stack.pop(0)
                    if now > on:
                        notes.append([on, now - on, msg.note])
    notes.sort(key=lambda n: (n[0], -n[2]))
    return notes


def toy_song(rng, length=200):
    pitches = [60, 62, 64, 65, 67, 69, 71, 72]
    durs = [2, 4, 8]
    tokens = [(p, d) for p in pitches for d in durs]
    while True:
        seq = [rng.choice(tokens) for _ in range(length)]
        grams = {tuple(seq[(i + k) % length] for k in range(3)) for i in range(length)}
        if len(grams) == length:
            return seq


def main():
    rng = random.Random(20201)
    CORPUS.mkdir(exist_ok=True)
    TOY.mkdir(parents=True, exist_ok=True)
    FIXTURES.mkdir(parents=True, exist_ok=True)
    for old in CORPUS.glob("*.mid"):
        old.unlink()

    count = 150
    for i in range(1, count + 1):
        name = CORPUS / f"{i:03d}.mid"
        length = rng.randint(30, 80)
        notes = random_melody(rng, length)
        if i % 4 == 0:
            notes[:3] = SEED_MOTIF
        ppq = rng.choice([480, 480, 384, 96, 960])
        unit = ppq // 4
        if i == 1:
            # Multi-track, humanized timing, conductor track first.
            events = track_from_notes(notes, unit, rng, jitter=unit // 5)
            conductor = mido.MidiTrack()
            conductor.append(mido.MetaMessage("set_tempo", tempo=600000, time=0))
            conductor.append(mido.MetaMessage("end_of_track", time=0))
            save(name, [conductor, to_track(events)], ppq, 1)
            continue
        rests = None
        if i % 7 == 0:
            rests = {k: rng.choice([1, 2, 4]) for k in rng.sample(range(length - 1), 3)}
        jitter = unit // 6 if i % 5 == 0 else 0
        events = track_from_notes(notes, unit, rng, jitter=jitter, rests=rests)
        fmt = 1 if i % 3 == 0 else 0
        save(name, [to_track(events, with_tempo=True)], ppq, fmt)

    # Dirty files exercised by cleaning.
    short = random_melody(rng, 8)
    save(CORPUS / "151_short.mid", [to_track(track_from_notes(short, 120), with_tempo=True)], 480, 0)
    long_note = random_melody(rng, 20)
    long_note[10] = (long_note[10][0], 24)
    save(CORPUS / "152_long_note.mid", [to_track(track_from_notes(long_note, 120), with_tempo=True)], 480, 0)
    overlap = random_melody(rng, 24)
    ev = track_from_notes(overlap, 120)
    ev = [(on, off + (60 if k % 2 == 0 else 0), p) for k, (on, off, p) in enumerate(ev)]
    save(CORPUS / "153_overlap.mid", [to_track(ev, with_tempo=True)], 480, 0)

    with open(FIXTURES / "corpus_001_notes.json", "w") as f:
        json.dump(reference_dump(CORPUS / "001.mid"), f)

    song = toy_song(random.Random(7))
    save(TOY / "toy200.mid", [to_track(track_from_notes(song, 120), with_tempo=True)], 480, 0)


if __name__ == "__main__":
    main()
