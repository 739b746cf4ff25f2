// Acceptance suite: one PASS/FAIL line per criterion. Exit status is non-zero if
// any criterion fails.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "melodylab/cli.h"
#include "melodylab/dataset.h"
#include "melodylab/generator.h"
#include "melodylab/metrics.h"
#include "melodylab/midi_io.h"
#include "melodylab/nn.h"
#include "melodylab/trainer.h"

namespace fs = std::filesystem;
using namespace melodylab;

namespace {

const fs::path kRoot = MELODYLAB_SOURCE_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("melodylab_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// -- 1 ------------------------------------------------------------------------

/// Counts windows by sliding one explicitly: one window for short songs,
/// otherwise every start s = k*m with s + n <= len.
std::size_t enumerate_windows(std::size_t len, std::size_t n, std::size_t m) {
  if (len <= n) return 1;
  std::size_t count = 0;
  for (std::size_t s = 0; s + n <= len; s += m) ++count;
  return count;
}

Outcome span_count_oracle() {
  const auto start = std::chrono::steady_clock::now();
  std::size_t checked = 0, mismatches = 0;
  auto check = [&](std::size_t len, int n, int m) {
    ++checked;
    const SpanConfig cfg{n, m};
    if (span_count(len, cfg) != enumerate_windows(len, n, m)) ++mismatches;
  };
  for (std::size_t len = 1; len <= 200; ++len) check(len, 32, 4);
  std::mt19937_64 rng(101);
  for (int pair = 0; pair < 20; ++pair) {
    const int n = std::uniform_int_distribution<int>(1, 64)(rng);
    const int m = std::uniform_int_distribution<int>(1, n)(rng);
    for (std::size_t len = 1; len <= 200; ++len) check(len, n, m);
  }
  const double secs = seconds_since(start);
  return {mismatches == 0 && secs < 1.0, fmt("%zu cases, %zu mismatches, %.3f s", checked, mismatches, secs)};
}

// -- 2 ------------------------------------------------------------------------

Outcome gradient_check() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string parts;
  for (CellType cell : {CellType::lstm, CellType::gru}) {
    for (int layers : {1, 2}) {
      GradCheckConfig cfg;
      cfg.model.cell_type = cell;
      cfg.model.num_layers = layers;
      cfg.model.vocab_size = 12;
      cfg.model.embedding_dim = 8;
      cfg.model.hidden_units = 16;
      cfg.seq_len = 5;
      cfg.step = 1e-5;
      cfg.tolerance = 1e-5;
      const GradCheckReport r = grad_check(cfg);
      worst = std::max(worst, r.max_relative_error);
      parts += fmt(" %s/%d=%.2e", std::string(to_string(cell)).c_str(), layers, r.max_relative_error);
    }
  }
  const double secs = seconds_since(start);
  return {worst < 1e-5 && secs < 30.0, fmt("max rel err%s, %.2f s", parts.c_str(), secs)};
}

// -- 3 ------------------------------------------------------------------------

Outcome toy_memorization() {
  const auto start = std::chrono::steady_clock::now();
  const Melody toy = load_melody(kRoot / "data" / "toy" / "toy200.mid");
  if (toy.size() != 200) return {false, fmt("toy corpus has %zu notes, expected 200", toy.size())};

  // 64 back-to-back copies fill every default lane with exactly one pass over the song.
  const std::vector<Token> song = absolute_tokens(toy);
  const EncodedDataset train = encode_songs(DatasetVariant::control, std::vector<std::vector<Token>>(64, song));
  const EncodedDataset val = encode_songs(DatasetVariant::control, {song});

  TrainConfig cfg;
  cfg.model.hidden_units = 64;
  cfg.epochs = 300;
  Trainer trainer(cfg, train, val);

  const SamplerConfig sampler{Melody(toy.begin(), toy.begin() + 3), 30, kArgmaxTemperature / 2, 0, 1};
  const Melody expected(toy.begin(), toy.begin() + 33);

  int converged_at = 0, epoch = 0;
  bool memorized = false;
  double loss = std::numeric_limits<double>::infinity();
  while (epoch < cfg.epochs) {
    ++epoch;
    loss = trainer.train_epoch();
    if (loss < 0.15 && converged_at == 0) converged_at = epoch;
    if (converged_at != 0) {
      const MelodyModel model{trainer.params(), train.vocab, DatasetVariant::control};
      memorized = sample(model, sampler) == expected;
      if (memorized) break;
    }
  }
  const double secs = seconds_since(start);
  const bool ok = converged_at != 0 && memorized && secs < 300.0;
  return {ok, fmt("train CE %.4f, < 0.15 at epoch %d, 30-token recall %s at epoch %u, %.1f s", loss, converged_at,
                  memorized ? "exact" : "FAILED", epoch, secs)};
}

// -- 4 ------------------------------------------------------------------------

Outcome metric_oracles() {
  std::ifstream in(kRoot / "tests" / "fixtures" / "metric_fixtures.json");
  const nlohmann::json fixtures = nlohmann::json::parse(in);
  double worst = 0.0;
  for (const auto& f : fixtures) {
    Melody m;
    for (const auto& n : f.at("notes")) m.push_back({n.at(0).get<int>(), n.at(1).get<int>()});
    SpanConfig cfg{f.at("span").get<int>(), f.at("step").get<int>(),
                   f.at("cmm_mode") == "global" ? CmmMode::global : CmmMode::per_span};
    const MetricTriple got = evaluate(m, cfg);
    const auto& e = f.at("expected");
    worst = std::max({worst, std::abs(got.cmm - e.at("cmm").get<double>()),
                      std::abs(got.lm - e.at("lm").get<double>()),
                      std::abs(got.centr - e.at("centr").get<double>())});
  }

  const MetricTriple constant = evaluate(Melody(20, NoteEvent{67, 4}));
  Melody chromatic;
  for (int p = 60; p < 84; ++p) chromatic.push_back({p, 4});
  const double chromatic_cmm = evaluate(chromatic).cmm;

  const bool trivial = constant == MetricTriple{0.0, 5.0, 1.0} && chromatic_cmm == 1.0;
  return {fixtures.size() == 10 && worst <= 1e-9 && trivial,
          fmt("%zu fixtures, max |diff| %.2e; constant (%g, %g, %g); chromatic CMM %g", fixtures.size(), worst,
              constant.cmm, constant.lm, constant.centr, chromatic_cmm)};
}

// -- 5 ------------------------------------------------------------------------

Melody random_melody(std::mt19937_64& rng, int lo, int hi) {
  std::uniform_int_distribution<int> count(2, 80), pitch(lo, hi), dur(1, 16);
  Melody m(static_cast<std::size_t>(count(rng)));
  for (auto& n : m) n = {pitch(rng), dur(rng)};
  return m;
}

bool bitwise_equal(const MetricTriple& a, const MetricTriple& b) {
  return std::bit_cast<std::uint64_t>(a.cmm) == std::bit_cast<std::uint64_t>(b.cmm) &&
         std::bit_cast<std::uint64_t>(a.lm) == std::bit_cast<std::uint64_t>(b.lm) &&
         std::bit_cast<std::uint64_t>(a.centr) == std::bit_cast<std::uint64_t>(b.centr);
}

Outcome transposition_invariance() {
  std::mt19937_64 rng(505);
  int failures = 0, checked = 0;
  for (int i = 0; i < 50; ++i) {
    const Melody m = random_melody(rng, 30, 100);
    const MetricTriple base = evaluate(m);
    int lo = 127, hi = 0;
    for (const auto& n : m) lo = std::min(lo, n.pitch), hi = std::max(hi, n.pitch);
    std::uniform_int_distribution<int> shift(-lo, 127 - hi);
    for (int k = 0; k < 5; ++k) {
      ++checked;
      if (!bitwise_equal(evaluate(transpose(m, shift(rng))), base)) ++failures;
    }
  }
  return {failures == 0, fmt("%d transpositions, %d differ", checked, failures)};
}

// -- 6 ------------------------------------------------------------------------

Outcome dataset_properties() {
  const Corpus corpus = clean(load_corpus(kRoot / "corpus"));
  std::string detail;
  bool ok = true;
  std::size_t control_songs = 0, db12_songs = 0;
  for (DatasetVariant v : {DatasetVariant::control, DatasetVariant::interval, DatasetVariant::db12}) {
    const EncodedDataset ds = build_dataset(v, corpus);
    bool shifted = ds.x.size() == ds.y.size() && !ds.x.empty();
    for (std::size_t i = 0; shifted && i + 1 < ds.x.size(); ++i) shifted = ds.y[i] == ds.x[i + 1];
    ok = ok && shifted;
    detail += fmt("%s shift %s; ", std::string(to_string(v)).c_str(), shifted ? "ok" : "BROKEN");
    if (v == DatasetVariant::control) control_songs = ds.song_count();
    if (v == DatasetVariant::db12) db12_songs = ds.song_count();
  }
  const bool twelve = db12_songs == 12 * control_songs;
  std::size_t roundtrip_failures = 0;
  for (const Melody& m : corpus.melodies) {
    const DecodedIntervals d = decode_intervals(interval_tokens(m), m.front().pitch);
    if (d.melody != m || d.clamped != 0) ++roundtrip_failures;
  }
  ok = ok && twelve && roundtrip_failures == 0;
  detail += fmt("db12 %zu songs = 12 x %zu: %s; interval roundtrip failures %zu/%zu", db12_songs, control_songs,
                twelve ? "yes" : "NO", roundtrip_failures, corpus.melodies.size());
  return {ok, detail};
}

// -- 7 ------------------------------------------------------------------------

Outcome midi_roundtrip() {
  std::mt19937_64 rng(707);
  int failures = 0;
  for (int i = 0; i < 100; ++i) {
    const Melody m = random_melody(rng, 0, 127);
    const ParsedMidi parsed = parse_midi(write_midi(m));
    if (quantize(parsed.notes, parsed.ticks_per_quarter) != m) ++failures;
  }

  std::ifstream in(kRoot / "tests" / "fixtures" / "corpus_001_notes.json");
  const nlohmann::json dump = nlohmann::json::parse(in);
  const ParsedMidi fixture = parse_midi(read_file_bytes(kRoot / "corpus" / "001.mid"));
  std::vector<RawNote> notes = first_note_track(fixture.notes);
  std::sort(notes.begin(), notes.end(), [](const RawNote& a, const RawNote& b) {
    return a.onset_ticks != b.onset_ticks ? a.onset_ticks < b.onset_ticks : a.pitch > b.pitch;
  });
  bool fixture_ok = notes.size() == dump.size();
  for (std::size_t k = 0; fixture_ok && k < notes.size(); ++k) {
    fixture_ok = notes[k].onset_ticks == dump[k][0].get<std::int64_t>() &&
                 notes[k].duration_ticks == dump[k][1].get<std::int64_t>() && notes[k].pitch == dump[k][2].get<int>();
  }
  return {failures == 0 && fixture_ok,
          fmt("%d/100 roundtrips differ; 001.mid %zu notes vs %zu in reference dump: %s", failures, notes.size(),
              dump.size(), fixture_ok ? "equal" : "DIFFERENT")};
}

// -- 8 ------------------------------------------------------------------------

std::size_t brute_force_representative(const std::vector<MetricTriple>& t) {
  double mc = 0, ml = 0, mz = 0;
  for (const auto& x : t) mc += x.cmm, ml += x.lm, mz += x.centr;
  mc /= static_cast<double>(t.size());
  ml /= static_cast<double>(t.size());
  mz /= static_cast<double>(t.size());
  std::vector<double> dist;
  for (const auto& x : t) {
    dist.push_back((x.cmm - mc) * (x.cmm - mc) + (x.lm - ml) * (x.lm - ml) + (x.centr - mz) * (x.centr - mz));
  }
  const double lowest = *std::min_element(dist.begin(), dist.end());
  return static_cast<std::size_t>(std::find(dist.begin(), dist.end(), lowest) - dist.begin());
}

Outcome representative_selection() {
  std::mt19937_64 rng(808);
  int mismatches = 0, ties = 0;
  auto check = [&](const std::vector<MetricTriple>& t) {
    const std::size_t want = brute_force_representative(t);
    if (representative(t) != want) ++mismatches;
  };

  // 100 random triples on a coarse lattice, so exact ties and duplicates occur.
  std::uniform_int_distribution<int> lattice(0, 4);
  std::vector<MetricTriple> triples;
  for (int i = 0; i < 100; ++i) triples.push_back({lattice(rng) * 0.5, 1.0 + lattice(rng) * 0.25, lattice(rng) * 0.2});
  check(triples);

  // Continuous values, then explicit ties: duplicates of the winner, mirrored pairs.
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<MetricTriple> t;
    for (int i = 0; i < 100; ++i) t.push_back({u(rng), u(rng), u(rng) / 3});
    check(t);
    const std::size_t w = brute_force_representative(t);
    t.push_back(t[w]);
    t.insert(t.begin(), t[w]);
    ++ties;
    check(t);
  }
  const std::vector<MetricTriple> mirrored = {{0, 0, 0}, {2, 2, 2}, {2, 0, 2}, {0, 2, 0}};
  ++ties;
  check(mirrored);
  if (representative(mirrored) != 0) ++mismatches;
  return {mismatches == 0, fmt("%d tie sets + 21 random sets, %d mismatches", ties, mismatches)};
}

// -- 9 ------------------------------------------------------------------------

int cli(std::vector<std::string> args, std::string* stdout_text = nullptr) {
  std::ostringstream out, err;
  const int rc = run_cli(args, out, err);
  if (stdout_text) *stdout_text = out.str();
  if (rc != 0) std::fprintf(stderr, "melodylab %s failed: %s\n", args.front().c_str(), err.str().c_str());
  return rc;
}

Outcome end_to_end() {
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = scratch_dir("pipeline");
  const std::string data = (dir / "data").string();
  if (cli({"prepare", "--in", (kRoot / "corpus").string(), "--out", data}) != 0) return {false, "prepare failed"};

  std::vector<std::string> compare_args = {"compare", "--out", (dir / "table.json").string()};
  std::string failures;
  for (const std::string variant : {"control", "interval", "db12"}) {
    for (const std::string cell : {"lstm", "gru"}) {
      const std::string tag = variant + "_" + cell;
      const std::string dataset = data + "/" + variant + ".mmtd";
      const fs::path run = dir / "runs" / tag;
      if (cli({"train", "--dataset", dataset, "--out", run.string(), "--cell", cell, "--units", "32", "--epochs", "20",
               "--checkpoint-every", "0"}) != 0) {
        return {false, "train " + tag + " failed"};
      }
      const fs::path samples = dir / "samples" / tag;
      if (cli({"sample", "--checkpoint", (run / "last.mmck").string(), "--dataset", dataset, "--out",
               samples.string(), "--songs", "100", "--seed", "9"}) != 0) {
        return {false, "sample " + tag + " failed"};
      }
      if (cli({"evaluate", "--in", samples.string(), "--out", (samples / "evaluation.json").string()}) != 0) {
        return {false, "evaluate " + tag + " failed"};
      }

      std::ifstream in(samples / "manifest.json");
      const GenerationReport r = report_from_json(nlohmann::json::parse(in));
      bool ok = r.per_song.size() == 100 && r.stats.count == 100 && r.representative_index < 100;
      for (double v : {r.stats.cmm.mean, r.stats.cmm.std, r.stats.lm.mean, r.stats.lm.std, r.stats.centr.mean,
                       r.stats.centr.std}) {
        ok = ok && std::isfinite(v);
      }
      for (int k = 0; ok && k < 100; ++k) {
        ok = load_melody(samples / fmt("song_%03d.mid", k)).size() == 33;
      }
      if (!ok) failures += " " + tag;
      compare_args.push_back("--report");
      compare_args.push_back((samples / "manifest.json").string());
    }
  }
  std::string table;
  if (cli(compare_args, &table) != 0) return {false, "compare failed"};
  std::fputs(table.c_str(), stdout);
  const bool reference_shown = table.find("2.23") != std::string::npos && table.find("0.27") != std::string::npos;
  const double secs = seconds_since(start);
  const bool ok = failures.empty() && reference_shown && secs < 600.0;
  return {ok, fmt("6 models x 100 songs of 33 notes; bad reports:%s; reference row %s; %.1f s",
                  failures.empty() ? " none" : failures.c_str(), reference_shown ? "shown" : "MISSING", secs)};
}

// -- 10 -----------------------------------------------------------------------

Outcome checkpoint_resume() {
  const Corpus corpus = clean(load_corpus(kRoot / "corpus"));
  const auto [train, val] = split_train_val(build_control(corpus), 0.1);
  TrainConfig cfg;
  cfg.model.hidden_units = 32;
  cfg.model.embedding_dim = 16;
  cfg.batch_size = 16;
  cfg.seq_len = 50;
  cfg.epochs = 6;
  cfg.checkpoint_every = 1;

  cfg.output_dir = scratch_dir("resume_full");
  const TrainResult full = Trainer(cfg, train, val).run();

  // Restart from the epoch-3 snapshot written by the uninterrupted run, via disk.
  const Checkpoint at3 = load_checkpoint(cfg.output_dir / "epoch_0003.mmck");
  cfg.output_dir = scratch_dir("resume_tail");
  const TrainResult resumed = Trainer(cfg, train, val, at3).run();

  // run() reports only the epochs it trained itself.
  bool same = full.curve.size() == 6 && resumed.curve.size() == 3;
  for (std::size_t e = 0; same && e < 3; ++e) {
    const CurveRow& a = full.curve[e + 3];
    const CurveRow& b = resumed.curve[e];
    same = a.epoch == b.epoch && std::bit_cast<std::uint64_t>(a.train_loss) == std::bit_cast<std::uint64_t>(b.train_loss) &&
           std::bit_cast<std::uint64_t>(a.val_loss) == std::bit_cast<std::uint64_t>(b.val_loss);
  }
  same = same && serialize_checkpoint(full.last) == serialize_checkpoint(resumed.last);
  return {same, fmt("epochs 4-6 after resuming at 3: losses and final checkpoint %s",
                    same ? "bitwise identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"span count matches window enumeration", span_count_oracle},
      {"analytic gradients match finite differences", gradient_check},
      {"toy corpus convergence and memorization", toy_memorization},
      {"metrics match oracle fixtures", metric_oracles},
      {"metrics are transposition invariant", transposition_invariance},
      {"dataset shift, DB12 size, interval roundtrip", dataset_properties},
      {"MIDI write/parse/quantize roundtrip", midi_roundtrip},
      {"representative song selection", representative_selection},
      {"prepare -> train -> sample -> evaluate -> compare", end_to_end},
      {"checkpoint resume is exact", checkpoint_resume},
  };
  // Optional argument: run only the listed criterion numbers.
  std::vector<bool> selected(criteria.size(), argc <= 1);
  for (int a = 1; a < argc; ++a) {
    const int k = std::atoi(argv[a]);
    if (k >= 1 && k <= static_cast<int>(criteria.size())) selected[static_cast<std::size_t>(k - 1)] = true;
  }

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (!selected[k]) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %2zu: %s  %s -- %s\n", k + 1, o.pass ? "PASS" : "FAIL", criteria[k].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
