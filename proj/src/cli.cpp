/**
 * @file cli.cpp
 * @brief Subcommands: prepare, baseline, train, sweep, sample, evaluate, compare, gradcheck.
 */

#include "melodylab/cli.h"

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "melodylab/binary_io.h"
#include "melodylab/dataset.h"
#include "melodylab/generator.h"
#include "melodylab/metrics.h"
#include "melodylab/midi_io.h"
#include "melodylab/nn.h"
#include "melodylab/trainer.h"

namespace fs = std::filesystem;

namespace melodylab {

namespace {

constexpr DatasetVariant kAllVariants[] = {DatasetVariant::control, DatasetVariant::interval, DatasetVariant::db12};

struct SpanOptions {
  int span = 32;
  int step = 4;
  std::string cmm_mode = "per_span";

  SpanConfig config() const {
    SpanConfig cfg{span, step, cmm_mode == "global" ? CmmMode::global : CmmMode::per_span};
    validate(cfg);
    return cfg;
  }
};

void add_span_options(CLI::App* cmd, SpanOptions& opts) {
  cmd->add_option("--span", opts.span, "Span size in 16th cells")->capture_default_str();
  cmd->add_option("--step", opts.step, "Span step in 16th cells")->capture_default_str();
  cmd->add_option("--cmm-mode", opts.cmm_mode, "per_span or global")
      ->check(CLI::IsMember({"per_span", "global"}))
      ->capture_default_str();
}

struct TrainOptions {
  std::string dataset;
  std::string out;
  std::string cell = "lstm";
  int units = 128;
  int layers = 1;
  int embedding = 64;
  int batch = 64;
  int seq = 100;
  int epochs = -1;  ///< negative: kDefaultEpochs, or kDefaultDb12Epochs on db12
  int checkpoint_every = 10;
  double val_fraction = 0.1;
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip = 5.0;
  std::uint64_t seed = 0;
  bool no_carry_state = false;
  std::string resume;
};

void add_train_options(CLI::App* cmd, TrainOptions& o, bool single_model) {
  cmd->add_option("--dataset", o.dataset, "Dataset file (.mmtd)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "Output directory")->required();
  if (single_model) {
    cmd->add_option("--cell", o.cell, "lstm or gru")->check(CLI::IsMember({"lstm", "gru"}))->capture_default_str();
    cmd->add_option("--units", o.units, "Hidden units per layer")->capture_default_str();
    cmd->add_option("--resume", o.resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
  }
  cmd->add_option("--layers", o.layers, "Stacked recurrent layers")->capture_default_str();
  cmd->add_option("--embedding", o.embedding, "Embedding size")->capture_default_str();
  cmd->add_option("--batch", o.batch, "Batch lanes")->capture_default_str();
  cmd->add_option("--seq", o.seq, "Steps per training window")->capture_default_str();
  cmd->add_option("--epochs", o.epochs, "Total epochs (default 200, 90 on db12)");
  cmd->add_option("--checkpoint-every", o.checkpoint_every, "Snapshot period in epochs (0 = off)")
      ->capture_default_str();
  cmd->add_option("--val-fraction", o.val_fraction, "Validation share of the dataset")->capture_default_str();
  cmd->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--beta1", o.beta1, "Adam beta1")->capture_default_str();
  cmd->add_option("--beta2", o.beta2, "Adam beta2")->capture_default_str();
  cmd->add_option("--eps", o.eps, "Adam epsilon")->capture_default_str();
  cmd->add_option("--clip", o.clip, "Global-norm gradient clip (0 = off)")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Parameter initialization seed")->capture_default_str();
  cmd->add_flag("--no-carry-state", o.no_carry_state, "Reset recurrent state at every step");
}

constexpr int kDefaultEpochs = 200;
constexpr int kDefaultDb12Epochs = 90;

TrainConfig make_train_config(const TrainOptions& o, CellType cell, int units, const fs::path& out_dir,
                              std::uint64_t fingerprint, DatasetVariant variant) {
  TrainConfig cfg;
  cfg.model.cell_type = cell;
  cfg.model.hidden_units = units;
  cfg.model.num_layers = o.layers;
  cfg.model.embedding_dim = o.embedding;
  cfg.model.seed = o.seed;
  cfg.adam = {o.lr, o.beta1, o.beta2, o.eps, o.clip};
  cfg.batch_size = o.batch;
  cfg.seq_len = o.seq;
  cfg.epochs = o.epochs >= 0 ? o.epochs : variant == DatasetVariant::db12 ? kDefaultDb12Epochs : kDefaultEpochs;
  cfg.checkpoint_every = o.checkpoint_every;
  cfg.carry_state = !o.no_carry_state;
  cfg.output_dir = out_dir;
  cfg.dataset_fingerprint = fingerprint;
  return cfg;
}

std::uint64_t file_fingerprint(const fs::path& path) { return fnv1a64(read_file_bytes(path)); }

TrainResult train_one(const TrainOptions& o, CellType cell, int units, const fs::path& out_dir,
                      const std::string& resume, std::ostream& out) {
  const EncodedDataset ds = load_dataset(o.dataset);
  auto [train, val] = split_train_val(ds, o.val_fraction);
  const TrainConfig cfg = make_train_config(o, cell, units, out_dir, file_fingerprint(o.dataset), ds.variant);
  out << "training " << to_string(cell) << " units=" << units << " on " << to_string(ds.variant) << " ("
      << train.x.size() << " train / " << val.x.size() << " validation tokens, vocabulary " << ds.vocab.size()
      << ")\n";
  TrainResult result = resume.empty()
                           ? Trainer(cfg, std::move(train), std::move(val)).run()
                           : Trainer(cfg, std::move(train), std::move(val), load_checkpoint(resume)).run();
  char line[160];
  if (!result.curve.empty()) {
    const CurveRow& last = result.curve.back();
    std::snprintf(line, sizeof line, "epoch %d: train %.6f, validation %.6f; best validation %.6f at epoch %u\n",
                  last.epoch, last.train_loss, last.val_loss, result.best_val_loss, result.best_epoch);
    out << line;
  }
  return result;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return nlohmann::json::parse(f);
}

Melody parse_melody_arg(const std::string& text) {
  Melody melody;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("seed notes must look like pitch:duration");
    melody.push_back({std::stoi(item.substr(0, colon)), std::stoi(item.substr(colon + 1))});
  }
  if (melody.empty()) throw std::invalid_argument("seed melody is empty");
  return melody;
}

std::vector<fs::path> collect_midi(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in)) {
        const auto ext = e.path().extension().string();
        if (e.is_regular_file() && (ext == ".mid" || ext == ".midi")) found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::exists(in)) {
      files.emplace_back(in);
    } else {
      throw std::runtime_error("no such file or directory: " + in);
    }
  }
  return files;
}

nlohmann::json corpus_report(const std::vector<std::string>& names, std::span<const Melody> melodies,
                             const SpanConfig& spans) {
  const CorpusEvaluation eval = evaluate_corpus(melodies, spans);
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t k = 0; k < melodies.size(); ++k) {
    nlohmann::json row = {{"name", names[k]}, {"notes", melodies[k].size()}};
    if (eval.per_melody[k]) {
      row.update(to_json(*eval.per_melody[k]));
    } else {
      row["skipped"] = true;
    }
    per.push_back(row);
  }
  return {{"per_melody", per},
          {"stats", to_json(eval.stats)},
          {"skipped", eval.stats.skipped},
          {"config", {{"n", spans.span}, {"m", spans.step},
                      {"cmm_mode", spans.cmm_mode == CmmMode::global ? "global" : "per_span"}}}};
}

void print_reference(std::ostream& out) {
  const BaselineReference ref;
  MetricStats stats;
  stats.cmm = ref.cmm;
  stats.lm = ref.lm;
  stats.centr = ref.centr;
  out << format_stats_row("reference*", stats) << '\n'
      << "* published dataset evaluation of the original scraped corpus; for qualitative comparison only\n";
}

void configure_logging(const std::string& level) {
  static const bool initialized = [] {
    auto logger = spdlog::stderr_logger_mt("melodylab");
    logger->set_pattern("[%l] %v");
    spdlog::set_default_logger(logger);
    return true;
  }();
  (void)initialized;
  spdlog::set_level(spdlog::level::from_str(level));
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"melodylab: monophonic melody datasets, recurrent models and tonality metrics"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}))
      ->capture_default_str();

  // prepare
  std::string prepare_in, prepare_out;
  auto* prepare = app.add_subcommand("prepare", "MIDI directory -> control, interval and db12 datasets");
  prepare->add_option("--in", prepare_in, "Directory of MIDI files")->required()->check(CLI::ExistingDirectory);
  prepare->add_option("--out", prepare_out, "Output directory")->required();

  // baseline
  std::string baseline_in, baseline_out;
  SpanOptions baseline_spans;
  auto* baseline = app.add_subcommand("baseline", "Metric statistics of a cleaned MIDI corpus");
  baseline->add_option("--in", baseline_in, "Directory of MIDI files")->required()->check(CLI::ExistingDirectory);
  baseline->add_option("--out", baseline_out, "JSON report path");
  add_span_options(baseline, baseline_spans);

  // train
  TrainOptions train_opts;
  auto* train = app.add_subcommand("train", "Train one model on a dataset");
  add_train_options(train, train_opts, true);

  // sweep
  TrainOptions sweep_opts;
  std::vector<std::string> sweep_cells{"lstm", "gru"};
  std::vector<int> sweep_units{128, 256, 512, 1024, 2048};
  auto* sweep = app.add_subcommand("sweep", "Train every (cell, units) combination and keep each learning curve");
  add_train_options(sweep, sweep_opts, false);
  sweep->add_option("--cells", sweep_cells, "Cell types")->delimiter(',')->check(CLI::IsMember({"lstm", "gru"}))
      ->capture_default_str();
  sweep->add_option("--units", sweep_units, "Hidden unit counts")->delimiter(',')->capture_default_str();

  // sample
  std::string sample_ckpt, sample_dataset, sample_out, sample_name, sample_seed_melody;
  SamplerConfig sampler;
  SpanOptions sample_spans;
  auto* sample_cmd = app.add_subcommand("sample", "Generate songs from a checkpoint and score them");
  sample_cmd->add_option("--checkpoint", sample_ckpt, "Checkpoint file (.mmck)")->required()->check(CLI::ExistingFile);
  sample_cmd->add_option("--dataset", sample_dataset, "Dataset the checkpoint was trained on")
      ->required()
      ->check(CLI::ExistingFile);
  sample_cmd->add_option("--out", sample_out, "Output directory")->required();
  sample_cmd->add_option("--songs", sampler.songs, "Number of songs")->capture_default_str();
  sample_cmd->add_option("--notes", sampler.notes_to_generate, "Notes generated after the seed")->capture_default_str();
  sample_cmd->add_option("--temperature", sampler.temperature, "Softmax temperature (<= 0.01 is argmax)")
      ->capture_default_str();
  sample_cmd->add_option("--seed", sampler.rng_seed, "Sampling RNG seed")->capture_default_str();
  sample_cmd->add_option("--seed-melody", sample_seed_melody, "Seed as pitch:duration,... (default 62:8,64:4,65:4)");
  sample_cmd->add_option("--name", sample_name, "Model name in reports (default <variant>-<cell>)");
  add_span_options(sample_cmd, sample_spans);

  // evaluate
  std::vector<std::string> evaluate_in;
  std::string evaluate_out;
  SpanOptions evaluate_spans;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score MIDI files with CMM, LM and CENTR");
  evaluate_cmd->add_option("--in", evaluate_in, "MIDI files or directories")->required();
  evaluate_cmd->add_option("--out", evaluate_out, "JSON report path");
  add_span_options(evaluate_cmd, evaluate_spans);

  // compare
  std::vector<std::string> compare_reports;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "Table of generation reports with best means flagged");
  compare->add_option("--report", compare_reports, "Report or manifest JSON files")->required()->check(CLI::ExistingFile);
  compare->add_option("--out", compare_out, "JSON table path");

  // gradcheck
  double grad_tolerance = 1e-5;
  std::vector<int> grad_layers{1, 2};
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of LSTM and GRU gradients");
  gradcheck->add_option("--tolerance", grad_tolerance, "Maximum relative error")->capture_default_str();
  gradcheck->add_option("--layers", grad_layers, "Layer counts to check")->delimiter(',')->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  configure_logging(log_level);

  try {
    if (*prepare) {
      const Corpus raw = load_corpus(prepare_in);
      const Corpus corpus = clean(raw);
      out << "loaded " << raw.melodies.size() << " melodies, " << corpus.melodies.size() << " kept after cleaning\n";
      if (corpus.melodies.empty()) throw std::runtime_error("no melodies survive cleaning");
      fs::create_directories(prepare_out);
      for (DatasetVariant v : kAllVariants) {
        const EncodedDataset ds = build_dataset(v, corpus);
        const fs::path path = fs::path(prepare_out) / (std::string(to_string(v)) + ".mmtd");
        save_dataset(ds, path);
        out << path.string() << ": " << ds.song_count() << " songs, " << ds.x.size() << " tokens, vocabulary "
            << ds.vocab.size() << '\n';
      }
      return 0;
    }

    if (*baseline) {
      const Corpus corpus = clean(load_corpus(baseline_in));
      const SpanConfig spans = baseline_spans.config();
      const nlohmann::json report = corpus_report(corpus.names, corpus.melodies, spans);
      const MetricStats stats = corpus_stats(corpus.melodies, spans);
      out << format_stats_row("corpus", stats) << "  (" << stats.count << " melodies)\n";
      print_reference(out);
      if (!baseline_out.empty()) write_json(baseline_out, report);
      return 0;
    }

    if (*train) {
      train_one(train_opts, parse_cell_type(train_opts.cell), train_opts.units, train_opts.out, train_opts.resume,
                out);
      return 0;
    }

    if (*sweep) {
      fs::create_directories(sweep_opts.out);
      for (const auto& cell_name : sweep_cells) {
        for (int units : sweep_units) {
          const std::string tag = cell_name + "_" + std::to_string(units);
          const fs::path run_dir = fs::path(sweep_opts.out) / tag;
          train_one(sweep_opts, parse_cell_type(cell_name), units, run_dir, "", out);
          fs::copy_file(run_dir / "curve.csv", fs::path(sweep_opts.out) / ("curve_" + tag + ".csv"),
                        fs::copy_options::overwrite_existing);
        }
      }
      return 0;
    }

    if (*sample_cmd) {
      const EncodedDataset ds = load_dataset(sample_dataset);
      const Checkpoint ckpt = load_checkpoint(sample_ckpt);
      ModelConfig expected = ckpt.model;
      expected.vocab_size = static_cast<int>(ds.vocab.size());
      check_compatible(ckpt, expected, file_fingerprint(sample_dataset));
      if (!sample_seed_melody.empty()) sampler.seed_melody = parse_melody_arg(sample_seed_melody);
      const SpanConfig spans = sample_spans.config();
      const MelodyModel model{ckpt.params, ds.vocab, ds.variant};
      const std::vector<Melody> songs = generate_corpus(model, sampler);

      const std::string name = sample_name.empty()
                                   ? std::string(to_string(ds.variant)) + "-" + std::string(to_string(ckpt.model.cell_type))
                                   : sample_name;
      GenerationReport report =
          make_report(name, std::string(to_string(ds.variant)), std::string(to_string(ckpt.model.cell_type)), songs,
                      sampler, spans);
      fs::create_directories(sample_out);
      nlohmann::json files = nlohmann::json::array();
      for (std::size_t k = 0; k < songs.size(); ++k) {
        char file[32];
        std::snprintf(file, sizeof file, "song_%03zu.mid", k);
        write_file_bytes(fs::path(sample_out) / file, write_midi(songs[k]));
        files.push_back(file);
      }
      nlohmann::json manifest = to_json(report);
      manifest["files"] = files;
      manifest["checkpoint"] = sample_ckpt;
      manifest["checkpoint_epoch"] = ckpt.epoch;
      write_json(fs::path(sample_out) / "manifest.json", manifest);
      out << format_stats_row(name, report.stats) << '\n'
          << "representative song: " << static_cast<const std::string&>(files[report.representative_index]) << '\n';
      return 0;
    }

    if (*evaluate_cmd) {
      const SpanConfig spans = evaluate_spans.config();
      std::vector<std::string> names;
      std::vector<Melody> melodies;
      for (const fs::path& file : collect_midi(evaluate_in)) {
        names.push_back(file.string());
        melodies.push_back(load_melody(file));
      }
      const nlohmann::json report = corpus_report(names, melodies, spans);
      const MetricStats stats = corpus_stats(melodies, spans);
      out << format_stats_row("evaluated", stats) << "  (" << stats.count << " melodies, " << stats.skipped
          << " skipped)\n";
      if (!evaluate_out.empty()) write_json(evaluate_out, report);
      return 0;
    }

    if (*compare) {
      std::vector<GenerationReport> reports;
      for (const auto& path : compare_reports) reports.push_back(report_from_json(read_json(path)));
      const ComparisonTable table = compare_models(reports);
      out << table.text;
      print_reference(out);
      if (!compare_out.empty()) {
        nlohmann::json j = table.json;
        const BaselineReference ref;
        j["reference"] = {{"cmm", {{"mean", ref.cmm.mean}, {"std", ref.cmm.std}}},
                          {"lm", {{"mean", ref.lm.mean}, {"std", ref.lm.std}}},
                          {"centr", {{"mean", ref.centr.mean}, {"std", ref.centr.std}}}};
        write_json(compare_out, j);
      }
      return 0;
    }

    if (*gradcheck) {
      bool all_passed = true;
      for (CellType cell : {CellType::lstm, CellType::gru}) {
        for (int layers : grad_layers) {
          GradCheckConfig cfg;
          cfg.model.cell_type = cell;
          cfg.model.num_layers = layers;
          cfg.tolerance = grad_tolerance;
          const GradCheckReport report = grad_check(cfg);
          char line[128];
          std::snprintf(line, sizeof line, "%-4s layers=%d  max relative error %.3e  %s\n",
                        std::string(to_string(cell)).c_str(), layers, report.max_relative_error,
                        report.passed ? "ok" : "FAILED");
          out << line;
          all_passed = all_passed && report.passed;
        }
      }
      return all_passed ? 0 : 1;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace melodylab
