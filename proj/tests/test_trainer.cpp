#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "melodylab/trainer.h"

using namespace melodylab;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("melodylab_test_" + name);
  fs::remove_all(dir);
  return dir;
}

/// Several short songs over a small vocabulary.
EncodedDataset tiny_dataset(int songs = 12, int notes = 40) {
  std::vector<std::vector<Token>> tokens;
  for (int s = 0; s < songs; ++s) {
    std::vector<Token> song;
    for (int k = 0; k < notes; ++k) {
      song.push_back({TokenKind::absolute, 60 + (k * (s + 1)) % 7, k % 3 == 0 ? 8 : 4});
    }
    tokens.push_back(song);
  }
  return encode_songs(DatasetVariant::control, tokens);
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.model = {CellType::gru, 12, 1, 6, 0, 5};
  cfg.batch_size = 4;
  cfg.seq_len = 20;
  cfg.epochs = 3;
  cfg.checkpoint_every = 1;
  return cfg;
}

std::vector<std::uint32_t> iota_tokens(std::size_t n) {
  std::vector<std::uint32_t> x(n);
  std::iota(x.begin(), x.end(), 0u);
  return x;
}

}  // namespace

TEST(Batches, PlanArithmetic) {
  EXPECT_EQ(plan_batches(6400, 64, 100).lane_length, 100u);
  EXPECT_EQ(plan_batches(6400, 64, 100).steps, 1u);
  EXPECT_EQ(plan_batches(13000, 64, 100).lane_length, 203u);
  EXPECT_EQ(plan_batches(13000, 64, 100).steps, 2u);
  EXPECT_THROW(plan_batches(6399, 64, 100), std::invalid_argument);
  EXPECT_THROW(plan_batches(100, 0, 10), std::invalid_argument);
}

TEST(Batches, TimeMajorLanes) {
  const auto x = iota_tokens(13);
  const auto y = shift_targets(x);
  // 3 lanes of 4, steps of 2; token 12 dropped.
  const auto steps = make_batches(x, y, 3, 2);
  ASSERT_EQ(steps.size(), 2u);
  EXPECT_EQ(steps[0].x, (std::vector<std::uint32_t>{0, 4, 8, 1, 5, 9}));
  EXPECT_EQ(steps[1].x, (std::vector<std::uint32_t>{2, 6, 10, 3, 7, 11}));
  EXPECT_EQ(steps[1].y, (std::vector<std::uint32_t>{3, 7, 11, 4, 8, 12}));
}

TEST(Batches, CoverageWithoutDuplicates) {
  const auto x = iota_tokens(13000);
  const auto steps = make_batches(x, shift_targets(x), 64, 100);
  std::set<std::uint32_t> seen;
  std::size_t total = 0;
  for (const auto& s : steps) {
    total += s.x.size();
    seen.insert(s.x.begin(), s.x.end());
  }
  EXPECT_EQ(total, 64u * 200u);
  EXPECT_EQ(seen.size(), total);
  // Every consumed token lies in the prefix of 64 lanes of 203.
  EXPECT_LT(*seen.rbegin(), 64u * 203u);
}

TEST(Validate, UniformModelGivesLogV) {
  const ModelConfig cfg{CellType::lstm, 8, 1, 4, 10, 0};
  const auto p = ModelParams<float>::zeros(cfg);
  const auto x = iota_tokens(10);
  EXPECT_NEAR(validate(p, x, shift_targets(x), 4, 3), std::log(10.0), 1e-5);
}

TEST(Validate, PureAndCoversShortStreams) {
  const ModelConfig cfg{CellType::gru, 8, 1, 4, 10, 1};
  const auto p = init_params<float>(cfg);
  const auto x = iota_tokens(10);
  const auto y = shift_targets(x);
  const double a = validate(p, x, y, 64, 100);  // shorter than one window: one lane
  EXPECT_EQ(a, validate(p, x, y, 64, 100));
  EXPECT_TRUE(std::isfinite(a));
}

TEST(Curve, CsvRoundtrip) {
  const fs::path dir = fresh_dir("curve");
  fs::create_directories(dir);
  const LearningCurve curve = {{1, 2.5, 2.75}, {2, 1.125, 1.5}};
  write_curve_csv(curve, dir / "curve.csv");
  EXPECT_EQ(read_curve_csv(dir / "curve.csv"), curve);
}

TEST(Checkpoint, SerializeRoundtripIsBitwise) {
  const EncodedDataset ds = tiny_dataset();
  const auto [train, val] = split_train_val(ds, 0.2);
  Trainer trainer(tiny_config(), train, val);
  trainer.train_epoch();
  const Checkpoint ckpt = trainer.checkpoint();
  const auto bytes = serialize_checkpoint(ckpt);
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.params.embedding, ckpt.params.embedding);
  EXPECT_EQ(back.moments.v.output_weights, ckpt.moments.v.output_weights);
  EXPECT_EQ(back.adam_step, ckpt.adam_step);
  EXPECT_EQ(back.rng_state, ckpt.rng_state);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const auto [train, val] = split_train_val(tiny_dataset(), 0.2);
  auto bytes = serialize_checkpoint(Trainer(tiny_config(), train, val).checkpoint());
  auto bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), CheckpointError);
  bad = bytes;
  bad.resize(bytes.size() / 2);
  EXPECT_THROW(deserialize_checkpoint(bad), std::runtime_error);
}

TEST(Checkpoint, VocabularyMismatchNamesBothSizes) {
  const auto [train, val] = split_train_val(tiny_dataset(), 0.2);
  const Checkpoint ckpt = Trainer(tiny_config(), train, val).checkpoint();
  ModelConfig expected = ckpt.model;
  expected.vocab_size += 3;
  try {
    check_compatible(ckpt, expected, 0);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find(std::to_string(ckpt.model.vocab_size)), std::string::npos) << what;
    EXPECT_NE(what.find(std::to_string(expected.vocab_size)), std::string::npos) << what;
  }
  Checkpoint stamped = ckpt;
  stamped.dataset_fingerprint = 42;
  EXPECT_THROW(check_compatible(stamped, ckpt.model, 43), CheckpointError);
  EXPECT_NO_THROW(check_compatible(stamped, ckpt.model, 42));
  EXPECT_NO_THROW(check_compatible(stamped, ckpt.model, 0));
}

TEST(Trainer, ZeroEpochsWritesInitialCheckpointOnly) {
  const auto [train, val] = split_train_val(tiny_dataset(), 0.2);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 0;
  cfg.output_dir = fresh_dir("zero_epochs");
  const TrainResult r = Trainer(cfg, train, val).run();
  EXPECT_TRUE(r.curve.empty());
  EXPECT_TRUE(fs::exists(cfg.output_dir / "epoch_0000.mmck"));
  EXPECT_TRUE(read_curve_csv(cfg.output_dir / "curve.csv").empty());
}

TEST(Trainer, WritesCurveAndSnapshots) {
  const auto [train, val] = split_train_val(tiny_dataset(), 0.2);
  TrainConfig cfg = tiny_config();
  cfg.checkpoint_every = 2;
  cfg.epochs = 4;
  cfg.output_dir = fresh_dir("snapshots");
  const TrainResult r = Trainer(cfg, train, val).run();
  ASSERT_EQ(r.curve.size(), 4u);
  for (int e = 0; e < 4; ++e) EXPECT_EQ(r.curve[static_cast<std::size_t>(e)].epoch, e + 1);
  EXPECT_EQ(read_curve_csv(cfg.output_dir / "curve.csv").size(), 4u);
  for (const char* name : {"epoch_0000.mmck", "epoch_0002.mmck", "epoch_0004.mmck", "best.mmck", "last.mmck"}) {
    EXPECT_TRUE(fs::exists(cfg.output_dir / name)) << name;
  }
  EXPECT_FALSE(fs::exists(cfg.output_dir / "epoch_0001.mmck"));
  const Checkpoint best = load_checkpoint(cfg.output_dir / "best.mmck");
  EXPECT_EQ(best.epoch, r.best_epoch);
  double lowest = r.curve[0].val_loss;
  for (const auto& row : r.curve) lowest = std::min(lowest, row.val_loss);
  EXPECT_EQ(r.best_val_loss, lowest);
}

TEST(Trainer, IdenticalRunsGiveIdenticalCurves) {
  const auto [train, val] = split_train_val(tiny_dataset(), 0.2);
  const TrainResult a = Trainer(tiny_config(), train, val).run();
  const TrainResult b = Trainer(tiny_config(), train, val).run();
  EXPECT_EQ(a.curve, b.curve);
}

TEST(Trainer, ResumeContinuesExactly) {
  const auto [train, val] = split_train_val(tiny_dataset(), 0.2);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 5;
  cfg.output_dir = fresh_dir("resume_a");
  const TrainResult full = Trainer(cfg, train, val).run();

  TrainConfig first = cfg;
  first.epochs = 2;
  first.output_dir = fresh_dir("resume_b");
  Trainer(first, train, val).run();
  const Checkpoint at2 = load_checkpoint(first.output_dir / "last.mmck");
  EXPECT_EQ(at2.epoch, 2u);
  TrainConfig rest = cfg;
  rest.output_dir = first.output_dir;
  const TrainResult resumed = Trainer(rest, train, val, at2).run();

  ASSERT_EQ(resumed.curve.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(resumed.curve[k], full.curve[k + 2]);
  // The on-disk curve keeps the first two rows and appends the rest.
  const LearningCurve csv = read_curve_csv(rest.output_dir / "curve.csv");
  ASSERT_EQ(csv.size(), 5u);
  EXPECT_EQ(csv[4].epoch, 5);
  EXPECT_EQ(serialize_checkpoint(resumed.last), serialize_checkpoint(full.last));
}

TEST(Trainer, ResumeRejectsOtherDataset) {
  const auto [train, val] = split_train_val(tiny_dataset(), 0.2);
  TrainConfig cfg = tiny_config();
  cfg.dataset_fingerprint = 11;
  Checkpoint ckpt = Trainer(cfg, train, val).checkpoint();
  cfg.dataset_fingerprint = 12;
  EXPECT_THROW(Trainer(cfg, train, val, ckpt), CheckpointError);
}

TEST(Trainer, LearnsTinyCorpus) {
  const auto [train, val] = split_train_val(tiny_dataset(), 0.2);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 30;
  const TrainResult r = Trainer(cfg, train, val).run();
  EXPECT_LT(r.curve.back().train_loss, r.curve.front().train_loss);
  for (const auto& row : r.curve) {
    EXPECT_TRUE(std::isfinite(row.train_loss));
    EXPECT_TRUE(std::isfinite(row.val_loss));
  }
}

TEST(Trainer, ValidationEqualsTrainingOnSameData) {
  // Frozen weights, identical streams: the epoch's training loss and the
  // validation pass see exactly the same batches and state.
  const EncodedDataset ds = tiny_dataset(8, 50);
  TrainConfig cfg = tiny_config();
  cfg.batch_size = 8;
  cfg.seq_len = 50;
  cfg.adam.learning_rate = 0.0;
  Trainer trainer(cfg, ds, ds);
  const double before = trainer.validation_loss();
  const double loss = trainer.train_epoch();
  EXPECT_NEAR(trainer.validation_loss(), loss, 1e-6);
  EXPECT_EQ(trainer.validation_loss(), before);
}

TEST(Fingerprint, DependsOnContent) {
  const EncodedDataset a = tiny_dataset();
  EncodedDataset b = a;
  EXPECT_EQ(dataset_fingerprint(a), dataset_fingerprint(b));
  std::swap(b.x[0], b.x[1]);
  EXPECT_NE(dataset_fingerprint(a), dataset_fingerprint(b));
}
