/**
 * @file trainer.h
 * @brief Lane batching, the epoch loop, validation, checkpoints and learning curves.
 */

#ifndef MELODYLAB_TRAINER_H
#define MELODYLAB_TRAINER_H

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "melodylab/dataset.h"
#include "melodylab/nn.h"

namespace melodylab {

struct TrainConfig {
  ModelConfig model;
  AdamConfig adam;
  int batch_size = 64;
  int seq_len = 100;
  int epochs = 200;
  /// Write epoch_NNNN.mmck every this many epochs; 0 disables periodic snapshots.
  int checkpoint_every = 10;
  /// Carry recurrent state across the steps of an epoch (reset between epochs).
  bool carry_state = true;
  /// Where curve.csv and checkpoints go; empty keeps everything in memory.
  std::filesystem::path output_dir;
  std::uint64_t dataset_fingerprint = 0;
};

/// One training step: seq_len x lanes token indices, time-major.
struct BatchStep {
  std::vector<std::uint32_t> x;
  std::vector<std::uint32_t> y;
};

struct BatchPlan {
  std::size_t lane_length = 0;
  std::size_t steps = 0;
};

/// Lanes of floor(n / batch) contiguous tokens, floor(lane / seq_len) steps.
/// Throws std::invalid_argument when n < batch * seq_len.
BatchPlan plan_batches(std::size_t n, int batch_size, int seq_len);

/// Lane b covers x[b * lane_length, (b + 1) * lane_length); step s reads lane
/// positions [s * seq_len, (s + 1) * seq_len) of every lane. Tail tokens are dropped.
std::vector<BatchStep> make_batches(std::span<const std::uint32_t> x, std::span<const std::uint32_t> y,
                                    int batch_size, int seq_len);

/// Mean cross-entropy (nats) over the whole stream from a zero state. Uses
/// min(batch_size, n / seq_len) lanes (at least one), each read in chunks of
/// seq_len with state carried; the final chunk of a lane may be shorter.
double validate(const ModelParams<float>& params, std::span<const std::uint32_t> x,
                std::span<const std::uint32_t> y, int batch_size, int seq_len);

struct CurveRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;

  bool operator==(const CurveRow&) const = default;
};

using LearningCurve = std::vector<CurveRow>;

/// `epoch,train_loss,val_loss` with six decimals.
void write_curve_csv(const LearningCurve& curve, const std::filesystem::path& path);
LearningCurve read_curve_csv(const std::filesystem::path& path);

struct Checkpoint {
  ModelConfig model;
  std::uint64_t dataset_fingerprint = 0;
  std::uint32_t epoch = 0;
  std::uint64_t adam_step = 0;
  double best_val_loss = 0.0;
  std::uint32_t best_epoch = 0;
  /// Trainer RNG state, textual std::mt19937_64 form.
  std::string rng_state;
  ModelParams<float> params;
  AdamMoments<float> moments;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws CheckpointError naming both values when the checkpoint does not fit the
/// expected model or dataset. A zero fingerprint on either side is not checked.
void check_compatible(const Checkpoint& ckpt, const ModelConfig& expected, std::uint64_t fingerprint);

/// Thrown when training produces a non-finite loss; the last good checkpoint is
/// written to `last.mmck` first when an output directory is set.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  LearningCurve curve;
  Checkpoint last;
  std::uint32_t best_epoch = 0;
  double best_val_loss = 0.0;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, EncodedDataset train, EncodedDataset val);
  /// Continues from `ckpt`; the model config comes from the checkpoint.
  Trainer(TrainConfig cfg, EncodedDataset train, EncodedDataset val, Checkpoint ckpt);

  /// Trains up to cfg.epochs total epochs.
  TrainResult run();
  /// One pass over the training lanes; returns the mean step loss.
  double train_epoch();
  double validation_loss() const;

  Checkpoint checkpoint() const;
  const ModelParams<float>& params() const { return params_; }
  std::uint32_t epoch() const { return epoch_; }

 private:
  void write_snapshot(const Checkpoint& ckpt, const std::string& name) const;

  TrainConfig cfg_;
  EncodedDataset train_;
  EncodedDataset val_;
  std::vector<BatchStep> batches_;
  ModelParams<float> params_;
  AdamMoments<float> moments_;
  std::uint64_t adam_step_ = 0;
  std::uint32_t epoch_ = 0;
  double best_val_loss_ = 0.0;
  std::uint32_t best_epoch_ = 0;
  std::string rng_state_;
};

/// Dataset file fingerprint as stored in checkpoints.
std::uint64_t dataset_fingerprint(const EncodedDataset& ds);

}  // namespace melodylab

#endif  // MELODYLAB_TRAINER_H
