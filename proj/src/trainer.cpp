/**
 * @file trainer.cpp
 * @brief Stateful lane training with Adam, validation and the MMCK checkpoint format.
 */

#include "melodylab/trainer.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "melodylab/binary_io.h"

namespace melodylab {

namespace {

constexpr char kCheckpointMagic[] = "MMCK";

std::string snapshot_name(std::uint32_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04u.mmck", epoch);
  return buf;
}

void write_blocks(BinaryWriter& w, const std::vector<ParamBlock<const float>>& blocks, const std::string& prefix) {
  for (const auto& b : blocks) {
    w.str(prefix + b.name);
    w.u32(static_cast<std::uint32_t>(b.rows));
    w.u32(static_cast<std::uint32_t>(b.cols));
    w.u64(static_cast<std::uint64_t>(b.size()));
    for (Eigen::Index k = 0; k < b.size(); ++k) w.f32(b.data[k]);
  }
}

void read_blocks(BinaryReader& r, std::vector<ParamBlock<float>> blocks, const std::string& prefix) {
  for (auto& b : blocks) {
    const std::string name = r.str();
    if (name != prefix + b.name) throw CheckpointError("expected block '" + prefix + b.name + "', found '" + name + "'");
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    const std::uint64_t length = r.u64();
    if (rows != b.rows || cols != b.cols || length != static_cast<std::uint64_t>(b.size())) {
      throw CheckpointError("block '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                            ", expected " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
    }
    for (Eigen::Index k = 0; k < b.size(); ++k) b.data[k] = r.f32();
  }
}

}  // namespace

BatchPlan plan_batches(std::size_t n, int batch_size, int seq_len) {
  if (batch_size < 1 || seq_len < 1) throw std::invalid_argument("batch size and sequence length must be positive");
  const auto needed = static_cast<std::size_t>(batch_size) * static_cast<std::size_t>(seq_len);
  if (n < needed) {
    throw std::invalid_argument("dataset of " + std::to_string(n) + " tokens is smaller than batch_size * seq_len = " +
                                std::to_string(needed));
  }
  BatchPlan plan;
  plan.lane_length = n / static_cast<std::size_t>(batch_size);
  plan.steps = plan.lane_length / static_cast<std::size_t>(seq_len);
  return plan;
}

std::vector<BatchStep> make_batches(std::span<const std::uint32_t> x, std::span<const std::uint32_t> y,
                                    int batch_size, int seq_len) {
  if (x.size() != y.size()) throw std::invalid_argument("X and Y lengths differ");
  const BatchPlan plan = plan_batches(x.size(), batch_size, seq_len);
  const auto lanes = static_cast<std::size_t>(batch_size);
  const auto len = static_cast<std::size_t>(seq_len);
  std::vector<BatchStep> steps(plan.steps);
  for (std::size_t s = 0; s < plan.steps; ++s) {
    auto& step = steps[s];
    step.x.resize(len * lanes);
    step.y.resize(len * lanes);
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t b = 0; b < lanes; ++b) {
        const std::size_t src = b * plan.lane_length + s * len + t;
        step.x[t * lanes + b] = x[src];
        step.y[t * lanes + b] = y[src];
      }
    }
  }
  return steps;
}

double validate(const ModelParams<float>& params, std::span<const std::uint32_t> x,
                std::span<const std::uint32_t> y, int batch_size, int seq_len) {
  if (x.empty() || x.size() != y.size()) throw std::invalid_argument("validation stream is empty or mismatched");
  if (batch_size < 1 || seq_len < 1) throw std::invalid_argument("batch size and sequence length must be positive");
  const std::size_t lanes =
      std::clamp<std::size_t>(x.size() / static_cast<std::size_t>(seq_len), 1, static_cast<std::size_t>(batch_size));
  const std::size_t lane_length = x.size() / lanes;
  ModelState<float> state = ModelState<float>::zeros(params.config, static_cast<int>(lanes));

  double total = 0.0;
  std::size_t count = 0;
  std::vector<std::uint32_t> cx, cy;
  for (std::size_t start = 0; start < lane_length; start += static_cast<std::size_t>(seq_len)) {
    const std::size_t len = std::min<std::size_t>(seq_len, lane_length - start);
    cx.resize(len * lanes);
    cy.resize(len * lanes);
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t b = 0; b < lanes; ++b) {
        cx[t * lanes + b] = x[b * lane_length + start + t];
        cy[t * lanes + b] = y[b * lane_length + start + t];
      }
    }
    auto fwd = forward_sequence(params, state, cx, cy, static_cast<int>(lanes));
    total += static_cast<double>(fwd.loss) * static_cast<double>(cx.size());
    count += cx.size();
    state = std::move(fwd.state);
  }
  return total / static_cast<double>(count);
}

void write_curve_csv(const LearningCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,train_loss,val_loss\n";
  char line[96];
  for (const CurveRow& row : curve) {
    std::snprintf(line, sizeof line, "%d,%.6f,%.6f\n", row.epoch, row.train_loss, row.val_loss);
    out << line;
  }
}

LearningCurve read_curve_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "epoch,train_loss,val_loss") throw std::runtime_error("unexpected curve header in " + path.string());
  LearningCurve curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    CurveRow row;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf", &row.epoch, &row.train_loss, &row.val_loss) != 3) {
      throw std::runtime_error("malformed curve row: " + line);
    }
    curve.push_back(row);
  }
  return curve;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  BinaryWriter w;
  w.raw(std::string_view(kCheckpointMagic, 4));
  w.u16(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(ckpt.model.cell_type));
  w.u32(static_cast<std::uint32_t>(ckpt.model.hidden_units));
  w.u32(static_cast<std::uint32_t>(ckpt.model.num_layers));
  w.u32(static_cast<std::uint32_t>(ckpt.model.embedding_dim));
  w.u32(static_cast<std::uint32_t>(ckpt.model.vocab_size));
  w.u64(ckpt.model.seed);
  w.u64(ckpt.dataset_fingerprint);
  w.u32(ckpt.epoch);
  w.u64(ckpt.adam_step);
  w.f64(ckpt.best_val_loss);
  w.u32(ckpt.best_epoch);
  w.str(ckpt.rng_state);
  const auto params = ckpt.params.blocks();
  w.u32(static_cast<std::uint32_t>(3 * params.size()));
  write_blocks(w, params, "");
  write_blocks(w, ckpt.moments.m.blocks(), "adam.m.");
  write_blocks(w, ckpt.moments.v.blocks(), "adam.v.");
  return w.take();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  BinaryReader r(bytes);
  try {
    const std::string magic = r.raw(4);
    if (magic != std::string_view(kCheckpointMagic, 4)) {
      throw CheckpointError("bad checkpoint magic '" + magic + "', expected 'MMCK'");
    }
    const std::uint16_t version = r.u16();
    if (version != kCheckpointVersion) {
      throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported");
    }
    Checkpoint ckpt;
    const std::uint8_t cell = r.u8();
    if (cell > 1) throw CheckpointError("unknown cell type code " + std::to_string(cell));
    ckpt.model.cell_type = static_cast<CellType>(cell);
    ckpt.model.hidden_units = static_cast<int>(r.u32());
    ckpt.model.num_layers = static_cast<int>(r.u32());
    ckpt.model.embedding_dim = static_cast<int>(r.u32());
    ckpt.model.vocab_size = static_cast<int>(r.u32());
    ckpt.model.seed = r.u64();
    validate(ckpt.model);
    ckpt.dataset_fingerprint = r.u64();
    ckpt.epoch = r.u32();
    ckpt.adam_step = r.u64();
    ckpt.best_val_loss = r.f64();
    ckpt.best_epoch = r.u32();
    ckpt.rng_state = r.str();
    ckpt.params = ModelParams<float>::zeros(ckpt.model);
    ckpt.moments = AdamMoments<float>::zeros(ckpt.model);
    const std::uint32_t blocks = r.u32();
    if (blocks != 3 * ckpt.params.blocks().size()) {
      throw CheckpointError("checkpoint holds " + std::to_string(blocks) + " blocks, model needs " +
                            std::to_string(3 * ckpt.params.blocks().size()));
    }
    read_blocks(r, ckpt.params.blocks(), "");
    read_blocks(r, ckpt.moments.m.blocks(), "adam.m.");
    read_blocks(r, ckpt.moments.v.blocks(), "adam.v.");
    if (r.remaining() != 0) throw CheckpointError("trailing bytes after checkpoint");
    return ckpt;
  } catch (const TruncatedDataError& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file_bytes(path)); }

void check_compatible(const Checkpoint& ckpt, const ModelConfig& expected, std::uint64_t fingerprint) {
  if (ckpt.model.vocab_size != expected.vocab_size) {
    throw CheckpointError("checkpoint vocabulary size " + std::to_string(ckpt.model.vocab_size) +
                          " does not match dataset vocabulary size " + std::to_string(expected.vocab_size));
  }
  if (ckpt.model.cell_type != expected.cell_type || ckpt.model.hidden_units != expected.hidden_units ||
      ckpt.model.num_layers != expected.num_layers || ckpt.model.embedding_dim != expected.embedding_dim) {
    throw CheckpointError("checkpoint model " + std::string(to_string(ckpt.model.cell_type)) + "/" +
                          std::to_string(ckpt.model.hidden_units) + " does not match requested " +
                          std::string(to_string(expected.cell_type)) + "/" + std::to_string(expected.hidden_units));
  }
  if (fingerprint != 0 && ckpt.dataset_fingerprint != 0 && ckpt.dataset_fingerprint != fingerprint) {
    throw CheckpointError("checkpoint was trained on a different dataset (fingerprint mismatch)");
  }
}

std::uint64_t dataset_fingerprint(const EncodedDataset& ds) { return fnv1a64(serialize_dataset(ds)); }

Trainer::Trainer(TrainConfig cfg, EncodedDataset train, EncodedDataset val)
    : cfg_(std::move(cfg)), train_(std::move(train)), val_(std::move(val)) {
  if (val_.x.empty()) throw std::invalid_argument("validation split is empty");
  cfg_.model.vocab_size = static_cast<int>(train_.vocab.size());
  if (cfg_.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  batches_ = make_batches(train_.x, train_.y, cfg_.batch_size, cfg_.seq_len);
  params_ = init_params<float>(cfg_.model);
  moments_ = AdamMoments<float>::zeros(cfg_.model);
  best_val_loss_ = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(cfg_.model.seed ^ 0x9E3779B97F4A7C15ULL);
  std::ostringstream os;
  os << rng;
  rng_state_ = os.str();
}

Trainer::Trainer(TrainConfig cfg, EncodedDataset train, EncodedDataset val, Checkpoint ckpt)
    : cfg_(std::move(cfg)), train_(std::move(train)), val_(std::move(val)) {
  if (val_.x.empty()) throw std::invalid_argument("validation split is empty");
  ModelConfig expected = ckpt.model;
  expected.vocab_size = static_cast<int>(train_.vocab.size());
  check_compatible(ckpt, expected, cfg_.dataset_fingerprint);
  cfg_.model = ckpt.model;
  batches_ = make_batches(train_.x, train_.y, cfg_.batch_size, cfg_.seq_len);
  params_ = std::move(ckpt.params);
  moments_ = std::move(ckpt.moments);
  adam_step_ = ckpt.adam_step;
  epoch_ = ckpt.epoch;
  best_val_loss_ = ckpt.best_val_loss;
  best_epoch_ = ckpt.best_epoch;
  rng_state_ = std::move(ckpt.rng_state);
}

double Trainer::train_epoch() {
  const int lanes = cfg_.batch_size;
  ModelState<float> state = ModelState<float>::zeros(cfg_.model, lanes);
  double total = 0.0;
  for (const BatchStep& step : batches_) {
    if (!cfg_.carry_state) state = ModelState<float>::zeros(cfg_.model, lanes);
    auto fwd = forward_sequence(params_, state, step.x, step.y, lanes);
    if (!std::isfinite(fwd.loss)) {
      throw NonFiniteError("non-finite training loss at epoch " + std::to_string(epoch_ + 1));
    }
    const ModelGrads<float> grads = backward_sequence(params_, fwd.cache);
    adam_step(params_, grads, moments_, ++adam_step_, cfg_.adam);
    total += fwd.loss;
    state = std::move(fwd.state);
  }
  return batches_.empty() ? 0.0 : total / static_cast<double>(batches_.size());
}

double Trainer::validation_loss() const { return validate(params_, val_.x, val_.y, cfg_.batch_size, cfg_.seq_len); }

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.model = cfg_.model;
  ckpt.dataset_fingerprint = cfg_.dataset_fingerprint;
  ckpt.epoch = epoch_;
  ckpt.adam_step = adam_step_;
  ckpt.best_val_loss = best_val_loss_;
  ckpt.best_epoch = best_epoch_;
  ckpt.rng_state = rng_state_;
  ckpt.params = params_;
  ckpt.moments = moments_;
  return ckpt;
}

void Trainer::write_snapshot(const Checkpoint& ckpt, const std::string& name) const {
  if (cfg_.output_dir.empty()) return;
  save_checkpoint(ckpt, cfg_.output_dir / name);
}

TrainResult Trainer::run() {
  const auto curve_path = cfg_.output_dir.empty() ? std::filesystem::path() : cfg_.output_dir / "curve.csv";
  LearningCurve file_curve;
  if (!cfg_.output_dir.empty()) {
    std::filesystem::create_directories(cfg_.output_dir);
    if (epoch_ > 0 && std::filesystem::exists(curve_path)) {
      for (const CurveRow& row : read_curve_csv(curve_path)) {
        if (row.epoch <= static_cast<int>(epoch_)) file_curve.push_back(row);
      }
    }
    if (epoch_ == 0) write_snapshot(checkpoint(), snapshot_name(0));
  }

  TrainResult result;
  while (epoch_ < static_cast<std::uint32_t>(cfg_.epochs)) {
    double train_loss = 0.0;
    double val_loss = 0.0;
    try {
      train_loss = train_epoch();
      val_loss = validation_loss();
    } catch (const NonFiniteError& e) {
      throw TrainingAborted(std::string(e.what()) + "; last good checkpoint is epoch " + std::to_string(epoch_));
    }
    ++epoch_;
    if (!std::isfinite(val_loss)) {
      throw TrainingAborted("non-finite validation loss at epoch " + std::to_string(epoch_));
    }
    result.curve.push_back({static_cast<int>(epoch_), train_loss, val_loss});
    spdlog::info("epoch {:4d}  train {:.6f}  val {:.6f}", epoch_, train_loss, val_loss);

    if (val_loss < best_val_loss_) {
      best_val_loss_ = val_loss;
      best_epoch_ = epoch_;
    }
    if (!cfg_.output_dir.empty()) {
      const Checkpoint ckpt = checkpoint();
      if (best_epoch_ == epoch_) write_snapshot(ckpt, "best.mmck");
      if (cfg_.checkpoint_every > 0 && epoch_ % static_cast<std::uint32_t>(cfg_.checkpoint_every) == 0) {
        write_snapshot(ckpt, snapshot_name(epoch_));
      }
      write_snapshot(ckpt, "last.mmck");
      file_curve.push_back(result.curve.back());
      write_curve_csv(file_curve, curve_path);
    }
  }
  if (!cfg_.output_dir.empty() && !std::filesystem::exists(curve_path)) write_curve_csv(file_curve, curve_path);

  result.last = checkpoint();
  result.best_epoch = best_epoch_;
  result.best_val_loss = best_val_loss_;
  return result;
}

}  // namespace melodylab
