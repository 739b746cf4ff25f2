/**
 * @file nn.h
 * @brief Embedding -> stacked LSTM/GRU -> dense -> softmax cross-entropy, with
 *        truncated backpropagation through time, Adam and a finite-difference
 *        gradient check.
 *
 * Everything is templated on the scalar type; training runs in float and the
 * gradient check in double. Explicit instantiations for both live in nn.cpp.
 *
 * Sequences are time-major: entry `t * lanes + b` is step t of batch lane b, and
 * matrices holding per-step activations have one column per such entry.
 */

#ifndef MELODYLAB_NN_H
#define MELODYLAB_NN_H

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace melodylab {

enum class CellType : std::uint8_t { lstm = 0, gru = 1 };

std::string_view to_string(CellType cell);
CellType parse_cell_type(std::string_view name);
/// Gate blocks stacked in a layer's weight matrices: 4 (i, f, g, o) for LSTM,
/// 3 (z, r, candidate) for GRU.
int gate_count(CellType cell);

struct ModelConfig {
  CellType cell_type = CellType::lstm;
  int hidden_units = 128;
  int num_layers = 1;
  int embedding_dim = 64;
  int vocab_size = 0;
  std::uint64_t seed = 0;

  bool operator==(const ModelConfig&) const = default;
};

void validate(const ModelConfig& cfg);

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct LayerParams {
  Matrix<T> input_weights;      ///< (gates * H) x input size
  Matrix<T> recurrent_weights;  ///< (gates * H) x H
  Vector<T> bias;               ///< gates * H
};

/// Named view of one parameter block (column-major storage).
template <typename T>
struct ParamBlock {
  std::string name;
  T* data;
  Eigen::Index rows;
  Eigen::Index cols;

  Eigen::Index size() const { return rows * cols; }
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  Matrix<T> embedding;  ///< E x V, one column per token
  std::vector<LayerParams<T>> layers;
  Matrix<T> output_weights;  ///< V x H
  Vector<T> output_bias;     ///< V

  static ModelParams zeros(const ModelConfig& cfg);

  /// Blocks in a fixed order: embedding, per layer (input, recurrent, bias), output.
  std::vector<ParamBlock<T>> blocks();
  std::vector<ParamBlock<const T>> blocks() const;
  std::size_t parameter_count() const;
};

/// Gradients share the parameter layout.
template <typename T>
using ModelGrads = ModelParams<T>;

/// Recurrent state: per layer an H x lanes matrix (cell state only for LSTM).
template <typename T>
struct ModelState {
  std::vector<Matrix<T>> h;
  std::vector<Matrix<T>> c;

  static ModelState zeros(const ModelConfig& cfg, int lanes);
  int lanes() const { return h.empty() ? 0 : static_cast<int>(h.front().cols()); }
};

/// Uniform(-s, s) weights with s = 1/sqrt(fan_in), zero biases, LSTM forget-gate
/// bias 1. Bitwise deterministic for a given seed.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg);

template <typename T>
struct LstmStepResult {
  Matrix<T> h;
  Matrix<T> c;
};

/// One LSTM step on a batch of column vectors. Throws std::invalid_argument on
/// shape mismatch.
template <typename T>
LstmStepResult<T> lstm_step(const LayerParams<T>& layer, const Matrix<T>& h, const Matrix<T>& c,
                            const Matrix<T>& x);

/// One GRU step: h' = (1 - z) * h + z * tanh(Wx x + Wh (r * h) + b).
template <typename T>
Matrix<T> gru_step(const LayerParams<T>& layer, const Matrix<T>& h, const Matrix<T>& x);

/// Activations kept by forward_sequence for the backward pass.
template <typename T>
struct SequenceCache {
  struct Layer {
    Matrix<T> inputs;  ///< input size x (T * lanes)
    Matrix<T> h_prev;  ///< hidden state entering each step
    Matrix<T> c_prev;  ///< LSTM only
    Matrix<T> gates;   ///< post-activation gate values
    Matrix<T> c;       ///< LSTM only
    Matrix<T> tanh_c;  ///< LSTM only
    Matrix<T> reset_h; ///< GRU only: r * h_prev
    Matrix<T> h;
  };
  int steps = 0;
  int lanes = 0;
  std::vector<std::uint32_t> x;
  std::vector<std::uint32_t> y;
  std::vector<Layer> layers;
  Matrix<T> probs;  ///< V x (T * lanes) softmax outputs
};

template <typename T>
struct ForwardResult {
  T loss = 0;         ///< mean cross-entropy in nats
  Matrix<T> logits;   ///< V x (T * lanes)
  ModelState<T> state;
  SequenceCache<T> cache;
};

/// Runs the model over `x` from `state` (not modified) and scores against `y`.
/// Both index sequences hold steps * lanes entries, time-major.
template <typename T>
ForwardResult<T> forward_sequence(const ModelParams<T>& params, const ModelState<T>& state,
                                  std::span<const std::uint32_t> x, std::span<const std::uint32_t> y, int lanes);

/// Exact gradient of the mean loss of the cached window. The state entering the
/// window is a constant.
template <typename T>
ModelGrads<T> backward_sequence(const ModelParams<T>& params, const SequenceCache<T>& cache);

/// Single inference step for each lane; advances `state` and returns V x lanes logits.
template <typename T>
Matrix<T> infer_step(const ModelParams<T>& params, ModelState<T>& state, std::span<const std::uint32_t> tokens);

/// Column-wise numerically stable softmax.
template <typename T>
Matrix<T> softmax_columns(const Matrix<T>& logits);

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global-norm clip threshold; <= 0 disables clipping.
  double clip_norm = 5.0;
};

template <typename T>
struct AdamMoments {
  ModelParams<T> m;
  ModelParams<T> v;

  static AdamMoments zeros(const ModelConfig& cfg);
};

/// Adam update of one flat block. `grad_scale` multiplies the gradient first.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t t,
                 const AdamConfig& cfg, double grad_scale = 1.0);

template <typename T>
double global_norm(const ModelGrads<T>& grads);

/// Scale factor global-norm clipping applies (1 when under the threshold).
double clip_scale(double norm, double threshold);

/// Clips by global norm, then applies Adam step `t` (t >= 1) to every block.
/// Throws NonFiniteError if any gradient is NaN or infinite.
template <typename T>
void adam_step(ModelParams<T>& params, const ModelGrads<T>& grads, AdamMoments<T>& moments, std::uint64_t t,
               const AdamConfig& cfg);

struct GradCheckConfig {
  ModelConfig model{CellType::lstm, 16, 1, 8, 12, 1234};
  int seq_len = 5;
  int lanes = 1;
  double step = 1e-5;
  double tolerance = 1e-5;
  std::uint64_t data_seed = 99;
  /// Applied to the analytic gradients before comparison.
  std::function<void(ModelGrads<double>&)> tamper;
};

struct BlockGradError {
  std::string name;
  /// ||analytic - numeric|| / (||analytic|| + ||numeric||) over the block.
  double relative_error = 0.0;
  double max_absolute_error = 0.0;
};

struct GradCheckReport {
  std::vector<BlockGradError> blocks;
  double max_relative_error = 0.0;
  bool passed = false;
};

/// ||a - n|| / (||a|| + ||n||); 0 when both are zero.
///
/// Measured per block rather than per entry: central differences carry an
/// absolute roundoff of about eps * loss / step (~5e-11 at step 1e-5), which
/// swamps the entry-wise ratio for gradients near zero.
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

/// Compares backward_sequence with central differences on every parameter, in
/// double precision, from a random non-zero initial state. The report's maximum
/// is taken over blocks.
GradCheckReport grad_check(const GradCheckConfig& cfg);

}  // namespace melodylab

#endif  // MELODYLAB_NN_H
