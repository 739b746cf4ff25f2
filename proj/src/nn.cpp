/**
 * @file nn.cpp
 * @brief Recurrent model forward / backward passes, Adam, gradient check.
 */

#include "melodylab/nn.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace melodylab {

namespace {

/// Uniform double in [0, 1) from the top 53 bits; portable across standard libraries.
double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename T>
void fill_uniform(Matrix<T>& m, double scale, std::mt19937_64& rng) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<T>((2.0 * unit_uniform(rng) - 1.0) * scale);
  }
}

template <typename T>
void fill_uniform(Vector<T>& v, double scale, std::mt19937_64& rng) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = static_cast<T>((2.0 * unit_uniform(rng) - 1.0) * scale);
}

template <typename T>
auto sigmoid(const Eigen::ArrayBase<T>& a) {
  return (1 + (-a).exp()).inverse();
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

/// LSTM update from the input projection `pre` (4H x B, bias included). Writes
/// post-activation gates, the new cell state and the new hidden state.
template <typename T>
void lstm_cell(const LayerParams<T>& layer, const Matrix<T>& pre, const Matrix<T>& h_prev, const Matrix<T>& c_prev,
               Matrix<T>& gates, Matrix<T>& c, Matrix<T>& h) {
  const Eigen::Index H = h_prev.rows();
  const Eigen::Index B = h_prev.cols();
  Matrix<T> a = pre;
  a.noalias() += layer.recurrent_weights * h_prev;
  gates.resize(4 * H, B);
  gates.topRows(2 * H) = sigmoid(a.topRows(2 * H).array()).matrix();
  gates.middleRows(2 * H, H) = a.middleRows(2 * H, H).array().tanh().matrix();
  gates.bottomRows(H) = sigmoid(a.bottomRows(H).array()).matrix();
  const auto i = gates.topRows(H).array();
  const auto f = gates.middleRows(H, H).array();
  const auto g = gates.middleRows(2 * H, H).array();
  const auto o = gates.bottomRows(H).array();
  c = (f * c_prev.array() + i * g).matrix();
  h = (o * c.array().tanh()).matrix();
}

/// GRU update from the input projection `pre` (3H x B, bias included). `gates`
/// receives z, r and the candidate; `reset_h` receives r * h_prev.
template <typename T>
void gru_cell(const LayerParams<T>& layer, const Matrix<T>& pre, const Matrix<T>& h_prev, Matrix<T>& gates,
              Matrix<T>& reset_h, Matrix<T>& h) {
  const Eigen::Index H = h_prev.rows();
  const Eigen::Index B = h_prev.cols();
  gates.resize(3 * H, B);
  Matrix<T> zr = pre.topRows(2 * H);
  zr.noalias() += layer.recurrent_weights.topRows(2 * H) * h_prev;
  gates.topRows(2 * H) = sigmoid(zr.array()).matrix();
  reset_h = (gates.middleRows(H, H).array() * h_prev.array()).matrix();
  Matrix<T> n = pre.bottomRows(H);
  n.noalias() += layer.recurrent_weights.bottomRows(H) * reset_h;
  gates.bottomRows(H) = n.array().tanh().matrix();
  const auto z = gates.topRows(H).array();
  h = ((1 - z) * h_prev.array() + z * gates.bottomRows(H).array()).matrix();
}

template <typename T>
Matrix<T> input_projection(const LayerParams<T>& layer, const Matrix<T>& x) {
  Matrix<T> pre = layer.input_weights * x;
  pre.colwise() += layer.bias;
  return pre;
}

template <typename T>
int layer_input_size(const ModelConfig& cfg, int layer) {
  return layer == 0 ? cfg.embedding_dim : cfg.hidden_units;
}

template <typename T>
void check_state(const ModelConfig& cfg, const ModelState<T>& state, int lanes) {
  require(static_cast<int>(state.h.size()) == cfg.num_layers, "state layer count does not match model");
  for (int l = 0; l < cfg.num_layers; ++l) {
    require(state.h[l].rows() == cfg.hidden_units && state.h[l].cols() == lanes, "hidden state shape mismatch");
    if (cfg.cell_type == CellType::lstm) {
      require(state.c.size() == state.h.size() && state.c[l].rows() == cfg.hidden_units && state.c[l].cols() == lanes,
              "cell state shape mismatch");
    }
  }
}

template <typename T>
Matrix<T> embed(const ModelParams<T>& params, std::span<const std::uint32_t> tokens) {
  const auto vocab = static_cast<std::uint32_t>(params.config.vocab_size);
  Matrix<T> out(params.config.embedding_dim, static_cast<Eigen::Index>(tokens.size()));
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    if (tokens[k] >= vocab) {
      throw std::out_of_range("token index " + std::to_string(tokens[k]) + " out of range for vocabulary of " +
                              std::to_string(vocab));
    }
    out.col(static_cast<Eigen::Index>(k)) = params.embedding.col(tokens[k]);
  }
  return out;
}

}  // namespace

std::string_view to_string(CellType cell) { return cell == CellType::lstm ? "lstm" : "gru"; }

CellType parse_cell_type(std::string_view name) {
  if (name == "lstm" || name == "LSTM") return CellType::lstm;
  if (name == "gru" || name == "GRU") return CellType::gru;
  throw std::invalid_argument("unknown cell type: " + std::string(name));
}

int gate_count(CellType cell) { return cell == CellType::lstm ? 4 : 3; }

void validate(const ModelConfig& cfg) {
  require(cfg.hidden_units > 0 && cfg.num_layers > 0 && cfg.embedding_dim > 0 && cfg.vocab_size > 0,
          "model config sizes must be positive");
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& cfg) {
  validate(cfg);
  const int G = gate_count(cfg.cell_type);
  const int H = cfg.hidden_units;
  ModelParams p;
  p.config = cfg;
  p.embedding = Matrix<T>::Zero(cfg.embedding_dim, cfg.vocab_size);
  for (int l = 0; l < cfg.num_layers; ++l) {
    LayerParams<T> layer;
    layer.input_weights = Matrix<T>::Zero(G * H, layer_input_size<T>(cfg, l));
    layer.recurrent_weights = Matrix<T>::Zero(G * H, H);
    layer.bias = Vector<T>::Zero(G * H);
    p.layers.push_back(std::move(layer));
  }
  p.output_weights = Matrix<T>::Zero(cfg.vocab_size, H);
  p.output_bias = Vector<T>::Zero(cfg.vocab_size);
  return p;
}

template <typename T>
std::vector<ParamBlock<T>> ModelParams<T>::blocks() {
  std::vector<ParamBlock<T>> out;
  out.push_back({"embedding", embedding.data(), embedding.rows(), embedding.cols()});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    auto& layer = layers[l];
    out.push_back({prefix + "input_weights", layer.input_weights.data(), layer.input_weights.rows(),
                   layer.input_weights.cols()});
    out.push_back({prefix + "recurrent_weights", layer.recurrent_weights.data(), layer.recurrent_weights.rows(),
                   layer.recurrent_weights.cols()});
    out.push_back({prefix + "bias", layer.bias.data(), layer.bias.rows(), 1});
  }
  out.push_back({"output.weights", output_weights.data(), output_weights.rows(), output_weights.cols()});
  out.push_back({"output.bias", output_bias.data(), output_bias.rows(), 1});
  return out;
}

template <typename T>
std::vector<ParamBlock<const T>> ModelParams<T>::blocks() const {
  std::vector<ParamBlock<const T>> out;
  for (const auto& b : const_cast<ModelParams*>(this)->blocks()) out.push_back({b.name, b.data, b.rows, b.cols});
  return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks()) n += static_cast<std::size_t>(b.size());
  return n;
}

template <typename T>
ModelState<T> ModelState<T>::zeros(const ModelConfig& cfg, int lanes) {
  require(lanes > 0, "lane count must be positive");
  ModelState s;
  for (int l = 0; l < cfg.num_layers; ++l) {
    s.h.push_back(Matrix<T>::Zero(cfg.hidden_units, lanes));
    if (cfg.cell_type == CellType::lstm) s.c.push_back(Matrix<T>::Zero(cfg.hidden_units, lanes));
  }
  return s;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg) {
  ModelParams<T> p = ModelParams<T>::zeros(cfg);
  std::mt19937_64 rng(cfg.seed);
  const int H = cfg.hidden_units;
  fill_uniform(p.embedding, 1.0 / std::sqrt(static_cast<double>(cfg.vocab_size)), rng);
  for (int l = 0; l < cfg.num_layers; ++l) {
    auto& layer = p.layers[l];
    const double scale = 1.0 / std::sqrt(static_cast<double>(layer_input_size<T>(cfg, l) + H));
    fill_uniform(layer.input_weights, scale, rng);
    fill_uniform(layer.recurrent_weights, scale, rng);
    if (cfg.cell_type == CellType::lstm) layer.bias.segment(H, H).setOnes();
  }
  fill_uniform(p.output_weights, 1.0 / std::sqrt(static_cast<double>(H)), rng);
  return p;
}

template <typename T>
LstmStepResult<T> lstm_step(const LayerParams<T>& layer, const Matrix<T>& h, const Matrix<T>& c,
                            const Matrix<T>& x) {
  const Eigen::Index H = layer.recurrent_weights.cols();
  require(layer.recurrent_weights.rows() == 4 * H && layer.input_weights.rows() == 4 * H &&
              layer.bias.size() == 4 * H,
          "lstm_step: layer is not an LSTM layer");
  require(x.rows() == layer.input_weights.cols(),
          "lstm_step: input has " + std::to_string(x.rows()) + " rows, layer expects " +
              std::to_string(layer.input_weights.cols()));
  require(h.rows() == H && c.rows() == H && h.cols() == x.cols() && c.cols() == x.cols(),
          "lstm_step: state shape mismatch");
  LstmStepResult<T> out;
  Matrix<T> gates;
  lstm_cell(layer, input_projection(layer, x), h, c, gates, out.c, out.h);
  return out;
}

template <typename T>
Matrix<T> gru_step(const LayerParams<T>& layer, const Matrix<T>& h, const Matrix<T>& x) {
  const Eigen::Index H = layer.recurrent_weights.cols();
  require(layer.recurrent_weights.rows() == 3 * H && layer.input_weights.rows() == 3 * H &&
              layer.bias.size() == 3 * H,
          "gru_step: layer is not a GRU layer");
  require(x.rows() == layer.input_weights.cols(),
          "gru_step: input has " + std::to_string(x.rows()) + " rows, layer expects " +
              std::to_string(layer.input_weights.cols()));
  require(h.rows() == H && h.cols() == x.cols(), "gru_step: state shape mismatch");
  Matrix<T> gates, reset_h, out;
  gru_cell(layer, input_projection(layer, x), h, gates, reset_h, out);
  return out;
}

template <typename T>
Matrix<T> softmax_columns(const Matrix<T>& logits) {
  Matrix<T> out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const T peak = logits.col(j).maxCoeff();
    out.col(j) = (logits.col(j).array() - peak).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

template <typename T>
ForwardResult<T> forward_sequence(const ModelParams<T>& params, const ModelState<T>& state,
                                  std::span<const std::uint32_t> x, std::span<const std::uint32_t> y, int lanes) {
  const ModelConfig& cfg = params.config;
  require(lanes > 0, "lane count must be positive");
  require(!x.empty() && x.size() % static_cast<std::size_t>(lanes) == 0, "input length must be a multiple of lanes");
  require(y.size() == x.size(), "target length must equal input length");
  check_state(cfg, state, lanes);
  for (std::uint32_t t : y) {
    if (t >= static_cast<std::uint32_t>(cfg.vocab_size)) {
      throw std::out_of_range("target index " + std::to_string(t) + " out of range");
    }
  }

  const int steps = static_cast<int>(x.size()) / lanes;
  const bool is_lstm = cfg.cell_type == CellType::lstm;
  const int H = cfg.hidden_units;
  const int G = gate_count(cfg.cell_type);
  const Eigen::Index cols = static_cast<Eigen::Index>(x.size());

  ForwardResult<T> result;
  SequenceCache<T>& cache = result.cache;
  cache.steps = steps;
  cache.lanes = lanes;
  cache.x.assign(x.begin(), x.end());
  cache.y.assign(y.begin(), y.end());
  result.state = state;

  Matrix<T> layer_input = embed(params, x);
  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto& layer = params.layers[l];
    typename SequenceCache<T>::Layer lc;
    lc.inputs = std::move(layer_input);
    const Matrix<T> pre_all = input_projection(layer, lc.inputs);
    lc.h_prev.resize(H, cols);
    lc.gates.resize(G * H, cols);
    lc.h.resize(H, cols);
    if (is_lstm) {
      lc.c_prev.resize(H, cols);
      lc.c.resize(H, cols);
      lc.tanh_c.resize(H, cols);
    } else {
      lc.reset_h.resize(H, cols);
    }

    Matrix<T> h = state.h[l];
    Matrix<T> c = is_lstm ? state.c[l] : Matrix<T>();
    Matrix<T> gates, c_new, h_new, reset_h;
    for (int t = 0; t < steps; ++t) {
      const Eigen::Index col = static_cast<Eigen::Index>(t) * lanes;
      const Matrix<T> pre = pre_all.middleCols(col, lanes);
      lc.h_prev.middleCols(col, lanes) = h;
      if (is_lstm) {
        lc.c_prev.middleCols(col, lanes) = c;
        lstm_cell(layer, pre, h, c, gates, c_new, h_new);
        lc.c.middleCols(col, lanes) = c_new;
        lc.tanh_c.middleCols(col, lanes) = c_new.array().tanh().matrix();
        c = c_new;
      } else {
        gru_cell(layer, pre, h, gates, reset_h, h_new);
        lc.reset_h.middleCols(col, lanes) = reset_h;
      }
      lc.gates.middleCols(col, lanes) = gates;
      lc.h.middleCols(col, lanes) = h_new;
      h = h_new;
    }
    result.state.h[l] = h;
    if (is_lstm) result.state.c[l] = c;
    layer_input = lc.h;
    cache.layers.push_back(std::move(lc));
  }

  result.logits = params.output_weights * layer_input;
  result.logits.colwise() += params.output_bias;
  cache.probs = softmax_columns(result.logits);

  // -log softmax computed from logits directly to keep precision for confident predictions.
  double total = 0.0;
  for (Eigen::Index j = 0; j < cols; ++j) {
    const auto col = result.logits.col(j);
    const double peak = static_cast<double>(col.maxCoeff());
    double sum = 0.0;
    for (Eigen::Index v = 0; v < col.size(); ++v) sum += std::exp(static_cast<double>(col(v)) - peak);
    total += peak + std::log(sum) - static_cast<double>(col(cache.y[static_cast<std::size_t>(j)]));
  }
  result.loss = static_cast<T>(total / static_cast<double>(cols));
  return result;
}

template <typename T>
ModelGrads<T> backward_sequence(const ModelParams<T>& params, const SequenceCache<T>& cache) {
  const ModelConfig& cfg = params.config;
  require(static_cast<int>(cache.layers.size()) == cfg.num_layers, "cache does not match model");
  const bool is_lstm = cfg.cell_type == CellType::lstm;
  const int H = cfg.hidden_units;
  const int lanes = cache.lanes;
  const Eigen::Index cols = static_cast<Eigen::Index>(cache.x.size());
  const T inv_count = T(1) / static_cast<T>(cols);

  ModelGrads<T> grads = ModelGrads<T>::zeros(cfg);

  Matrix<T> d_logits = cache.probs;
  for (Eigen::Index j = 0; j < cols; ++j) d_logits(cache.y[static_cast<std::size_t>(j)], j) -= T(1);
  d_logits *= inv_count;

  const Matrix<T>& top_h = cache.layers.back().h;
  grads.output_weights.noalias() = d_logits * top_h.transpose();
  grads.output_bias = d_logits.rowwise().sum();
  Matrix<T> d_out = params.output_weights.transpose() * d_logits;

  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const auto& layer = params.layers[l];
    const auto& lc = cache.layers[l];
    auto& g = grads.layers[l];
    Matrix<T> d_pre(lc.gates.rows(), cols);
    Matrix<T> dh_next = Matrix<T>::Zero(H, lanes);
    Matrix<T> dc_next = Matrix<T>::Zero(H, lanes);

    for (int t = cache.steps - 1; t >= 0; --t) {
      const Eigen::Index col = static_cast<Eigen::Index>(t) * lanes;
      const Matrix<T> dh = d_out.middleCols(col, lanes) + dh_next;
      const auto gates = lc.gates.middleCols(col, lanes);
      const auto h_prev = lc.h_prev.middleCols(col, lanes).array();
      auto da = d_pre.middleCols(col, lanes);

      if (is_lstm) {
        const auto i = gates.topRows(H).array();
        const auto f = gates.middleRows(H, H).array();
        const auto gg = gates.middleRows(2 * H, H).array();
        const auto o = gates.bottomRows(H).array();
        const auto tanh_c = lc.tanh_c.middleCols(col, lanes).array();
        const auto c_prev = lc.c_prev.middleCols(col, lanes).array();

        const Matrix<T> dc = (dc_next.array() + dh.array() * o * (1 - tanh_c.square())).matrix();
        da.topRows(H) = (dc.array() * gg * i * (1 - i)).matrix();
        da.middleRows(H, H) = (dc.array() * c_prev * f * (1 - f)).matrix();
        da.middleRows(2 * H, H) = (dc.array() * i * (1 - gg.square())).matrix();
        da.bottomRows(H) = (dh.array() * tanh_c * o * (1 - o)).matrix();
        dc_next = (dc.array() * f).matrix();
        dh_next.noalias() = layer.recurrent_weights.transpose() * da;
      } else {
        const auto z = gates.topRows(H).array();
        const auto r = gates.middleRows(H, H).array();
        const auto n = gates.bottomRows(H).array();

        da.bottomRows(H) = (dh.array() * z * (1 - n.square())).matrix();
        const Matrix<T> d_reset_h = layer.recurrent_weights.bottomRows(H).transpose() * da.bottomRows(H);
        da.topRows(H) = (dh.array() * (n - h_prev) * z * (1 - z)).matrix();
        da.middleRows(H, H) = (d_reset_h.array() * h_prev * r * (1 - r)).matrix();
        dh_next = (dh.array() * (1 - z) + d_reset_h.array() * r).matrix();
        dh_next.noalias() += layer.recurrent_weights.topRows(2 * H).transpose() * da.topRows(2 * H);
      }
    }

    g.input_weights.noalias() = d_pre * lc.inputs.transpose();
    g.bias = d_pre.rowwise().sum();
    if (is_lstm) {
      g.recurrent_weights.noalias() = d_pre * lc.h_prev.transpose();
    } else {
      g.recurrent_weights.topRows(2 * H).noalias() = d_pre.topRows(2 * H) * lc.h_prev.transpose();
      g.recurrent_weights.bottomRows(H).noalias() = d_pre.bottomRows(H) * lc.reset_h.transpose();
    }
    d_out = layer.input_weights.transpose() * d_pre;
  }

  for (Eigen::Index j = 0; j < cols; ++j) grads.embedding.col(cache.x[static_cast<std::size_t>(j)]) += d_out.col(j);
  return grads;
}

template <typename T>
Matrix<T> infer_step(const ModelParams<T>& params, ModelState<T>& state, std::span<const std::uint32_t> tokens) {
  const ModelConfig& cfg = params.config;
  const int lanes = static_cast<int>(tokens.size());
  check_state(cfg, state, lanes);
  Matrix<T> input = embed(params, tokens);
  Matrix<T> gates, reset_h, h_new, c_new;
  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto& layer = params.layers[l];
    const Matrix<T> pre = input_projection(layer, input);
    if (cfg.cell_type == CellType::lstm) {
      lstm_cell(layer, pre, state.h[l], state.c[l], gates, c_new, h_new);
      state.c[l] = c_new;
    } else {
      gru_cell(layer, pre, state.h[l], gates, reset_h, h_new);
    }
    state.h[l] = h_new;
    input = h_new;
  }
  Matrix<T> logits = params.output_weights * input;
  logits.colwise() += params.output_bias;
  return logits;
}

template <typename T>
AdamMoments<T> AdamMoments<T>::zeros(const ModelConfig& cfg) {
  return {ModelParams<T>::zeros(cfg), ModelParams<T>::zeros(cfg)};
}

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t t,
                 const AdamConfig& cfg, double grad_scale) {
  require(t >= 1, "Adam step index must be at least 1");
  require(grad.size() == param.size() && m.size() == param.size() && v.size() == param.size(),
          "Adam block sizes differ");
  const double correction1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T step = static_cast<T>(cfg.learning_rate / correction1);
  const T root_c2 = static_cast<T>(std::sqrt(correction2));
  const T eps = static_cast<T>(cfg.epsilon);
  const T scale = static_cast<T>(grad_scale);
  for (std::size_t k = 0; k < param.size(); ++k) {
    const T g = grad[k] * scale;
    m[k] = b1 * m[k] + (1 - b1) * g;
    v[k] = b2 * v[k] + (1 - b2) * g * g;
    param[k] -= step * m[k] / (std::sqrt(v[k]) / root_c2 + eps);
  }
}

template <typename T>
double global_norm(const ModelGrads<T>& grads) {
  double sq = 0.0;
  for (const auto& b : grads.blocks()) {
    for (Eigen::Index k = 0; k < b.size(); ++k) sq += static_cast<double>(b.data[k]) * static_cast<double>(b.data[k]);
  }
  return std::sqrt(sq);
}

double clip_scale(double norm, double threshold) {
  if (threshold <= 0.0 || norm <= threshold) return 1.0;
  return threshold / norm;
}

template <typename T>
void adam_step(ModelParams<T>& params, const ModelGrads<T>& grads, AdamMoments<T>& moments, std::uint64_t t,
               const AdamConfig& cfg) {
  const double norm = global_norm(grads);
  if (!std::isfinite(norm)) throw NonFiniteError("non-finite gradient at Adam step " + std::to_string(t));
  const double scale = clip_scale(norm, cfg.clip_norm);
  auto p = params.blocks();
  auto g = grads.blocks();
  auto m = moments.m.blocks();
  auto v = moments.v.blocks();
  require(p.size() == g.size() && p.size() == m.size() && p.size() == v.size(), "gradient layout mismatch");
  for (std::size_t b = 0; b < p.size(); ++b) {
    const auto n = static_cast<std::size_t>(p[b].size());
    require(static_cast<std::size_t>(g[b].size()) == n, "gradient block " + p[b].name + " has the wrong size");
    adam_update<T>({p[b].data, n}, {g[b].data, n}, {m[b].data, n}, {v[b].data, n}, t, cfg, scale);
  }
}

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  require(analytic.size() == numeric.size(), "relative_error: length mismatch");
  double diff = 0.0, a = 0.0, n = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    diff += (analytic[k] - numeric[k]) * (analytic[k] - numeric[k]);
    a += analytic[k] * analytic[k];
    n += numeric[k] * numeric[k];
  }
  const double denom = std::sqrt(a) + std::sqrt(n);
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

GradCheckReport grad_check(const GradCheckConfig& cfg) {
  validate(cfg.model);
  require(cfg.seq_len > 0 && cfg.lanes > 0, "grad check needs a positive window");
  ModelParams<double> params = init_params<double>(cfg.model);
  std::mt19937_64 rng(cfg.data_seed);

  const std::size_t count = static_cast<std::size_t>(cfg.seq_len) * static_cast<std::size_t>(cfg.lanes);
  std::vector<std::uint32_t> x(count), y(count);
  for (auto& v : x) v = static_cast<std::uint32_t>(rng() % static_cast<std::uint64_t>(cfg.model.vocab_size));
  for (auto& v : y) v = static_cast<std::uint32_t>(rng() % static_cast<std::uint64_t>(cfg.model.vocab_size));

  ModelState<double> state = ModelState<double>::zeros(cfg.model, cfg.lanes);
  for (auto& h : state.h) fill_uniform(h, 0.5, rng);
  for (auto& c : state.c) fill_uniform(c, 0.5, rng);

  const auto fwd = forward_sequence(params, state, x, y, cfg.lanes);
  ModelGrads<double> analytic = backward_sequence(params, fwd.cache);
  if (cfg.tamper) cfg.tamper(analytic);

  GradCheckReport report;
  auto param_blocks = params.blocks();
  const auto grad_blocks = std::as_const(analytic).blocks();
  for (std::size_t b = 0; b < param_blocks.size(); ++b) {
    BlockGradError err{param_blocks[b].name};
    const auto n = static_cast<std::size_t>(param_blocks[b].size());
    std::vector<double> numeric(n);
    for (Eigen::Index k = 0; k < param_blocks[b].size(); ++k) {
      double& w = param_blocks[b].data[k];
      const double saved = w;
      w = saved + cfg.step;
      const double plus = forward_sequence(params, state, x, y, cfg.lanes).loss;
      w = saved - cfg.step;
      const double minus = forward_sequence(params, state, x, y, cfg.lanes).loss;
      w = saved;
      numeric[k] = (plus - minus) / (2.0 * cfg.step);
      err.max_absolute_error = std::max(err.max_absolute_error, std::abs(grad_blocks[b].data[k] - numeric[k]));
    }
    err.relative_error = relative_error({grad_blocks[b].data, n}, numeric);
    report.max_relative_error = std::max(report.max_relative_error, err.relative_error);
    report.blocks.push_back(err);
  }
  report.passed = report.max_relative_error < cfg.tolerance;
  return report;
}

#define MELODYLAB_INSTANTIATE(T)                                                                                    \
  template struct ModelParams<T>;                                                                                  \
  template struct ModelState<T>;                                                                                   \
  template struct AdamMoments<T>;                                                                                  \
  template ModelParams<T> init_params<T>(const ModelConfig&);                                                      \
  template LstmStepResult<T> lstm_step<T>(const LayerParams<T>&, const Matrix<T>&, const Matrix<T>&,               \
                                          const Matrix<T>&);                                                       \
  template Matrix<T> gru_step<T>(const LayerParams<T>&, const Matrix<T>&, const Matrix<T>&);                       \
  template Matrix<T> softmax_columns<T>(const Matrix<T>&);                                                         \
  template ForwardResult<T> forward_sequence<T>(const ModelParams<T>&, const ModelState<T>&,                       \
                                                std::span<const std::uint32_t>, std::span<const std::uint32_t>, int); \
  template ModelGrads<T> backward_sequence<T>(const ModelParams<T>&, const SequenceCache<T>&);                     \
  template Matrix<T> infer_step<T>(const ModelParams<T>&, ModelState<T>&, std::span<const std::uint32_t>);         \
  template void adam_update<T>(std::span<T>, std::span<const T>, std::span<T>, std::span<T>, std::uint64_t,        \
                               const AdamConfig&, double);                                                         \
  template double global_norm<T>(const ModelGrads<T>&);                                                            \
  template void adam_step<T>(ModelParams<T>&, const ModelGrads<T>&, AdamMoments<T>&, std::uint64_t,                \
                             const AdamConfig&);

MELODYLAB_INSTANTIATE(float)
MELODYLAB_INSTANTIATE(double)

#undef MELODYLAB_INSTANTIATE

}  // namespace melodylab
