#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cstring>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wmark/bytes.hpp"
#include "wmark/error.hpp"
#include "wmark/rng.hpp"

namespace wmark {

inline constexpr const char* kArchitectureId = "mlp-centered-relu-softmax/v1";

// Fixed shift applied to every feature before the first layer.
inline constexpr double kInputCenter = 0.5;

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// One affine map: weights is (outputs x inputs).
template <typename Scalar>
struct DenseLayer {
  MatrixT<Scalar> weights;
  VectorT<Scalar> bias;

  int inputs() const { return static_cast<int>(weights.cols()); }
  int outputs() const { return static_cast<int>(weights.rows()); }

  template <typename To>
  DenseLayer<To> cast() const {
    return {weights.template cast<To>(), bias.template cast<To>()};
  }

  bool bitwise_equal(const DenseLayer& other) const {
    return weights.rows() == other.weights.rows() && weights.cols() == other.weights.cols() &&
           std::equal(weights.data(), weights.data() + weights.size(), other.weights.data()) &&
           std::equal(bias.data(), bias.data() + bias.size(), other.bias.data());
  }
};

using OutputHead = DenseLayer<float>;

/// Feed-forward classifier: inputs in [0,1] are shifted by -kInputCenter,
/// then pass through affine layers with ReLU between them and a softmax over
/// the final layer. Columns of an input matrix are examples.
template <typename Scalar>
class Mlp {
 public:
  using Matrix = MatrixT<Scalar>;
  using Vector = VectorT<Scalar>;

  Mlp() = default;

  explicit Mlp(std::vector<DenseLayer<Scalar>> layers, double final_learning_rate = 0.1)
      : layers_(std::move(layers)), final_learning_rate_(final_learning_rate) {
    validate();
  }

  static Mlp zeros(const std::vector<int>& dims) {
    check_dims(dims);
    std::vector<DenseLayer<Scalar>> layers;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      layers.push_back({Matrix::Zero(dims[i + 1], dims[i]), Vector::Zero(dims[i + 1])});
    }
    return Mlp(std::move(layers));
  }

  // Uniform in +-sqrt(6 / (fan_in + fan_out)); biases start at zero.
  static DenseLayer<Scalar> init_layer(int inputs, int outputs, Rng& rng) {
    DenseLayer<Scalar> layer{Matrix(outputs, inputs), Vector::Zero(outputs)};
    const double limit = std::sqrt(6.0 / static_cast<double>(inputs + outputs));
    for (int c = 0; c < inputs; ++c) {
      for (int r = 0; r < outputs; ++r) layer.weights(r, c) = static_cast<Scalar>(rng.uniform(-limit, limit));
    }
    return layer;
  }

  static Mlp random(const std::vector<int>& dims, Rng& rng) {
    check_dims(dims);
    std::vector<DenseLayer<Scalar>> layers;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) layers.push_back(init_layer(dims[i], dims[i + 1], rng));
    return Mlp(std::move(layers));
  }

  std::vector<int> layer_dims() const {
    std::vector<int> dims;
    if (layers_.empty()) return dims;
    dims.push_back(layers_.front().inputs());
    for (const auto& l : layers_) dims.push_back(l.outputs());
    return dims;
  }

  int input_dim() const { return layers_.empty() ? 0 : layers_.front().inputs(); }
  int num_classes() const { return layers_.empty() ? 0 : layers_.back().outputs(); }
  std::size_t num_layers() const { return layers_.size(); }

  const std::vector<DenseLayer<Scalar>>& layers() const { return layers_; }
  std::vector<DenseLayer<Scalar>>& layers() { return layers_; }

  const DenseLayer<Scalar>& output_layer() const { return layers_.back(); }
  DenseLayer<Scalar>& output_layer() { return layers_.back(); }

  double final_learning_rate() const { return final_learning_rate_; }
  void set_final_learning_rate(double lr) { final_learning_rate_ = lr; }

  // Pre-softmax scores for every column of `inputs`.
  Matrix logits(const Matrix& inputs) const {
    if (inputs.rows() != input_dim()) {
      throw DimensionError("input has dimension " + std::to_string(inputs.rows()) + ", model expects " +
                           std::to_string(input_dim()));
    }
    Matrix act = (inputs.array() - Scalar(kInputCenter)).matrix();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Matrix z = layers_[i].weights * act;
      z.colwise() += layers_[i].bias;
      if (i + 1 < layers_.size()) z = z.cwiseMax(Scalar(0));
      act = std::move(z);
    }
    return act;
  }

  Matrix probabilities(const Matrix& inputs) const {
    Matrix z = logits(inputs);
    for (Eigen::Index c = 0; c < z.cols(); ++c) z.col(c) = softmax(z.col(c));
    return z;
  }

  int classify(std::span<const Scalar> x) const {
    if (static_cast<int>(x.size()) != input_dim()) {
      throw DimensionError("input has dimension " + std::to_string(x.size()) + ", model expects " +
                           std::to_string(input_dim()));
    }
    const Matrix col = Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size()));
    return argmax(logits(col).col(0));
  }

  // Labels for every column; processed in chunks to bound memory.
  std::vector<int> classify_all(const Matrix& inputs) const {
    std::vector<int> out(static_cast<std::size_t>(inputs.cols()));
    constexpr Eigen::Index kChunk = 1024;
    for (Eigen::Index start = 0; start < inputs.cols(); start += kChunk) {
      const Eigen::Index n = std::min(kChunk, inputs.cols() - start);
      const Matrix z = logits(inputs.middleCols(start, n));
      for (Eigen::Index c = 0; c < n; ++c) out[static_cast<std::size_t>(start + c)] = argmax(z.col(c));
    }
    return out;
  }

  template <typename To>
  Mlp<To> cast() const {
    std::vector<DenseLayer<To>> out;
    for (const auto& l : layers_) out.push_back(l.template cast<To>());
    return Mlp<To>(std::move(out), final_learning_rate_);
  }

  bool bitwise_equal(const Mlp& other) const {
    if (layers_.size() != other.layers_.size()) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (!layers_[i].bitwise_equal(other.layers_[i])) return false;
    }
    return true;
  }

  bool all_finite() const {
    return std::all_of(layers_.begin(), layers_.end(),
                       [](const auto& l) { return l.weights.allFinite() && l.bias.allFinite(); });
  }

  // Lowest index wins ties.
  template <typename Derived>
  static int argmax(const Eigen::MatrixBase<Derived>& scores) {
    int best = 0;
    for (Eigen::Index i = 1; i < scores.size(); ++i) {
      if (scores(i) > scores(best)) best = static_cast<int>(i);
    }
    return best;
  }

  template <typename Derived>
  static Vector softmax(const Eigen::MatrixBase<Derived>& z) {
    const Scalar m = z.maxCoeff();
    Vector e = (z.array() - m).exp().matrix();
    return e / e.sum();
  }

 private:
  static void check_dims(const std::vector<int>& dims) {
    if (dims.size() < 2) throw DimensionError("a model needs an input and an output dimension");
    for (int d : dims) {
      if (d <= 0) throw DimensionError("layer dimensions must be positive");
    }
    if (dims.back() < 2) throw DimensionError("a classifier needs at least two output classes");
  }

  void validate() const {
    if (layers_.empty()) throw DimensionError("a model needs at least one layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.bias.size() != l.weights.rows()) throw DimensionError("bias length must equal layer outputs");
      if (i > 0 && l.inputs() != layers_[i - 1].outputs()) {
        throw DimensionError("layer " + std::to_string(i) + " input does not match previous output");
      }
    }
    if (num_classes() < 2) throw DimensionError("a classifier needs at least two output classes");
  }

  std::vector<DenseLayer<Scalar>> layers_;
  double final_learning_rate_ = 0.1;
};

using Model = Mlp<float>;

/// Finite sample of (feature vector, label) pairs. Features are columns.
struct LabeledSet {
  Eigen::MatrixXf inputs;
  std::vector<int> labels;

  LabeledSet() = default;
  LabeledSet(Eigen::MatrixXf in, std::vector<int> lab) : inputs(std::move(in)), labels(std::move(lab)) {
    if (static_cast<std::size_t>(inputs.cols()) != labels.size()) {
      throw DimensionError("inputs and labels have different lengths");
    }
    if (!features_in_unit_box()) throw Error("features must lie in [0, 1]");
    for (int y : labels) {
      if (y < 0) throw Error("labels must be non-negative");
    }
  }

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  int dim() const { return static_cast<int>(inputs.rows()); }

  std::span<const float> input(std::size_t i) const {
    return {inputs.data() + static_cast<std::ptrdiff_t>(i) * inputs.rows(),
            static_cast<std::size_t>(inputs.rows())};
  }

  bool features_in_unit_box() const {
    return inputs.size() == 0 || (inputs.allFinite() && inputs.minCoeff() >= 0.0f && inputs.maxCoeff() <= 1.0f);
  }

  static LabeledSet concat(const LabeledSet& a, const LabeledSet& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.dim() != b.dim()) throw DimensionError("cannot concatenate sets of different dimension");
    Eigen::MatrixXf in(a.dim(), a.inputs.cols() + b.inputs.cols());
    in << a.inputs, b.inputs;
    std::vector<int> lab = a.labels;
    lab.insert(lab.end(), b.labels.begin(), b.labels.end());
    return {std::move(in), std::move(lab)};
  }
};

template <typename Scalar>
double accuracy(const Mlp<Scalar>& model, const LabeledSet& set) {
  if (set.empty()) throw Error("accuracy of an empty set is undefined");
  const auto predicted = model.classify_all(set.inputs.template cast<Scalar>());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == set.labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(set.size());
}

/// Mean negative log-likelihood of `labels` under softmax(model(inputs)) and
/// its gradient with respect to every weight and bias.
template <typename Scalar>
struct LossGradient {
  double loss = 0.0;
  std::vector<DenseLayer<Scalar>> grads;
};

template <typename Scalar>
LossGradient<Scalar> nll_loss_gradient(const Mlp<Scalar>& model, const MatrixT<Scalar>& inputs,
                                       std::span<const int> labels) {
  using Matrix = MatrixT<Scalar>;
  const auto& layers = model.layers();
  const std::size_t depth = layers.size();
  const Eigen::Index batch = inputs.cols();
  if (static_cast<std::size_t>(batch) != labels.size()) throw DimensionError("batch inputs and labels differ in length");
  if (inputs.rows() != model.input_dim()) throw DimensionError("batch dimension does not match the model input");

  // activations[i] is the input to layer i; activations[depth] holds the logits.
  std::vector<Matrix> activations(depth + 1);
  activations[0] = (inputs.array() - Scalar(kInputCenter)).matrix();
  for (std::size_t i = 0; i < depth; ++i) {
    Matrix z = layers[i].weights * activations[i];
    z.colwise() += layers[i].bias;
    if (i + 1 < depth) z = z.cwiseMax(Scalar(0));
    activations[i + 1] = std::move(z);
  }

  Matrix delta = activations[depth];
  double loss = 0.0;
  for (Eigen::Index c = 0; c < batch; ++c) {
    const int y = labels[static_cast<std::size_t>(c)];
    if (y < 0 || y >= model.num_classes()) throw DimensionError("label " + std::to_string(y) + " out of range");
    auto col = delta.col(c);
    const Scalar m = col.maxCoeff();
    col.array() = (col.array() - m).exp();
    const Scalar sum = col.sum();
    loss -= static_cast<double>(activations[depth](y, c) - m) - std::log(static_cast<double>(sum));
    col /= sum;
    col(y) -= Scalar(1);
  }
  const Scalar inv_batch = Scalar(1) / static_cast<Scalar>(batch);
  delta *= inv_batch;

  LossGradient<Scalar> out;
  out.loss = loss / static_cast<double>(batch);
  out.grads.resize(depth);
  for (std::size_t i = depth; i-- > 0;) {
    out.grads[i].weights.noalias() = delta * activations[i].transpose();
    out.grads[i].bias = delta.rowwise().sum();
    if (i > 0) {
      Matrix back = layers[i].weights.transpose() * delta;
      back.array() *= (activations[i].array() > Scalar(0)).template cast<Scalar>();
      delta = std::move(back);
    }
  }
  return out;
}

struct TrainConfig {
  double learning_rate = 0.1;
  int epochs = 60;
  int batch_size = 20;
  int k_trigger_per_batch = 2;
  int lr_halving_period_epochs = 20;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw Error("learning rate must be positive");
    if (epochs < 0) throw Error("epochs must be non-negative");
    if (batch_size <= 0) throw Error("batch size must be positive");
    if (k_trigger_per_batch < 0 || k_trigger_per_batch > batch_size) {
      throw Error("k_trigger_per_batch must lie in [0, batch_size]");
    }
    if (lr_halving_period_epochs <= 0) throw Error("learning-rate period must be positive");
  }

  // The rate is divided by ten at the end of every period.
  double learning_rate_at(int epoch) const {
    return learning_rate * std::pow(0.1, static_cast<double>(epoch / lr_halving_period_epochs));
  }
};

// Which parameters an SGD run may update.
enum class LayerScope { AllLayers, OutputLayerOnly };

/// Minibatch SGD on the mean NLL. Each epoch reshuffles `data` with a
/// seed-derived permutation and appends k_trigger_per_batch trigger examples,
/// drawn uniformly with replacement, to every batch.
inline Model train(const LabeledSet& data, const LabeledSet& trigger, const TrainConfig& cfg, Model model,
                   LayerScope scope = LayerScope::AllLayers) {
  cfg.validate();
  if (data.empty()) throw Error("training data must be non-empty");
  if (data.dim() != model.input_dim()) {
    throw DimensionError("training data has dimension " + std::to_string(data.dim()) + ", model expects " +
                         std::to_string(model.input_dim()));
  }
  const bool use_trigger = !trigger.empty() && cfg.k_trigger_per_batch > 0;
  if (!trigger.empty()) {
    if (cfg.k_trigger_per_batch < 1) throw Error("a non-empty trigger set requires k_trigger_per_batch >= 1");
    if (trigger.dim() != model.input_dim()) throw DimensionError("trigger set dimension does not match the model");
  }
  if (cfg.epochs == 0) return model;

  Rng shuffle_rng(derive_seed(cfg.seed, "train/shuffle"));
  Rng trigger_rng(derive_seed(cfg.seed, "train/trigger"));
  const std::size_t n = data.size();
  const int d = data.dim();
  const std::size_t first_trainable = scope == LayerScope::OutputLayerOnly ? model.num_layers() - 1 : 0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Eigen::MatrixXf batch_in;
  std::vector<int> batch_labels;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto lr = static_cast<float>(cfg.learning_rate_at(epoch));
    shuffle_rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n - start);
      const std::size_t extra = use_trigger ? static_cast<std::size_t>(cfg.k_trigger_per_batch) : 0;
      batch_in.resize(d, static_cast<Eigen::Index>(count + extra));
      batch_labels.resize(count + extra);
      for (std::size_t j = 0; j < count; ++j) {
        const std::size_t src = order[start + j];
        batch_in.col(static_cast<Eigen::Index>(j)) = data.inputs.col(static_cast<Eigen::Index>(src));
        batch_labels[j] = data.labels[src];
      }
      for (std::size_t j = 0; j < extra; ++j) {
        const auto src = static_cast<Eigen::Index>(trigger_rng.below(trigger.size()));
        batch_in.col(static_cast<Eigen::Index>(count + j)) = trigger.inputs.col(src);
        batch_labels[count + j] = trigger.labels[static_cast<std::size_t>(src)];
      }

      auto step = nll_loss_gradient(model, batch_in, batch_labels);
      if (!std::isfinite(step.loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                            std::to_string(start) + " (learning rate " + std::to_string(lr) + ")");
      }
      auto& layers = model.layers();
      for (std::size_t i = first_trainable; i < layers.size(); ++i) {
        layers[i].weights.noalias() -= lr * step.grads[i].weights;
        layers[i].bias.noalias() -= lr * step.grads[i].bias;
      }
    }
  }
  model.set_final_learning_rate(cfg.learning_rate_at(cfg.epochs - 1));
  return model;
}

inline Model fresh_model(const std::vector<int>& dims, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "model/init"));
  return Model::random(dims, rng);
}

// Default desk architecture: input -> 128 -> 128 -> classes.
inline std::vector<int> default_layer_dims(int input_dim, int num_classes) {
  return {input_dim, 128, 128, num_classes};
}

/// Swaps the output layer for a freshly initialized one with `new_classes`
/// outputs. Returns the new model and the detached original head; all other
/// layers are copied bit for bit.
inline std::pair<Model, OutputHead> replace_output_layer(const Model& m, int new_classes, Rng& rng) {
  if (new_classes < 2) throw DimensionError("replacement head needs at least two classes");
  std::vector<DenseLayer<float>> layers = m.layers();
  OutputHead saved = layers.back();
  layers.back() = Model::init_layer(saved.inputs(), new_classes, rng);
  return {Model(std::move(layers), m.final_learning_rate()), std::move(saved)};
}

inline Model attach_head(const Model& body, const OutputHead& head) {
  if (head.inputs() != body.output_layer().inputs()) {
    throw DimensionError("head expects " + std::to_string(head.inputs()) + " features, body provides " +
                         std::to_string(body.output_layer().inputs()));
  }
  std::vector<DenseLayer<float>> layers = body.layers();
  layers.back() = head;
  return Model(std::move(layers), body.final_learning_rate());
}

// IEEE-754 binary32, little-endian, regardless of host byte order.
inline void append_f32_le(Bytes& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<std::uint8_t>(bits >> shift));
}

inline float read_f32_le(std::span<const std::uint8_t> in, std::size_t offset) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | in[offset + static_cast<std::size_t>(i)];
  return std::bit_cast<float>(bits);
}

// Per layer: weights row by row (one row per output unit), then bias.
inline Bytes weights_to_le_bytes(const Model& m) {
  Bytes out;
  for (const auto& l : m.layers()) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) append_f32_le(out, l.weights(r, c));
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) append_f32_le(out, l.bias(r));
  }
  return out;
}

inline Model model_from_le_bytes(const std::vector<int>& dims, std::span<const std::uint8_t> bytes,
                                 double final_learning_rate) {
  Model m = Model::zeros(dims);
  std::size_t pos = 0;
  auto next = [&] {
    if (pos + 4 > bytes.size()) throw ParseError("weight data shorter than the layer dimensions require", pos);
    const float v = read_f32_le(bytes, pos);
    pos += 4;
    return v;
  };
  for (auto& l : m.layers()) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = next();
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = next();
  }
  if (pos != bytes.size()) throw ParseError("weight data longer than the layer dimensions require", pos);
  if (!m.all_finite()) throw ParseError("weight data contains non-finite values");
  m.set_final_learning_rate(final_learning_rate);
  return m;
}

}  // namespace wmark
