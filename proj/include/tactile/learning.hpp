#pragma once

// Small neural-network engine on Eigen: dense, LSTM, layer normalization and
// softmax layers with hand-written backward passes, MAE/MSE/cross-entropy
// losses, Adam/SGD, plus closed-form ridge regression and regression metrics.
//
// Batches are column-major: a sequence is a vector over time of
// (features x batch) matrices. Non-recurrent networks use length-1 sequences.

#include <Eigen/Dense>
#include <cstdint>
#include <json.hpp>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace tactile::nn {

enum class Activation { Linear, Tanh, Relu, Sigmoid };
enum class LayerKind { Dense, Lstm, LayerNorm, Softmax };
enum class Loss { MAE, MSE, CrossEntropy };

std::string to_string(Activation a);
std::string to_string(LayerKind k);
std::string to_string(Loss l);
Activation activation_from_string(const std::string& s);
LayerKind layer_kind_from_string(const std::string& s);
Loss loss_from_string(const std::string& s);

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  int units = 0;
  Activation activation = Activation::Linear;

  static LayerSpec dense(int units, Activation a = Activation::Linear) {
    return {LayerKind::Dense, units, a};
  }
  static LayerSpec lstm(int units) { return {LayerKind::Lstm, units, Activation::Tanh}; }
  static LayerSpec layernorm() { return {LayerKind::LayerNorm, 0, Activation::Linear}; }
  static LayerSpec softmax() { return {LayerKind::Softmax, 0, Activation::Linear}; }
};

struct NetworkSpec {
  int input_width = 1;
  std::vector<LayerSpec> layers;
  std::uint64_t seed = 0;

  /// Throws ShapeMismatch for incompatible layer sequences.
  void validate() const;
  int output_width() const;
  bool recurrent() const;
};

nlohmann::json to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const nlohmann::json& j);

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Seq = std::vector<Mat<T>>;

template <class T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerKind kind() const = 0;
  /// Caches what backward needs when `train` is set.
  virtual Seq<T> forward(const Seq<T>& x, bool train) = 0;
  /// Accumulates parameter gradients and returns d(loss)/d(input).
  virtual Seq<T> backward(const Seq<T>& dy) = 0;
  virtual std::vector<Mat<T>*> params() { return {}; }
  virtual std::vector<Mat<T>*> grads() { return {}; }
  virtual std::unique_ptr<Layer<T>> clone() const = 0;
};

template <class T>
class Network {
 public:
  explicit Network(NetworkSpec spec);
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const NetworkSpec& spec() const { return spec_; }

  /// Output of the final timestep, (output_width x batch).
  Mat<T> forward(const Seq<T>& x, bool train = false);
  Mat<T> forward(const Mat<T>& x, bool train = false) { return forward(Seq<T>{x}, train); }
  /// Backpropagates d(loss)/d(output) of the last training forward pass.
  void backward(const Mat<T>& d_output);
  void zero_grad();

  std::vector<Mat<T>*> params();
  std::vector<Mat<T>*> grads();
  std::vector<const Mat<T>*> params() const;
  std::size_t parameter_count() const;

  std::vector<double> flat_parameters() const;
  void set_flat_parameters(const std::vector<double>& values);

  /// Versioned weights document; `config_hash` ties it to the generating config.
  nlohmann::json to_json(const std::string& config_hash = "") const;
  /// Throws HashMismatch when `expected_hash` is given and differs.
  static Network from_json(const nlohmann::json& j,
                           const std::optional<std::string>& expected_hash = std::nullopt);

  /// Direct access for weight transfer between networks of related shape.
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  std::size_t layer_count() const { return layers_.size(); }

 private:
  NetworkSpec spec_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::size_t last_steps_ = 0;
};

/// Mean loss over every output element (MAE/MSE) or over the batch
/// (cross-entropy on probabilities). Writes d(loss)/d(prediction) if `grad`.
template <class T>
T loss_value(Loss loss, const Mat<T>& pred, const Mat<T>& target, Mat<T>* grad);

struct OptimizerConfig {
  enum class Kind { Adam, SGD } kind = Kind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip, 0 disables
};

template <class T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {}) : config_(config) {}
  void step(Network<T>& net);
  void reset() {
    m_.clear();
    v_.clear();
    t_ = 0;
  }
  OptimizerConfig& config() { return config_; }

 private:
  OptimizerConfig config_;
  std::vector<Mat<T>> m_, v_;
  long t_ = 0;
};

/// forward(train) + loss + backward + optimizer step. Throws NaNLoss on a
/// non-finite loss before touching the weights.
template <class T>
T train_step(Network<T>& net, Optimizer<T>& opt, const Seq<T>& x, const Mat<T>& y, Loss loss);

/// Dataset in time-major layout: x[t] is (features x N).
template <class T>
struct SequenceData {
  Seq<T> x;
  Mat<T> y;  // (outputs x N)

  std::size_t size() const { return static_cast<std::size_t>(y.cols()); }
  Seq<T> gather_x(const std::vector<std::size_t>& idx) const;
  Mat<T> gather_y(const std::vector<std::size_t>& idx) const;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 32;
  int epochs = 60;
  Loss loss = Loss::MAE;
  bool early_selection = true;  // keep the weights of the lowest validation loss
  double clip_norm = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  bool aborted = false;  // a non-finite loss stopped training early
};

template <class T>
TrainHistory fit(Network<T>& net, const SequenceData<T>& train, const SequenceData<T>* validation,
                 const TrainConfig& config);

template <class T>
Mat<T> predict(Network<T>& net, const SequenceData<T>& data, int batch = 256);

template <class T>
double mean_loss(Network<T>& net, const SequenceData<T>& data, Loss loss, int batch = 256);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

/// Central finite differences over every parameter; relative error
/// |a - n| / max(|a| + |n|, 1e-8).
GradCheckResult gradient_check(Network<double>& net, const Seq<double>& x,
                               const Mat<double>& y, Loss loss, double h = 1e-6);

/// (XᵀX + λI)⁻¹ Xᵀ y. Throws Singular when λ = 0 and X is rank deficient.
Eigen::VectorXd fit_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda);

struct MetricsReport {
  double mae = 0.0;
  double mse = 0.0;
  double r2 = 0.0;
  double exp = 0.0;
};

nlohmann::json to_json(const MetricsReport& m);

/// Throws InvalidArgument for mismatched or < 2 values, ZeroTargetVariance
/// for constant targets.
MetricsReport evaluate(const std::vector<double>& predictions, const std::vector<double>& targets);

struct MetricSummary {
  MetricsReport mean;
  MetricsReport stddev;  // population
  std::size_t count = 0;
};

MetricSummary summarize(const std::vector<MetricsReport>& reports);

}  // namespace tactile::nn
