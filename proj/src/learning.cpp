#include "tactile/learning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "tactile/errors.hpp"
#include "tactile/json_fields.hpp"
#include "tactile/log.hpp"
#include "tactile/seed.hpp"

namespace tactile::nn {

using nlohmann::json;

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Linear: return "linear";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Lstm: return "lstm";
    case LayerKind::LayerNorm: return "layernorm";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

std::string to_string(Loss l) {
  switch (l) {
    case Loss::MAE: return "mae";
    case Loss::MSE: return "mse";
    case Loss::CrossEntropy: return "cross_entropy";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  for (Activation a : {Activation::Linear, Activation::Tanh, Activation::Relu, Activation::Sigmoid}) {
    if (to_string(a) == s) return a;
  }
  throw ConfigInvalid("unknown activation '" + s + "'");
}

LayerKind layer_kind_from_string(const std::string& s) {
  for (LayerKind k : {LayerKind::Dense, LayerKind::Lstm, LayerKind::LayerNorm, LayerKind::Softmax}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigInvalid("unknown layer kind '" + s + "'");
}

Loss loss_from_string(const std::string& s) {
  for (Loss l : {Loss::MAE, Loss::MSE, Loss::CrossEntropy}) {
    if (to_string(l) == s) return l;
  }
  throw ConfigInvalid("unknown loss '" + s + "'");
}

// ---------------------------------------------------------------------------
// Spec

void NetworkSpec::validate() const {
  if (input_width < 1) throw ShapeMismatch("input width must be positive");
  if (layers.empty()) throw ShapeMismatch("network needs at least one layer");
  bool seen_dense = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if ((l.kind == LayerKind::Dense || l.kind == LayerKind::Lstm) && l.units < 1) {
      throw ShapeMismatch("layer " + std::to_string(i) + " needs positive units");
    }
    if (l.kind == LayerKind::Lstm && seen_dense) {
      throw ShapeMismatch("LSTM layers must precede dense layers");
    }
    if (l.kind == LayerKind::Softmax && i + 1 != layers.size()) {
      throw ShapeMismatch("softmax must be the final layer");
    }
    seen_dense = seen_dense || l.kind == LayerKind::Dense;
  }
}

int NetworkSpec::output_width() const {
  int w = input_width;
  for (const LayerSpec& l : layers) {
    if (l.kind == LayerKind::Dense || l.kind == LayerKind::Lstm) w = l.units;
  }
  return w;
}

bool NetworkSpec::recurrent() const {
  return std::any_of(layers.begin(), layers.end(),
                     [](const LayerSpec& l) { return l.kind == LayerKind::Lstm; });
}

json to_json(const NetworkSpec& s) {
  json layers = json::array();
  for (const LayerSpec& l : s.layers) {
    json j{{"kind", to_string(l.kind)}};
    if (l.kind == LayerKind::Dense || l.kind == LayerKind::Lstm) j["units"] = l.units;
    if (l.kind == LayerKind::Dense) j["activation"] = to_string(l.activation);
    layers.push_back(j);
  }
  return json{{"input_width", s.input_width}, {"layers", layers}, {"seed", s.seed}};
}

NetworkSpec network_spec_from_json(const json& j) {
  namespace jf = json_fields;
  jf::reject_unknown(j, {"input_width", "layers", "seed"}, "network");
  NetworkSpec s;
  jf::read(j, "input_width", s.input_width, "network");
  jf::read(j, "seed", s.seed, "network");
  if (!j.contains("layers") || !j["layers"].is_array()) throw ConfigInvalid("network.layers must be an array");
  for (const json& lj : j["layers"]) {
    jf::reject_unknown(lj, {"kind", "units", "activation"}, "network.layers[]");
    LayerSpec l;
    std::string kind;
    jf::read(lj, "kind", kind, "network.layers[]");
    l.kind = layer_kind_from_string(kind);
    jf::read(lj, "units", l.units, "network.layers[]");
    std::string act = l.kind == LayerKind::Lstm ? "tanh" : "linear";
    jf::read(lj, "activation", act, "network.layers[]");
    l.activation = activation_from_string(act);
    s.layers.push_back(l);
  }
  try {
    s.validate();
  } catch (const ShapeMismatch& e) {
    throw ConfigInvalid(e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Layers

namespace {

template <class T>
void xavier(Mat<T>& w, int fan_in, int fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (Eigen::Index c = 0; c < w.cols(); ++c)
    for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = static_cast<T>(u(rng));
}

template <class T>
Mat<T> sigmoid(const Mat<T>& z) {
  return (T(1) + (-z.array()).exp()).inverse().matrix();
}

template <class T>
class Dense final : public Layer<T> {
 public:
  Dense(int in, int out, Activation act, std::mt19937_64& rng)
      : act_(act), W_(out, in), b_(Mat<T>::Zero(out, 1)), dW_(Mat<T>::Zero(out, in)),
        db_(Mat<T>::Zero(out, 1)) {
    xavier(W_, in, out, rng);
  }
  LayerKind kind() const override { return LayerKind::Dense; }

  Seq<T> forward(const Seq<T>& x, bool train) override {
    Seq<T> y(x.size());
    for (std::size_t t = 0; t < x.size(); ++t) {
      Mat<T> z = W_ * x[t];
      z.colwise() += b_.col(0);
      y[t] = activate(z);
    }
    if (train) {
      x_ = x;
      y_ = y;
    }
    return y;
  }

  Seq<T> backward(const Seq<T>& dy) override {
    Seq<T> dx(dy.size());
    for (std::size_t t = 0; t < dy.size(); ++t) {
      if (dy[t].isZero(0)) {
        dx[t] = Mat<T>::Zero(W_.cols(), dy[t].cols());
        continue;
      }
      Mat<T> dz = dy[t];
      switch (act_) {
        case Activation::Linear: break;
        case Activation::Tanh: dz.array() *= T(1) - y_[t].array().square(); break;
        case Activation::Relu: dz.array() *= (y_[t].array() > T(0)).template cast<T>(); break;
        case Activation::Sigmoid: dz.array() *= y_[t].array() * (T(1) - y_[t].array()); break;
      }
      dW_.noalias() += dz * x_[t].transpose();
      db_ += dz.rowwise().sum();
      dx[t].noalias() = W_.transpose() * dz;
    }
    return dx;
  }

  std::vector<Mat<T>*> params() override { return {&W_, &b_}; }
  std::vector<Mat<T>*> grads() override { return {&dW_, &db_}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dense>(*this); }

 private:
  Mat<T> activate(const Mat<T>& z) const {
    switch (act_) {
      case Activation::Linear: return z;
      case Activation::Tanh: return z.array().tanh().matrix();
      case Activation::Relu: return z.cwiseMax(T(0));
      case Activation::Sigmoid: return sigmoid<T>(z);
    }
    return z;
  }

  Activation act_;
  Mat<T> W_, b_, dW_, db_;
  Seq<T> x_, y_;
};

// Gate order in the stacked weights: input, forget, cell candidate, output.
template <class T>
class Lstm final : public Layer<T> {
 public:
  Lstm(int in, int units, bool return_sequences, std::mt19937_64& rng)
      : H_(units), D_(in), seq_(return_sequences), W_(4 * units, in), U_(4 * units, units),
        b_(Mat<T>::Zero(4 * units, 1)), dW_(Mat<T>::Zero(4 * units, in)),
        dU_(Mat<T>::Zero(4 * units, units)), db_(Mat<T>::Zero(4 * units, 1)) {
    xavier(W_, in, 4 * units, rng);
    xavier(U_, units, 4 * units, rng);
    b_.block(units, 0, units, 1).setOnes();  // forget-gate bias
  }
  LayerKind kind() const override { return LayerKind::Lstm; }

  Seq<T> forward(const Seq<T>& x, bool train) override {
    const std::size_t steps = x.size();
    if (steps == 0) throw ShapeMismatch("LSTM needs at least one timestep");
    const Eigen::Index B = x[0].cols();
    for (const auto& xt : x) {
      if (xt.rows() != D_ || xt.cols() != B) throw ShapeMismatch("LSTM input width mismatch");
    }
    Mat<T> X(D_, static_cast<Eigen::Index>(steps) * B);
    for (std::size_t t = 0; t < steps; ++t) X.middleCols(static_cast<Eigen::Index>(t) * B, B) = x[t];
    Mat<T> Z = W_ * X;
    Z.colwise() += b_.col(0);

    Mat<T> h = Mat<T>::Zero(H_, B), c = Mat<T>::Zero(H_, B);
    Seq<T> out;
    if (train) {
      X_ = std::move(X);
      gates_.assign(steps, Mat<T>());
      cells_.assign(steps, Mat<T>());
      tanh_c_.assign(steps, Mat<T>());
      Hprev_.resize(H_, static_cast<Eigen::Index>(steps) * B);
      Cprev_.resize(H_, static_cast<Eigen::Index>(steps) * B);
      B_ = B;
    }
    for (std::size_t t = 0; t < steps; ++t) {
      Mat<T> z = Z.middleCols(static_cast<Eigen::Index>(t) * B, B);
      z.noalias() += U_ * h;
      Mat<T> g(4 * H_, B);
      g.topRows(2 * H_) = sigmoid<T>(z.topRows(2 * H_));
      g.middleRows(2 * H_, H_) = z.middleRows(2 * H_, H_).array().tanh().matrix();
      g.bottomRows(H_) = sigmoid<T>(z.bottomRows(H_));
      if (train) {
        Hprev_.middleCols(static_cast<Eigen::Index>(t) * B, B) = h;
        Cprev_.middleCols(static_cast<Eigen::Index>(t) * B, B) = c;
      }
      c = (g.middleRows(H_, H_).array() * c.array() +
           g.topRows(H_).array() * g.middleRows(2 * H_, H_).array())
              .matrix();
      Mat<T> tc = c.array().tanh().matrix();
      h = (g.bottomRows(H_).array() * tc.array()).matrix();
      if (train) {
        gates_[t] = std::move(g);
        cells_[t] = c;
        tanh_c_[t] = std::move(tc);
      }
      if (seq_) out.push_back(h);
    }
    if (!seq_) out.push_back(h);
    return out;
  }

  Seq<T> backward(const Seq<T>& dy) override {
    const std::size_t steps = gates_.size();
    const Eigen::Index B = B_;
    if (dy.size() != (seq_ ? steps : 1)) throw ShapeMismatch("LSTM gradient length mismatch");
    Mat<T> dZ(4 * H_, static_cast<Eigen::Index>(steps) * B);
    Mat<T> dh = Mat<T>::Zero(H_, B), dc = Mat<T>::Zero(H_, B);
    for (std::size_t k = steps; k-- > 0;) {
      if (seq_) {
        dh += dy[k];
      } else if (k + 1 == steps) {
        dh += dy[0];
      }
      const Mat<T>& g = gates_[k];
      const auto i = g.topRows(H_).array();
      const auto f = g.middleRows(H_, H_).array();
      const auto gg = g.middleRows(2 * H_, H_).array();
      const auto o = g.bottomRows(H_).array();
      const auto tc = tanh_c_[k].array();
      const auto c_prev = Cprev_.middleCols(static_cast<Eigen::Index>(k) * B, B).array();

      dc.array() += dh.array() * o * (T(1) - tc.square());
      auto dz = dZ.middleCols(static_cast<Eigen::Index>(k) * B, B);
      dz.topRows(H_) = (dc.array() * gg * i * (T(1) - i)).matrix();
      dz.middleRows(H_, H_) = (dc.array() * c_prev * f * (T(1) - f)).matrix();
      dz.middleRows(2 * H_, H_) = (dc.array() * i * (T(1) - gg.square())).matrix();
      dz.bottomRows(H_) = (dh.array() * tc * o * (T(1) - o)).matrix();
      dc = (dc.array() * f).matrix();
      dh.noalias() = U_.transpose() * dz;
    }
    dW_.noalias() += dZ * X_.transpose();
    dU_.noalias() += dZ * Hprev_.transpose();
    db_ += dZ.rowwise().sum();
    const Mat<T> dX = W_.transpose() * dZ;
    Seq<T> dx(steps);
    for (std::size_t t = 0; t < steps; ++t) dx[t] = dX.middleCols(static_cast<Eigen::Index>(t) * B, B);
    return dx;
  }

  std::vector<Mat<T>*> params() override { return {&W_, &U_, &b_}; }
  std::vector<Mat<T>*> grads() override { return {&dW_, &dU_, &db_}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Lstm>(*this); }

 private:
  int H_, D_;
  bool seq_;
  Mat<T> W_, U_, b_, dW_, dU_, db_;
  Mat<T> X_, Hprev_, Cprev_;
  Seq<T> gates_, cells_, tanh_c_;
  Eigen::Index B_ = 0;
};

template <class T>
class LayerNorm final : public Layer<T> {
 public:
  explicit LayerNorm(int width)
      : N_(width), gamma_(Mat<T>::Ones(width, 1)), beta_(Mat<T>::Zero(width, 1)),
        dgamma_(Mat<T>::Zero(width, 1)), dbeta_(Mat<T>::Zero(width, 1)) {}
  LayerKind kind() const override { return LayerKind::LayerNorm; }

  Seq<T> forward(const Seq<T>& x, bool train) override {
    Seq<T> y(x.size());
    if (train) {
      xhat_.assign(x.size(), Mat<T>());
      inv_.assign(x.size(), Mat<T>());
    }
    for (std::size_t t = 0; t < x.size(); ++t) {
      const Mat<T> mu = x[t].colwise().mean();
      Mat<T> xc = x[t].rowwise() - mu.row(0);
      const Mat<T> var = xc.array().square().colwise().mean().matrix();
      const Mat<T> inv = (var.array() + T(kEps)).rsqrt().matrix();
      Mat<T> xhat = (xc.array().rowwise() * inv.row(0).array()).matrix();
      y[t] = (xhat.array().colwise() * gamma_.col(0).array()).matrix();
      y[t].colwise() += beta_.col(0);
      if (train) {
        xhat_[t] = std::move(xhat);
        inv_[t] = inv;
      }
    }
    return y;
  }

  Seq<T> backward(const Seq<T>& dy) override {
    Seq<T> dx(dy.size());
    for (std::size_t t = 0; t < dy.size(); ++t) {
      const Mat<T>& xhat = xhat_[t];
      dgamma_ += (dy[t].array() * xhat.array()).rowwise().sum().matrix();
      dbeta_ += dy[t].rowwise().sum();
      const Mat<T> dxhat = (dy[t].array().colwise() * gamma_.col(0).array()).matrix();
      const Mat<T> s1 = dxhat.colwise().sum();
      const Mat<T> s2 = (dxhat.array() * xhat.array()).colwise().sum().matrix();
      Mat<T> r = (T(N_) * dxhat.array()).matrix();
      r.rowwise() -= s1.row(0);
      r.array() -= xhat.array().rowwise() * s2.row(0).array();
      dx[t] = (r.array().rowwise() * (inv_[t].row(0).array() / T(N_))).matrix();
    }
    return dx;
  }

  std::vector<Mat<T>*> params() override { return {&gamma_, &beta_}; }
  std::vector<Mat<T>*> grads() override { return {&dgamma_, &dbeta_}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<LayerNorm>(*this); }

 private:
  static constexpr double kEps = 1e-5;
  int N_;
  Mat<T> gamma_, beta_, dgamma_, dbeta_;
  Seq<T> xhat_, inv_;
};

template <class T>
class Softmax final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::Softmax; }

  Seq<T> forward(const Seq<T>& x, bool train) override {
    Seq<T> y(x.size());
    for (std::size_t t = 0; t < x.size(); ++t) {
      Mat<T> e = x[t].rowwise() - x[t].colwise().maxCoeff();
      e = e.array().exp().matrix();
      const Mat<T> s = e.colwise().sum();
      y[t] = (e.array().rowwise() / s.row(0).array()).matrix();
    }
    if (train) y_ = y;
    return y;
  }

  Seq<T> backward(const Seq<T>& dy) override {
    Seq<T> dx(dy.size());
    for (std::size_t t = 0; t < dy.size(); ++t) {
      const Mat<T> dot = (dy[t].array() * y_[t].array()).colwise().sum().matrix();
      Mat<T> d = dy[t];
      d.rowwise() -= dot.row(0);
      dx[t] = (d.array() * y_[t].array()).matrix();
    }
    return dx;
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Softmax>(*this); }

 private:
  Seq<T> y_;
};

template <class T>
void flatten_row_major(const Mat<T>& m, std::vector<double>& out) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(static_cast<double>(m(r, c)));
}

}  // namespace

// ---------------------------------------------------------------------------
// Network

template <class T>
Network<T>::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  std::mt19937_64 rng(spec_.seed);
  int width = spec_.input_width;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    switch (l.kind) {
      case LayerKind::Dense:
        layers_.push_back(std::make_unique<Dense<T>>(width, l.units, l.activation, rng));
        width = l.units;
        break;
      case LayerKind::Lstm: {
        bool later_lstm = false;
        for (std::size_t k = i + 1; k < spec_.layers.size(); ++k)
          later_lstm = later_lstm || spec_.layers[k].kind == LayerKind::Lstm;
        layers_.push_back(std::make_unique<Lstm<T>>(width, l.units, later_lstm, rng));
        width = l.units;
        break;
      }
      case LayerKind::LayerNorm: layers_.push_back(std::make_unique<LayerNorm<T>>(width)); break;
      case LayerKind::Softmax: layers_.push_back(std::make_unique<Softmax<T>>()); break;
    }
  }
}

template <class T>
Network<T>::Network(const Network& o) : spec_(o.spec_), last_steps_(o.last_steps_) {
  for (const auto& l : o.layers_) layers_.push_back(l->clone());
}

template <class T>
Network<T>& Network<T>::operator=(const Network& o) {
  if (this != &o) {
    Network tmp(o);
    *this = std::move(tmp);
  }
  return *this;
}

template <class T>
Mat<T> Network<T>::forward(const Seq<T>& x, bool train) {
  if (x.empty()) throw ShapeMismatch("empty input sequence");
  for (const auto& xt : x) {
    if (xt.rows() != spec_.input_width || xt.cols() != x[0].cols()) {
      throw ShapeMismatch("input width " + std::to_string(xt.rows()) + " != " +
                          std::to_string(spec_.input_width));
    }
  }
  Seq<T> h = x;
  for (auto& l : layers_) h = l->forward(h, train);
  last_steps_ = h.size();
  return h.back();
}

template <class T>
void Network<T>::backward(const Mat<T>& d_output) {
  if (last_steps_ == 0) throw InvalidArgument("backward without a training forward pass");
  Seq<T> d(last_steps_);
  for (std::size_t t = 0; t + 1 < last_steps_; ++t) d[t] = Mat<T>::Zero(d_output.rows(), d_output.cols());
  d.back() = d_output;
  for (std::size_t i = layers_.size(); i-- > 0;) d = layers_[i]->backward(d);
}

template <class T>
void Network<T>::zero_grad() {
  for (Mat<T>* g : grads()) g->setZero();
}

template <class T>
std::vector<Mat<T>*> Network<T>::params() {
  std::vector<Mat<T>*> out;
  for (auto& l : layers_)
    for (Mat<T>* p : l->params()) out.push_back(p);
  return out;
}

template <class T>
std::vector<const Mat<T>*> Network<T>::params() const {
  std::vector<const Mat<T>*> out;
  for (auto& l : layers_)
    for (Mat<T>* p : l->params()) out.push_back(p);
  return out;
}

template <class T>
std::vector<Mat<T>*> Network<T>::grads() {
  std::vector<Mat<T>*> out;
  for (auto& l : layers_)
    for (Mat<T>* g : l->grads()) out.push_back(g);
  return out;
}

template <class T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const Mat<T>* p : params()) n += static_cast<std::size_t>(p->size());
  return n;
}

template <class T>
std::vector<double> Network<T>::flat_parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const Mat<T>* p : params()) flatten_row_major(*p, out);
  return out;
}

template <class T>
void Network<T>::set_flat_parameters(const std::vector<double>& v) {
  if (v.size() != parameter_count()) throw ShapeMismatch("parameter count mismatch");
  std::size_t k = 0;
  for (Mat<T>* p : params()) {
    for (Eigen::Index r = 0; r < p->rows(); ++r)
      for (Eigen::Index c = 0; c < p->cols(); ++c) (*p)(r, c) = static_cast<T>(v[k++]);
  }
}

template <class T>
json Network<T>::to_json(const std::string& config_hash) const {
  json tensors = json::array();
  for (const Mat<T>* p : params()) {
    std::vector<double> flat;
    flatten_row_major(*p, flat);
    tensors.push_back({{"shape", {p->rows(), p->cols()}}, {"values", flat}});
  }
  return json{{"format", "tactile-nn-weights"},
              {"version", 1},
              {"config_hash", config_hash},
              {"spec", nn::to_json(spec_)},
              {"params", tensors}};
}

template <class T>
Network<T> Network<T>::from_json(const json& j, const std::optional<std::string>& expected_hash) {
  if (j.value("format", "") != "tactile-nn-weights") throw ConfigInvalid("not a weights document");
  if (j.value("version", 0) != 1) throw ConfigInvalid("unsupported weights version");
  const std::string hash = j.value("config_hash", "");
  if (expected_hash && *expected_hash != hash) {
    throw HashMismatch("weights were produced by config " + hash + ", expected " + *expected_hash);
  }
  Network net(network_spec_from_json(j.at("spec")));
  const json& ps = j.at("params");
  auto mats = net.params();
  if (ps.size() != mats.size()) throw ShapeMismatch("weights document has wrong tensor count");
  for (std::size_t i = 0; i < mats.size(); ++i) {
    const auto shape = ps[i].at("shape").get<std::array<Eigen::Index, 2>>();
    const auto values = ps[i].at("values").get<std::vector<double>>();
    if (shape[0] != mats[i]->rows() || shape[1] != mats[i]->cols() ||
        static_cast<Eigen::Index>(values.size()) != mats[i]->size()) {
      throw ShapeMismatch("weights tensor " + std::to_string(i) + " has the wrong shape");
    }
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < shape[0]; ++r)
      for (Eigen::Index c = 0; c < shape[1]; ++c) (*mats[i])(r, c) = static_cast<T>(values[k++]);
  }
  return net;
}

// ---------------------------------------------------------------------------
// Loss and optimization

template <class T>
T loss_value(Loss loss, const Mat<T>& pred, const Mat<T>& target, Mat<T>* grad) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw ShapeMismatch("prediction and target shapes differ");
  }
  const T n = static_cast<T>(pred.size());
  const T batch = static_cast<T>(pred.cols());
  const auto diff = (pred - target).array();
  switch (loss) {
    case Loss::MAE:
      if (grad) *grad = (diff.sign() / n).matrix();
      return diff.abs().sum() / n;
    case Loss::MSE:
      if (grad) *grad = (T(2) * diff / n).matrix();
      return diff.square().sum() / n;
    case Loss::CrossEntropy: {
      const auto p = pred.array().max(T(1e-12));
      if (grad) *grad = (-target.array() / p / batch).matrix();
      return -(target.array() * p.log()).sum() / batch;
    }
  }
  return T(0);
}

template <class T>
void Optimizer<T>::step(Network<T>& net) {
  auto ps = net.params();
  auto gs = net.grads();
  if (config_.clip_norm > 0) {
    double sq = 0.0;
    for (Mat<T>* g : gs) sq += static_cast<double>(g->squaredNorm());
    const double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) {
      const T s = static_cast<T>(config_.clip_norm / norm);
      for (Mat<T>* g : gs) *g *= s;
    }
  }
  if (config_.kind == OptimizerConfig::Kind::SGD) {
    const T lr = static_cast<T>(config_.learning_rate);
    for (std::size_t i = 0; i < ps.size(); ++i) *ps[i] -= lr * *gs[i];
    return;
  }
  if (m_.size() != ps.size()) {
    m_.clear();
    v_.clear();
    for (Mat<T>* p : ps) {
      m_.push_back(Mat<T>::Zero(p->rows(), p->cols()));
      v_.push_back(Mat<T>::Zero(p->rows(), p->cols()));
    }
    t_ = 0;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const T lr_t = static_cast<T>(config_.learning_rate * std::sqrt(bc2) / bc1);
  const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
  const T eps = static_cast<T>(config_.epsilon * std::sqrt(bc2));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    m_[i] = b1 * m_[i] + (T(1) - b1) * *gs[i];
    v_[i] = b2 * v_[i] + (T(1) - b2) * gs[i]->cwiseAbs2();
    ps[i]->array() -= lr_t * m_[i].array() / (v_[i].array().sqrt() + eps);
  }
}

template <class T>
T train_step(Network<T>& net, Optimizer<T>& opt, const Seq<T>& x, const Mat<T>& y, Loss loss) {
  const Mat<T> pred = net.forward(x, true);
  Mat<T> grad;
  const T value = loss_value(loss, pred, y, &grad);
  if (!std::isfinite(static_cast<double>(value))) throw NaNLoss("non-finite training loss");
  net.zero_grad();
  net.backward(grad);
  opt.step(net);
  return value;
}

template <class T>
Seq<T> SequenceData<T>::gather_x(const std::vector<std::size_t>& idx) const {
  Seq<T> out(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    out[t].resize(x[t].rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k)
      out[t].col(static_cast<Eigen::Index>(k)) = x[t].col(static_cast<Eigen::Index>(idx[k]));
  }
  return out;
}

template <class T>
Mat<T> SequenceData<T>::gather_y(const std::vector<std::size_t>& idx) const {
  Mat<T> out(y.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k)
    out.col(static_cast<Eigen::Index>(k)) = y.col(static_cast<Eigen::Index>(idx[k]));
  return out;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigInvalid("learning_rate must be > 0");
  if (batch_size < 1) throw ConfigInvalid("batch_size must be >= 1");
  if (epochs < 1) throw ConfigInvalid("epochs must be >= 1");
}

json to_json(const TrainConfig& c) {
  return json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
              {"epochs", c.epochs},               {"loss", to_string(c.loss)},
              {"early_selection", c.early_selection}, {"clip_norm", c.clip_norm},
              {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  namespace jf = json_fields;
  const std::string where = "train";
  jf::reject_unknown(j, {"learning_rate", "batch_size", "epochs", "loss", "early_selection",
                         "clip_norm", "seed"},
                     where);
  TrainConfig c;
  jf::read(j, "learning_rate", c.learning_rate, where);
  jf::read(j, "batch_size", c.batch_size, where);
  jf::read(j, "epochs", c.epochs, where);
  std::string loss = to_string(c.loss);
  jf::read(j, "loss", loss, where);
  c.loss = loss_from_string(loss);
  jf::read(j, "early_selection", c.early_selection, where);
  jf::read(j, "clip_norm", c.clip_norm, where);
  jf::read(j, "seed", c.seed, where);
  c.validate();
  return c;
}

template <class T>
Mat<T> predict(Network<T>& net, const SequenceData<T>& data, int batch) {
  const std::size_t n = data.size();
  Mat<T> out(net.spec().output_width(), static_cast<Eigen::Index>(n));
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch)) {
    idx.clear();
    for (std::size_t i = start; i < std::min(n, start + static_cast<std::size_t>(batch)); ++i) idx.push_back(i);
    out.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(idx.size())) =
        net.forward(data.gather_x(idx), false);
  }
  return out;
}

template <class T>
double mean_loss(Network<T>& net, const SequenceData<T>& data, Loss loss, int batch) {
  const Mat<T> pred = predict(net, data, batch);
  return static_cast<double>(loss_value<T>(loss, pred, data.y, nullptr));
}

template <class T>
TrainHistory fit(Network<T>& net, const SequenceData<T>& train, const SequenceData<T>* val,
                 const TrainConfig& cfg) {
  cfg.validate();
  if (train.size() == 0) throw InvalidArgument("empty training set");
  OptimizerConfig oc;
  oc.learning_rate = cfg.learning_rate;
  oc.clip_norm = cfg.clip_norm;
  Optimizer<T> opt(oc);
  TrainHistory hist;
  std::vector<double> best = net.flat_parameters();
  hist.best_val_loss = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> idx;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    const std::vector<double> before = net.flat_parameters();
    double sum = 0.0;
    std::size_t batches = 0;
    try {
      for (std::size_t s = 0; s < order.size(); s += bs) {
        idx.assign(order.begin() + static_cast<std::ptrdiff_t>(s),
                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + bs)));
        sum += static_cast<double>(train_step(net, opt, train.gather_x(idx), train.gather_y(idx), cfg.loss));
        ++batches;
      }
    } catch (const NaNLoss& e) {
      log::warn(std::string(e.what()) + " in epoch " + std::to_string(epoch) +
                "; restoring the weights from the start of the epoch");
      net.set_flat_parameters(before);
      hist.aborted = true;
      break;
    }
    hist.train_loss.push_back(sum / static_cast<double>(batches));
    if (val && val->size() > 0) {
      const double vl = mean_loss(net, *val, cfg.loss);
      hist.val_loss.push_back(vl);
      if (vl < hist.best_val_loss) {
        hist.best_val_loss = vl;
        hist.best_epoch = epoch;
        best = net.flat_parameters();
      }
    }
  }
  if (cfg.early_selection && hist.best_epoch >= 0) net.set_flat_parameters(best);
  return hist;
}

GradCheckResult gradient_check(Network<double>& net, const Seq<double>& x, const Mat<double>& y,
                               Loss loss, double h) {
  const Mat<double> pred = net.forward(x, true);
  Mat<double> grad;
  loss_value<double>(loss, pred, y, &grad);
  net.zero_grad();
  net.backward(grad);
  std::vector<Mat<double>> analytic;
  for (Mat<double>* g : net.grads()) analytic.push_back(*g);

  GradCheckResult res;
  auto ps = net.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (Eigen::Index k = 0; k < ps[i]->size(); ++k) {
      double& w = ps[i]->data()[k];
      const double saved = w;
      w = saved + h;
      const double lp = loss_value<double>(loss, net.forward(x, false), y, nullptr);
      w = saved - h;
      const double lm = loss_value<double>(loss, net.forward(x, false), y, nullptr);
      w = saved;
      const double num = (lp - lm) / (2.0 * h);
      const double a = analytic[i].data()[k];
      const double rel = std::abs(a - num) / std::max(std::abs(a) + std::abs(num), 1e-8);
      res.max_relative_error = std::max(res.max_relative_error, rel);
      ++res.checked;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Ridge and metrics

Eigen::VectorXd fit_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda) {
  if (X.rows() != y.size()) throw ShapeMismatch("ridge: X rows != y size");
  if (lambda < 0) throw InvalidArgument("ridge: lambda must be >= 0");
  Eigen::MatrixXd A = X.transpose() * X;
  A.diagonal().array() += lambda;
  const Eigen::VectorXd rhs = X.transpose() * y;
  if (lambda == 0.0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (qr.rank() < X.cols()) throw Singular("ridge: rank-deficient design with lambda = 0");
    return qr.solve(y);
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  if (ldlt.info() != Eigen::Success) throw Singular("ridge: factorization failed");
  return ldlt.solve(rhs);
}

json to_json(const MetricsReport& m) {
  return json{{"mae", m.mae}, {"mse", m.mse}, {"r2", m.r2}, {"exp", m.exp}};
}

MetricsReport evaluate(const std::vector<double>& p, const std::vector<double>& t) {
  if (p.size() != t.size() || t.size() < 2) {
    throw InvalidArgument("evaluate needs equal lengths >= 2");
  }
  const double n = static_cast<double>(t.size());
  double mean_t = 0.0, mean_r = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    mean_t += t[i];
    mean_r += t[i] - p[i];
  }
  mean_t /= n;
  mean_r /= n;
  MetricsReport m;
  double ss_tot = 0.0, ss_res = 0.0, var_r = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double r = t[i] - p[i];
    m.mae += std::abs(r);
    ss_res += r * r;
    ss_tot += (t[i] - mean_t) * (t[i] - mean_t);
    var_r += (r - mean_r) * (r - mean_r);
  }
  if (ss_tot == 0.0) throw ZeroTargetVariance("targets are constant");
  m.mae /= n;
  m.mse = ss_res / n;
  m.r2 = 1.0 - ss_res / ss_tot;
  m.exp = 1.0 - var_r / ss_tot;
  return m;
}

MetricSummary summarize(const std::vector<MetricsReport>& rs) {
  MetricSummary s;
  s.count = rs.size();
  if (rs.empty()) return s;
  const double n = static_cast<double>(rs.size());
  for (const auto& r : rs) {
    s.mean.mae += r.mae / n;
    s.mean.mse += r.mse / n;
    s.mean.r2 += r.r2 / n;
    s.mean.exp += r.exp / n;
  }
  for (const auto& r : rs) {
    s.stddev.mae += (r.mae - s.mean.mae) * (r.mae - s.mean.mae) / n;
    s.stddev.mse += (r.mse - s.mean.mse) * (r.mse - s.mean.mse) / n;
    s.stddev.r2 += (r.r2 - s.mean.r2) * (r.r2 - s.mean.r2) / n;
    s.stddev.exp += (r.exp - s.mean.exp) * (r.exp - s.mean.exp) / n;
  }
  s.stddev.mae = std::sqrt(s.stddev.mae);
  s.stddev.mse = std::sqrt(s.stddev.mse);
  s.stddev.r2 = std::sqrt(s.stddev.r2);
  s.stddev.exp = std::sqrt(s.stddev.exp);
  return s;
}

template class Network<float>;
template class Network<double>;
template class Optimizer<float>;
template class Optimizer<double>;
template struct SequenceData<float>;
template struct SequenceData<double>;
template float loss_value<float>(Loss, const Mat<float>&, const Mat<float>&, Mat<float>*);
template double loss_value<double>(Loss, const Mat<double>&, const Mat<double>&, Mat<double>*);
template float train_step<float>(Network<float>&, Optimizer<float>&, const Seq<float>&,
                                 const Mat<float>&, Loss);
template double train_step<double>(Network<double>&, Optimizer<double>&, const Seq<double>&,
                                   const Mat<double>&, Loss);
template TrainHistory fit<float>(Network<float>&, const SequenceData<float>&,
                                 const SequenceData<float>*, const TrainConfig&);
template TrainHistory fit<double>(Network<double>&, const SequenceData<double>&,
                                  const SequenceData<double>*, const TrainConfig&);
template Mat<float> predict<float>(Network<float>&, const SequenceData<float>&, int);
template Mat<double> predict<double>(Network<double>&, const SequenceData<double>&, int);
template double mean_loss<float>(Network<float>&, const SequenceData<float>&, Loss, int);
template double mean_loss<double>(Network<double>&, const SequenceData<double>&, Loss, int);

}  // namespace tactile::nn
