#include <doctest.h>

#include <cmath>
#include <random>

#include "tactile/errors.hpp"
#include "tactile/learning.hpp"
#include "tactile/log.hpp"

using namespace tactile;
using namespace tactile::nn;

namespace {

Seq<double> random_seq(int width, int steps, int batch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Seq<double> x(steps, Mat<double>(width, batch));
  for (auto& m : x)
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return x;
}

Mat<double> random_mat(int r, int c, std::uint64_t seed) { return random_seq(r, 1, c, seed)[0]; }

double sigm(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST_CASE("gradient check per layer type") {
  struct Case {
    const char* name;
    NetworkSpec spec;
    int steps;
    Loss loss;
  };
  std::vector<Case> cases = {
      {"dense tanh", {3, {LayerSpec::dense(4, Activation::Tanh), LayerSpec::dense(2)}, 1}, 1, Loss::MSE},
      {"dense sigmoid", {3, {LayerSpec::dense(4, Activation::Sigmoid), LayerSpec::dense(1)}, 2}, 1, Loss::MSE},
      {"dense relu", {3, {LayerSpec::dense(5, Activation::Relu), LayerSpec::dense(2)}, 3}, 1, Loss::MSE},
      {"layernorm", {4, {LayerSpec::layernorm(), LayerSpec::dense(2)}, 4}, 1, Loss::MSE},
      {"softmax ce", {3, {LayerSpec::dense(4), LayerSpec::softmax()}, 5}, 1, Loss::CrossEntropy},
      {"lstm", {2, {LayerSpec::lstm(3), LayerSpec::dense(1)}, 6}, 5, Loss::MSE},
      {"stacked lstm", {2, {LayerSpec::lstm(4), LayerSpec::lstm(3), LayerSpec::dense(2)}, 7}, 4, Loss::MSE},
      {"composed",
       {3,
        {LayerSpec::lstm(4), LayerSpec::layernorm(), LayerSpec::dense(5, Activation::Tanh),
         LayerSpec::dense(3), LayerSpec::softmax()},
        8},
       3,
       Loss::CrossEntropy},
  };
  for (auto& c : cases) {
    CAPTURE(c.name);
    Network<double> net(c.spec);
    const int out = c.spec.output_width();
    auto x = random_seq(c.spec.input_width, c.steps, 3, 100);
    Mat<double> y = random_mat(out, 3, 200);
    if (c.loss == Loss::CrossEntropy) {
      y = y.array().abs().matrix();
      y.array().rowwise() /= y.colwise().sum().array();
    }
    auto r = gradient_check(net, x, y, c.loss);
    CHECK(r.checked == net.parameter_count());
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("zero weights give zero output and identity dense reproduces input") {
  Network<double> net({3, {LayerSpec::dense(4, Activation::Tanh), LayerSpec::dense(2)}, 1});
  net.set_flat_parameters(std::vector<double>(net.parameter_count(), 0.0));
  CHECK(net.forward(random_mat(3, 5, 1)).isZero(0));

  Network<double> id({3, {LayerSpec::dense(3)}, 1});
  std::vector<double> p = {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0};
  id.set_flat_parameters(p);
  const Mat<double> x = random_mat(3, 4, 2);
  CHECK((id.forward(x) - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("LSTM matches a scalar hand-rolled cell") {
  Network<double> net({2, {LayerSpec::lstm(2)}, 11});
  auto x = random_seq(2, 6, 1, 12);
  const auto ps = net.params();
  const Mat<double>& W = *ps[0];
  const Mat<double>& U = *ps[1];
  const Mat<double>& b = *ps[2];
  const int H = 2;
  std::vector<double> h(H, 0.0), c(H, 0.0);
  for (const auto& xt : x) {
    std::vector<double> nh(H), nc(H);
    for (int k = 0; k < H; ++k) {
      auto pre = [&](int gate) {
        double z = b(gate * H + k, 0);
        for (int d = 0; d < 2; ++d) z += W(gate * H + k, d) * xt(d, 0);
        for (int j = 0; j < H; ++j) z += U(gate * H + k, j) * h[j];
        return z;
      };
      const double i = sigm(pre(0)), f = sigm(pre(1)), g = std::tanh(pre(2)), o = sigm(pre(3));
      nc[k] = f * c[k] + i * g;
      nh[k] = o * std::tanh(nc[k]);
    }
    h = nh;
    c = nc;
  }
  const Mat<double> y = net.forward(x);
  for (int k = 0; k < H; ++k) CHECK(std::abs(y(k, 0) - h[k]) < 1e-10);
  // Forget-gate bias starts at one.
  CHECK(b(2, 0) == 1.0);
  CHECK(b(3, 0) == 1.0);
  CHECK(b(0, 0) == 0.0);
}

TEST_CASE("one SGD step on a convex quadratic lowers the loss") {
  Network<double> net({2, {LayerSpec::dense(1)}, 3});
  const Mat<double> x = random_mat(2, 16, 4);
  Mat<double> y = (Mat<double>(1, 2) << 1.5, -0.5).finished() * x;
  OptimizerConfig oc;
  oc.kind = OptimizerConfig::Kind::SGD;
  oc.learning_rate = 0.05;
  Optimizer<double> opt(oc);
  const double before = loss_value<double>(Loss::MSE, net.forward(x), y, nullptr);
  train_step<double>(net, opt, Seq<double>{x}, y, Loss::MSE);
  const double after = loss_value<double>(Loss::MSE, net.forward(x), y, nullptr);
  CHECK(after < before);
}

TEST_CASE("loss values and gradients") {
  Mat<double> p(1, 4), t(1, 4), g;
  p << 1, 2, 3, 4;
  t << 1, 0, 5, 4;
  CHECK(loss_value<double>(Loss::MAE, p, t, &g) == doctest::Approx(1.0));
  CHECK(g(0, 0) == 0.0);  // subgradient at zero residual
  CHECK(g(0, 1) == doctest::Approx(0.25));
  CHECK(g(0, 2) == doctest::Approx(-0.25));
  CHECK(g(0, 3) == 0.0);
  CHECK(loss_value<double>(Loss::MSE, p, t, &g) == doctest::Approx(2.0));
  CHECK(g(0, 1) == doctest::Approx(1.0));
  Mat<double> q(2, 1), y(2, 1);
  q << 0.25, 0.75;
  y << 0.0, 1.0;
  CHECK(loss_value<double>(Loss::CrossEntropy, q, y, nullptr) == doctest::Approx(-std::log(0.75)));
  CHECK_THROWS_AS(loss_value<double>(Loss::MSE, p, q, nullptr), ShapeMismatch);
}

TEST_CASE("softmax outputs are a distribution") {
  Network<double> net({5, {LayerSpec::dense(4), LayerSpec::softmax()}, 9});
  Mat<double> x = random_mat(5, 7, 10) * 300.0;  // large logits stay finite
  const Mat<double> y = net.forward(x);
  CHECK(y.allFinite());
  CHECK((y.array() >= 0).all());
  for (Eigen::Index c = 0; c < y.cols(); ++c) CHECK(y.col(c).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS(Network<double>({3, {}, 0}), ShapeMismatch);
  CHECK_THROWS_AS(Network<double>({3, {LayerSpec::softmax(), LayerSpec::dense(2)}, 0}), ShapeMismatch);
  CHECK_THROWS_AS(Network<double>({3, {LayerSpec::dense(2), LayerSpec::lstm(2)}, 0}), ShapeMismatch);
  Network<double> net({3, {LayerSpec::dense(2)}, 0});
  CHECK_THROWS_AS(net.forward(random_mat(4, 2, 1)), ShapeMismatch);
  CHECK_THROWS_AS(network_spec_from_json(nlohmann::json{{"input_width", 2}, {"layers", nlohmann::json::array()}}),
                  ConfigInvalid);
  CHECK_THROWS_AS(network_spec_from_json(nlohmann::json{{"input_width", 2}, {"bogus", 1}}), ConfigInvalid);
}

TEST_CASE("ridge regression") {
  SUBCASE("recovers a slope") {
    Eigen::MatrixXd X(5, 1);
    Eigen::VectorXd y(5);
    X << 1, 2, 3, 4, 5;
    y = 2.0 * X.col(0);
    CHECK(fit_ridge(X, y, 0.0)(0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(std::abs(fit_ridge(X, y, 1e12)(0)) < 1e-9);
  }
  SUBCASE("matches naive normal equations") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n;
    Eigen::MatrixXd X(50, 5);
    Eigen::VectorXd y(50);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = n(rng);
    const double lambda = 0.7;
    // Gauss-Jordan on the augmented normal equations.
    std::vector<std::vector<double>> A(5, std::vector<double>(6, 0.0));
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 5; ++c)
        for (int k = 0; k < 50; ++k) A[r][c] += X(k, r) * X(k, c);
      A[r][r] += lambda;
      for (int k = 0; k < 50; ++k) A[r][5] += X(k, r) * y(k);
    }
    for (int p = 0; p < 5; ++p) {
      for (int r = 0; r < 5; ++r) {
        if (r == p) continue;
        const double f = A[r][p] / A[p][p];
        for (int c = 0; c < 6; ++c) A[r][c] -= f * A[p][c];
      }
    }
    const Eigen::VectorXd w = fit_ridge(X, y, lambda);
    for (int r = 0; r < 5; ++r) CHECK(std::abs(w(r) - A[r][5] / A[r][r]) < 1e-8);
  }
  SUBCASE("singular") {
    Eigen::MatrixXd X(4, 2);
    X << 1, 2, 2, 4, 3, 6, 4, 8;
    Eigen::VectorXd y(4);
    y << 1, 2, 3, 4;
    CHECK_THROWS_AS(fit_ridge(X, y, 0.0), Singular);
    CHECK_NOTHROW(fit_ridge(X, y, 0.1));
  }
}

TEST_CASE("regression metrics") {
  const std::vector<double> t = {1, 2, 3, 4, 5};
  auto perfect = evaluate(t, t);
  CHECK(perfect.mae == 0.0);
  CHECK(perfect.mse == 0.0);
  CHECK(perfect.r2 == 1.0);
  CHECK(perfect.exp == 1.0);

  auto mean = evaluate(std::vector<double>(5, 3.0), t);
  CHECK(mean.r2 == doctest::Approx(0.0));
  CHECK(mean.exp == doctest::Approx(0.0));
  CHECK(mean.mae == doctest::Approx(1.2));
  CHECK(mean.mse == doctest::Approx(2.0));

  // A constant offset is invisible to explained variance but not to R2.
  std::vector<double> off = t;
  for (double& v : off) v += 1.0;
  auto o = evaluate(off, t);
  CHECK(o.exp == doctest::Approx(1.0));
  CHECK(o.r2 == doctest::Approx(1.0 - 5.0 / 10.0));
  CHECK(o.mae == doctest::Approx(1.0));

  CHECK_THROWS_AS(evaluate({1.0}, {1.0}), InvalidArgument);
  CHECK_THROWS_AS(evaluate({1.0, 2.0}, {1.0}), InvalidArgument);
  CHECK_THROWS_AS(evaluate({1.0, 2.0}, {3.0, 3.0}), ZeroTargetVariance);

  auto s = summarize({perfect, mean});
  CHECK(s.count == 2);
  CHECK(s.mean.r2 == doctest::Approx(0.5));
  CHECK(s.stddev.r2 == doctest::Approx(0.5));
}

namespace {

SequenceData<float> toy_sequences(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd;
  SequenceData<float> d;
  d.x.assign(4, Mat<float>(2, static_cast<Eigen::Index>(n)));
  d.y.resize(1, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    float s = 0;
    for (int t = 0; t < 4; ++t) {
      d.x[t](0, i) = nd(rng);
      d.x[t](1, i) = nd(rng);
      s += d.x[t](0, i) * 0.5f - d.x[t](1, i) * 0.25f;
    }
    d.y(0, i) = std::tanh(s);
  }
  return d;
}

}  // namespace

TEST_CASE("training is bit-reproducible and early selection never worsens validation") {
  const auto train = toy_sequences(256, 1);
  const auto val = toy_sequences(64, 2);
  NetworkSpec spec{2, {LayerSpec::lstm(8), LayerSpec::dense(1)}, 42};
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.learning_rate = 1e-2;
  cfg.seed = 7;

  Network<float> a(spec), b(spec);
  auto ha = fit(a, train, &val, cfg);
  auto hb = fit(b, train, &val, cfg);
  CHECK(a.flat_parameters() == b.flat_parameters());
  CHECK(ha.train_loss == hb.train_loss);
  CHECK(ha.val_loss.size() == 12);
  CHECK(ha.train_loss.back() < ha.train_loss.front());
  CHECK_FALSE(ha.aborted);

  const double selected = mean_loss(a, val, Loss::MAE);
  CHECK(selected == doctest::Approx(ha.best_val_loss).epsilon(1e-6));
  CHECK(selected <= ha.val_loss.back() + 1e-9);

  cfg.early_selection = false;
  Network<float> c(spec);
  auto hc = fit(c, train, &val, cfg);
  CHECK(mean_loss(c, val, Loss::MAE) == doctest::Approx(hc.val_loss.back()).epsilon(1e-6));
}

TEST_CASE("float and double networks start from identical weights") {
  NetworkSpec spec{3, {LayerSpec::lstm(4), LayerSpec::dense(2)}, 99};
  Network<float> f(spec);
  Network<double> d(spec);
  const auto pf = f.flat_parameters();
  const auto pd = d.flat_parameters();
  REQUIRE(pf.size() == pd.size());
  for (std::size_t i = 0; i < pf.size(); ++i) CHECK(pf[i] == static_cast<double>(static_cast<float>(pd[i])));
}

TEST_CASE("NaN loss aborts training and keeps finite weights") {
  auto train = toy_sequences(64, 3);
  train.y(0, 5) = std::numeric_limits<float>::quiet_NaN();
  Network<float> net({2, {LayerSpec::dense(1)}, 1});
  const auto start = net.flat_parameters();
  std::vector<std::string> warnings;
  auto prev = log::set_sink([&](log::Level, const std::string& m) { warnings.push_back(m); });
  TrainConfig cfg;
  cfg.epochs = 3;
  auto h = fit<float>(net, train, nullptr, cfg);
  log::set_sink(prev);
  CHECK(h.aborted);
  CHECK(h.train_loss.empty());
  CHECK(net.flat_parameters() == start);
  CHECK(warnings.size() == 1);

  Optimizer<float> opt;
  auto idx = std::vector<std::size_t>{5};
  CHECK_THROWS_AS(train_step(net, opt, train.gather_x(idx), train.gather_y(idx), Loss::MSE), NaNLoss);
  CHECK(net.flat_parameters() == start);
}

TEST_CASE("weights JSON round trip and hash check") {
  NetworkSpec spec{3, {LayerSpec::lstm(4), LayerSpec::layernorm(), LayerSpec::dense(2, Activation::Tanh)}, 5};
  Network<double> net(spec);
  const auto j = net.to_json("abc123");
  auto back = Network<double>::from_json(nlohmann::json::parse(j.dump()), std::string("abc123"));
  CHECK(back.flat_parameters() == net.flat_parameters());
  auto x = random_seq(3, 4, 2, 8);
  CHECK((back.forward(x) - net.forward(x)).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(Network<double>::from_json(j, std::string("other")), HashMismatch);
  CHECK_NOTHROW(Network<double>::from_json(j));
  auto bad = j;
  bad["params"][0]["shape"] = {1, 1};
  CHECK_THROWS_AS(Network<double>::from_json(bad), ShapeMismatch);
}

TEST_CASE("train config strictness") {
  TrainConfig c;
  c.epochs = 5;
  c.loss = Loss::MSE;
  auto back = train_config_from_json(to_json(c));
  CHECK(back.epochs == 5);
  CHECK(back.loss == Loss::MSE);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"epoch", 3}}), ConfigInvalid);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"batch_size", 0}}), ConfigInvalid);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"loss", "hinge"}}), ConfigInvalid);
}
