#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "hallab/mlp.hpp"
#include "hallab/rng.hpp"
#include "hallab/sphere.hpp"

using namespace hallab;
using namespace hallab::mlp;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MlpModel hand_model() {
  MlpModel m = init({{2, 1, 1}, 1.0, 0});
  m.weights[0] << 1.0, -2.0;
  m.biases[0] << 0.5;
  m.weights[1] << 3.0;
  m.biases[1] << -1.0;
  return m;
}

VectorXd signs(Eigen::Index n, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = uniform01(rng) < 0.5 ? -1.0 : 1.0;
  return y;
}

}  // namespace

TEST_CASE("init is deterministic and scaled by fan-in") {
  const MlpConfig c{{3, 512, 512, 1}, 1.5, 11};
  const MlpModel a = init(c), b = init(c);
  CHECK(flatten(a) == flatten(b));
  CHECK(flatten(a) != flatten(init({{3, 512, 512, 1}, 1.5, 12})));
  for (const auto& bias : a.biases) CHECK(bias.isZero(0.0));
  const MatrixXd& W = a.weights[1];
  const double mean = W.mean();
  const double var = (W.array() - mean).square().sum() / double(W.size() - 1);
  CHECK(std::abs(var / (1.5 * 1.5 / 512) - 1.0) <= 0.1);
  CHECK(a.num_parameters() == 3 * 512 + 512 + 512 * 512 + 512 + 512 + 1);
}

TEST_CASE("zero init scale gives the zero function") {
  const MlpModel m = init({{4, 16, 16, 1}, 0.0, 3});
  const MatrixXd X = sphere::sample_uniform_sphere(3, 20, 1);
  CHECK(forward_batch(m, X).isZero(0.0));
}

TEST_CASE("hand-set network") {
  const MlpModel m = hand_model();
  VectorXd x(2);
  x << 2.0, 0.5;
  CHECK(forward(m, x) == doctest::Approx(3.5));  // relu(2 - 1 + 0.5) * 3 - 1
  x << 0.0, 1.0;
  CHECK(forward(m, x) == -1.0);  // dead unit leaves the output bias
  CHECK_THROWS_AS(forward(m, VectorXd::Ones(3)), InvalidArgument);
}

TEST_CASE("zero final layer outputs zero") {
  MlpModel m = init({{4, 32, 1}, 1.0, 5});
  m.weights.back().setZero();
  const MatrixXd X = sphere::sample_uniform_sphere(3, 10, 6);
  CHECK(forward_batch(m, X).isZero(0.0));
}

TEST_CASE("analytic gradient matches central differences") {
  for (std::uint64_t seed : {1, 2, 3}) {
    MlpModel m = init({{4, 6, 5, 1}, 1.4, seed});
    Rng rng = make_rng(seed + 100);
    for (auto& b : m.biases)
      for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = 0.2 * (uniform01(rng) - 0.5);
    const MatrixXd X = sphere::sample_uniform_sphere(3, 9, seed);
    const VectorXd Y = signs(9, seed);
    const VectorXd g = flatten(loss_gradient(m, X, Y));
    const VectorXd p = flatten(m);
    const double h = 1e-5;
    double worst = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      VectorXd q = p;
      q[k] += h;
      unflatten(m, q);
      const double up = loss(m, X, Y);
      q[k] -= 2 * h;
      unflatten(m, q);
      const double down = loss(m, X, Y);
      const double fd = (up - down) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(g[k]), 1e-7});
      worst = std::max(worst, std::abs(fd - g[k]) / denom);
    }
    unflatten(m, p);
    CAPTURE(seed);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("zero targets with a zero final layer stay at zero loss") {
  MlpModel m = init({{4, 16, 16, 1}, 1.0, 7});
  m.weights.back().setZero();
  const MatrixXd X = sphere::sample_uniform_sphere(3, 30, 8);
  for (TrainMode mode : {TrainMode::Full, TrainMode::LastLayer}) {
    const auto r = train(m, X, VectorXd::Zero(30), {mode, 0.1, 50});
    for (double l : r.loss_trace) CHECK(l == 0.0);
  }
}

TEST_CASE("last-layer training converges to the least-squares fit on frozen features") {
  const MatrixXd X = sphere::sample_uniform_sphere(3, 100, 9);
  const VectorXd Y = signs(100, 10);
  const MlpModel m0 = init({{4, 2048, 1}, std::sqrt(2.0), 11});
  const MatrixXd H = hidden_features(m0, X);
  MatrixXd F(H.rows(), H.cols() + 1);
  F << H, VectorXd::Ones(H.rows());
  const double top = Eigen::SelfAdjointEigenSolver<MatrixXd>(F * F.transpose() / 100.0).eigenvalues().maxCoeff();
  const auto r = train(m0, X, Y, {TrainMode::LastLayer, 1.0 / top, 2'000'000'000});

  // gradient descent from w0 lands on w0 + pinv(F) (Y - F w0)
  VectorXd w0(F.cols());
  w0 << m0.weights.back().transpose(), m0.biases.back();
  const VectorXd w = w0 + F.completeOrthogonalDecomposition().solve(Y - F * w0);
  const MatrixXd Z = sphere::sample_uniform_sphere(3, 200, 12);
  const MatrixXd Hz = hidden_features(m0, Z);
  const VectorXd oracle = Hz * w.head(H.cols()) + VectorXd::Constant(200, w[H.cols()]);
  const double rms = std::sqrt((forward_batch(r.model, Z) - oracle).squaredNorm() / 200);
  CHECK(rms <= 1e-3);
  // hidden layers untouched
  CHECK(r.model.weights[0] == m0.weights[0]);
  CHECK(r.model.biases[0] == m0.biases[0]);
  CHECK(r.trace_steps.front() == 0);  // initial loss plus sampled steps
  CHECK(r.loss_trace.size() <= std::size_t(kMaxTracePoints) + 1);
}

TEST_CASE("training is deterministic") {
  const MatrixXd X = sphere::sample_uniform_sphere(3, 40, 13);
  const VectorXd Y = signs(40, 14);
  const MlpModel m = init({{4, 32, 32, 1}, std::sqrt(2.0), 15});
  for (bool single : {false, true}) {
    TrainConfig tc{TrainMode::Full, 0.05, 100};
    tc.single_precision = single;
    const auto a = train(m, X, Y, tc), b = train(m, X, Y, tc);
    CHECK(flatten(a.model) == flatten(b.model));
    CHECK(a.loss_trace == b.loss_trace);
    CHECK(a.loss_trace.back() < a.loss_trace.front());
  }
}

TEST_CASE("divergence aborts with the loss trace") {
  const MatrixXd X = sphere::sample_uniform_sphere(3, 40, 16);
  const MlpModel m = init({{4, 32, 32, 1}, std::sqrt(2.0), 17});
  try {
    train(m, X, signs(40, 18), {TrainMode::Full, 50.0, 500});
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(!e.trace().empty());
    CHECK(e.trace().back() > 1e6);
  }
}

TEST_CASE("model JSON round trip") {
  const MlpModel m = init({{4, 8, 3, 1}, 1.0, 19});
  const MlpModel back = from_json(to_json(m));
  CHECK(flatten(back) == flatten(m));
  CHECK(back.config.layer_widths == m.config.layer_widths);
  CHECK_THROWS(init({{4, 1}, 1.0, 0}));
}
