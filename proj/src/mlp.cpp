#include "hallab/mlp.hpp"

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "hallab/rng.hpp"

namespace hallab::mlp {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

std::string to_string(TrainMode m) { return m == TrainMode::Full ? "full" : "last_layer"; }

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "full") return TrainMode::Full;
  if (s == "last_layer") return TrainMode::LastLayer;
  throw InvalidArgument("unknown train mode '" + s + "'");
}

std::size_t MlpModel::num_parameters() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

MlpModel init(const MlpConfig& config) {
  const auto& w = config.layer_widths;
  if (w.size() < 3) throw InvalidArgument("an MLP needs at least one hidden layer");
  for (int width : w)
    if (width < 1) throw InvalidArgument("layer widths must be positive");
  if (w.back() != 1) throw InvalidArgument("the output width must be 1");
  if (!(config.init_scale >= 0)) throw InvalidArgument("init_scale must be >= 0");

  MlpModel m;
  m.config = config;
  Rng rng = make_rng(config.seed, {0x31a});
  std::normal_distribution<double> normal;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    const double sd = config.init_scale / std::sqrt(static_cast<double>(w[l]));
    MatrixXd W(w[l + 1], w[l]);
    for (Eigen::Index c = 0; c < W.cols(); ++c)
      for (Eigen::Index r = 0; r < W.rows(); ++r) W(r, c) = sd * normal(rng);
    m.weights.push_back(std::move(W));
    m.biases.push_back(VectorXd::Zero(w[l + 1]));
  }
  return m;
}

namespace {

void check_input(const MlpModel& m, Eigen::Index cols) {
  if (cols != m.weights.front().cols())
    throw InvalidArgument("MLP input has dimension " + std::to_string(cols) + ", expected " +
                          std::to_string(m.weights.front().cols()));
}

// Post-activation outputs of every hidden layer, rows = examples.
std::vector<MatrixXd> hidden_activations(const MlpModel& m, const MatrixXd& X) {
  std::vector<MatrixXd> acts;
  acts.reserve(m.num_layers() - 1);
  const MatrixXd* in = &X;
  for (std::size_t l = 0; l + 1 < m.num_layers(); ++l) {
    MatrixXd z = (*in) * m.weights[l].transpose();
    z.rowwise() += m.biases[l].transpose();
    acts.push_back(z.cwiseMax(0.0));
    in = &acts.back();
  }
  return acts;
}

VectorXd output_from_hidden(const MlpModel& m, const MatrixXd& H) {
  VectorXd out = H * m.weights.back().row(0).transpose();
  out.array() += m.biases.back()(0);
  return out;
}

}  // namespace

VectorXd forward_batch(const MlpModel& model, const MatrixXd& X) {
  check_input(model, X.cols());
  return output_from_hidden(model, hidden_activations(model, X).back());
}

double forward(const MlpModel& model, const Eigen::Ref<const VectorXd>& x) {
  check_input(model, x.size());
  VectorXd a = x;
  for (std::size_t l = 0; l + 1 < model.num_layers(); ++l)
    a = (model.weights[l] * a + model.biases[l]).cwiseMax(0.0);
  return model.weights.back().row(0).dot(a) + model.biases.back()(0);
}

MatrixXd hidden_features(const MlpModel& model, const MatrixXd& X) {
  check_input(model, X.cols());
  return hidden_activations(model, X).back();
}

double loss(const MlpModel& model, const MatrixXd& X, const VectorXd& Y) {
  if (X.rows() != Y.size() || X.rows() == 0) throw InvalidArgument("inconsistent training shapes");
  return 0.5 * (forward_batch(model, X) - Y).squaredNorm() / static_cast<double>(Y.size());
}

namespace {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
struct Params {
  std::vector<Mat<S>> weights;
  std::vector<Vec<S>> biases;
};

template <typename S>
Params<S> cast_params(const std::vector<MatrixXd>& w, const std::vector<VectorXd>& b) {
  Params<S> p;
  for (const auto& m : w) p.weights.push_back(m.cast<S>());
  for (const auto& v : b) p.biases.push_back(v.cast<S>());
  return p;
}

// Forward and backward pass over the batch; writes the gradient into `g` and
// returns the loss.
template <typename S>
double backprop(const Params<S>& p, const Mat<S>& X, const Vec<S>& Y, Params<S>& g) {
  const auto L = p.weights.size();
  std::vector<Mat<S>> acts;
  acts.reserve(L - 1);
  const Mat<S>* in = &X;
  for (std::size_t l = 0; l + 1 < L; ++l) {
    Mat<S> z = (*in) * p.weights[l].transpose();
    z.rowwise() += p.biases[l].transpose();
    acts.push_back(z.cwiseMax(S(0)));
    in = &acts.back();
  }
  Vec<S> out = acts.back() * p.weights.back().row(0).transpose();
  out.array() += p.biases.back()(0);
  const Vec<S> resid = out - Y;
  const double value = 0.5 * resid.template cast<double>().squaredNorm() / static_cast<double>(Y.size());

  g.weights.resize(L);
  g.biases.resize(L);
  // delta: dLoss/dz for the current layer, rows = examples.
  Mat<S> delta = resid / static_cast<S>(Y.size());
  for (std::size_t l = L; l-- > 0;) {
    const Mat<S>& input = l == 0 ? X : acts[l - 1];
    g.weights[l].noalias() = delta.transpose() * input;
    g.biases[l] = delta.colwise().sum().transpose();
    if (l == 0) break;
    Mat<S> back = delta * p.weights[l];
    delta = back.array() * (acts[l - 1].array() > S(0)).template cast<S>();
  }
  return value;
}

}  // namespace

Gradients loss_gradient(const MlpModel& model, const MatrixXd& X, const VectorXd& Y) {
  check_input(model, X.cols());
  if (X.rows() != Y.size() || X.rows() == 0) throw InvalidArgument("inconsistent training shapes");
  const auto p = cast_params<double>(model.weights, model.biases);
  Params<double> g;
  backprop<double>(p, X, Y, g);
  return {std::move(g.weights), std::move(g.biases)};
}

VectorXd flatten(const MlpModel& model) {
  VectorXd p(model.num_parameters());
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    p.segment(off, model.weights[l].size()) = model.weights[l].reshaped();
    off += model.weights[l].size();
    p.segment(off, model.biases[l].size()) = model.biases[l];
    off += model.biases[l].size();
  }
  return p;
}

VectorXd flatten(const Gradients& grads) {
  Eigen::Index total = 0;
  for (std::size_t l = 0; l < grads.weights.size(); ++l)
    total += grads.weights[l].size() + grads.biases[l].size();
  VectorXd p(total);
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < grads.weights.size(); ++l) {
    p.segment(off, grads.weights[l].size()) = grads.weights[l].reshaped();
    off += grads.weights[l].size();
    p.segment(off, grads.biases[l].size()) = grads.biases[l];
    off += grads.biases[l].size();
  }
  return p;
}

void unflatten(MlpModel& model, const VectorXd& params) {
  if (params.size() != static_cast<Eigen::Index>(model.num_parameters()))
    throw InvalidArgument("parameter vector has the wrong length");
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    auto& W = model.weights[l];
    W.reshaped() = params.segment(off, W.size());
    off += W.size();
    model.biases[l] = params.segment(off, model.biases[l].size());
    off += model.biases[l].size();
  }
}

namespace {

void check_loss(double value, std::vector<double>& trace, double limit) {
  trace.push_back(value);
  if (!std::isfinite(value) || value > limit)
    throw TrainingDiverged("training diverged (loss " + std::to_string(value) + ")", trace);
}

// Gradient descent on the final affine map with frozen features A = [H 1]:
// w <- w - (lr/N) A^T (A w - Y). With q = 1 - lr s / N per eigenvalue s, the
// k-step iterate is exact in either eigenbasis:
//   parameter space (A^T A = V S V^T, b = V^T A^T Y): c_k = q^k c_0 + b (1 - q^k) / s
//   sample space (A A^T = U S U^T, p = U^T r_0): w_k = w_0 - A^T U diag((1 - q^k) / s) p
// The smaller Gram is used.
TrainResult train_last_layer(MlpModel model, const MatrixXd& X, const VectorXd& Y,
                             const TrainConfig& config) {
  const MatrixXd H = hidden_features(model, X);
  const Eigen::Index n = H.rows(), width = H.cols();
  MatrixXd A(n, width + 1);
  A.leftCols(width) = H;
  A.col(width).setOnes();
  VectorXd w0(width + 1);
  w0.head(width) = model.weights.back().row(0).transpose();
  w0(width) = model.biases.back()(0);

  const double rate = config.learning_rate / static_cast<double>(n);
  const bool sample_space = n < width + 1;
  MatrixXd gram(sample_space ? n : width + 1, sample_space ? n : width + 1);
  if (sample_space)
    gram.noalias() = A * A.transpose();
  else
    gram.noalias() = A.transpose() * A;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success) throw NumericalError("feature covariance eigendecomposition failed");
  const MatrixXd& U = eig.eigenvectors();
  const VectorXd s = eig.eigenvalues().cwiseMax(0.0);

  // q^k and (1 - q^k) / s for every eigenvalue.
  auto factors = [&](int k, VectorXd& qk, VectorXd& h) {
    qk.resize(s.size());
    h.resize(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const double x = rate * s(i);
      qk(i) = x < 1.0 ? std::exp(k * std::log1p(-x)) : std::pow(1.0 - x, k);
      h(i) = x > 1e-300 ? (1.0 - qk(i)) / s(i) : rate * k;
    }
  };

  VectorXd proj, b, c0;
  double yy = 0.0;
  if (sample_space) {
    proj = U.transpose() * (A * w0 - Y);
  } else {
    c0 = U.transpose() * w0;
    b = U.transpose() * (A.transpose() * Y);
    yy = Y.squaredNorm();
  }
  auto loss_at = [&](int k) {
    VectorXd qk, h;
    factors(k, qk, h);
    if (sample_space) return 0.5 * (qk.cwiseProduct(proj)).squaredNorm() / static_cast<double>(n);
    const VectorXd c = qk.cwiseProduct(c0) + b.cwiseProduct(h);
    const double v = s.dot(c.cwiseAbs2()) - 2.0 * c.dot(b) + yy;
    return 0.5 * std::max(v, 0.0) / static_cast<double>(n);
  };

  std::vector<double> trace;
  std::vector<int> steps;
  const int points = std::min(config.steps, kMaxTracePoints);
  for (int i = 0; i < points; ++i) {
    const int k = static_cast<int>(static_cast<long long>(config.steps) * i / points);
    steps.push_back(k);
    check_loss(loss_at(k), trace, config.divergence_loss);
  }
  VectorXd qk, h;
  factors(config.steps, qk, h);
  VectorXd w;
  if (sample_space)
    w = w0 - A.transpose() * (U * h.cwiseProduct(proj));
  else
    w = U * (qk.cwiseProduct(c0) + b.cwiseProduct(h));
  model.weights.back().row(0) = w.head(width).transpose();
  model.biases.back()(0) = w(width);
  steps.push_back(config.steps);
  check_loss(0.5 * (A * w - Y).squaredNorm() / static_cast<double>(n), trace, config.divergence_loss);
  return {std::move(model), std::move(trace), std::move(steps)};
}

template <typename S>
TrainResult full_gd(MlpModel model, const MatrixXd& X, const VectorXd& Y, const TrainConfig& config) {
  auto p = cast_params<S>(model.weights, model.biases);
  const Mat<S> Xs = X.cast<S>();
  const Vec<S> Ys = Y.cast<S>();
  const S lr = static_cast<S>(config.learning_rate);
  std::vector<double> trace;
  trace.reserve(config.steps + 1);
  Params<S> g;
  for (int step = 0; step <= config.steps; ++step) {
    check_loss(backprop<S>(p, Xs, Ys, g), trace, config.divergence_loss);
    if (step == config.steps) break;
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
      p.weights[l] -= lr * g.weights[l];
      p.biases[l] -= lr * g.biases[l];
    }
  }
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    model.weights[l] = p.weights[l].template cast<double>();
    model.biases[l] = p.biases[l].template cast<double>();
  }
  std::vector<int> steps(trace.size());
  for (std::size_t i = 0; i < steps.size(); ++i) steps[i] = static_cast<int>(i);
  return {std::move(model), std::move(trace), std::move(steps)};
}

}  // namespace

TrainResult train(MlpModel model, const MatrixXd& X, const VectorXd& Y, const TrainConfig& config) {
  check_input(model, X.cols());
  if (X.rows() != Y.size() || X.rows() == 0) throw InvalidArgument("inconsistent training shapes");
  if (!(config.learning_rate > 0)) throw InvalidArgument("learning rate must be positive");
  if (config.steps < 1) throw InvalidArgument("steps must be positive");

  if (config.mode == TrainMode::LastLayer) return train_last_layer(std::move(model), X, Y, config);

  return config.single_precision ? full_gd<float>(std::move(model), X, Y, config)
                                 : full_gd<double>(std::move(model), X, Y, config);
}

json to_json(const MlpModel& model) {
  json layers = json::array();
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const auto& W = model.weights[l];
    std::vector<std::vector<double>> rows(W.rows(), std::vector<double>(W.cols()));
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) rows[r][c] = W(r, c);
    const auto& b = model.biases[l];
    layers.push_back({{"weight", rows}, {"bias", std::vector<double>(b.data(), b.data() + b.size())}});
  }
  return {{"kind", "mlp"},
          {"version", 1},
          {"layer_widths", model.config.layer_widths},
          {"init_scale", model.config.init_scale},
          {"seed", model.config.seed},
          {"activation", "relu"},
          {"layers", layers}};
}

MlpModel from_json(const json& j) {
  try {
    MlpModel m;
    m.config.layer_widths = j.at("layer_widths").get<std::vector<int>>();
    m.config.init_scale = j.at("init_scale").get<double>();
    m.config.seed = j.at("seed").get<std::uint64_t>();
    const auto& widths = m.config.layer_widths;
    const auto& layers = j.at("layers");
    if (widths.size() < 3 || layers.size() != widths.size() - 1)
      throw FormatError("layer list does not match layer_widths");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto rows = layers[l].at("weight").get<std::vector<std::vector<double>>>();
      const auto bias = layers[l].at("bias").get<std::vector<double>>();
      if (rows.size() != static_cast<std::size_t>(widths[l + 1]) ||
          bias.size() != static_cast<std::size_t>(widths[l + 1]))
        throw FormatError("layer " + std::to_string(l) + " has the wrong shape");
      MatrixXd W(widths[l + 1], widths[l]);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != static_cast<std::size_t>(widths[l]))
          throw FormatError("layer " + std::to_string(l) + " has a ragged row");
        for (int c = 0; c < widths[l]; ++c) W(r, c) = rows[r][c];
      }
      m.weights.push_back(std::move(W));
      m.biases.push_back(Eigen::Map<const VectorXd>(bias.data(), bias.size()));
    }
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed MLP JSON: ") + e.what());
  }
}

}  // namespace hallab::mlp
