#pragma once

// Fully connected ReLU network with a scalar output, trained by full-batch
// gradient descent on the squared loss L = 1/(2N) sum (f(x_i) - y_i)^2.
// `last_layer` mode freezes every layer except the final affine map; since the
// problem is then linear, the k-step iterate is computed in closed form from
// the eigendecomposition of the feature covariance instead of by looping.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "hallab/error.hpp"

namespace hallab::mlp {

struct MlpConfig {
  // Input width, hidden widths..., output width (must be 1).
  std::vector<int> layer_widths{3, 512, 512, 1};
  double init_scale = 1.0;  // weight variance init_scale^2 / fan_in
  std::uint64_t seed = 0;
};

enum class TrainMode { Full, LastLayer };

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::Full;
  double learning_rate = 0.1;
  int steps = 1000;
  double divergence_loss = 1e6;
  // Full mode only: run the GD loop in 32-bit floats. Parameters are stored
  // and returned as doubles either way.
  bool single_precision = false;
};

struct MlpModel {
  MlpConfig config;
  std::vector<Eigen::MatrixXd> weights;  // layer l: out x in
  std::vector<Eigen::VectorXd> biases;

  std::size_t num_layers() const { return weights.size(); }
  std::size_t num_parameters() const;
};

struct TrainResult {
  MlpModel model;
  // loss_trace[i] is the loss after trace_steps[i] steps. Full mode records
  // every step; last-layer mode at most kMaxTracePoints evenly spaced steps.
  std::vector<double> loss_trace;
  std::vector<int> trace_steps;
};

inline constexpr int kMaxTracePoints = 1000;

class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, std::vector<double> trace)
      : NumericalError(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

MlpModel init(const MlpConfig& config);

double forward(const MlpModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);
// One output per row of X.
Eigen::VectorXd forward_batch(const MlpModel& model, const Eigen::MatrixXd& X);

// Activations of the last hidden layer, one row per input (N x width).
Eigen::MatrixXd hidden_features(const MlpModel& model, const Eigen::MatrixXd& X);

double loss(const MlpModel& model, const Eigen::MatrixXd& X, const Eigen::VectorXd& Y);

// Gradient of `loss` with the same layout as the model parameters.
struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};
Gradients loss_gradient(const MlpModel& model, const Eigen::MatrixXd& X, const Eigen::VectorXd& Y);

// Parameters flattened layer by layer (weights column-major, then bias).
Eigen::VectorXd flatten(const MlpModel& model);
Eigen::VectorXd flatten(const Gradients& grads);
void unflatten(MlpModel& model, const Eigen::VectorXd& params);

TrainResult train(MlpModel model, const Eigen::MatrixXd& X, const Eigen::VectorXd& Y,
                  const TrainConfig& config);

nlohmann::json to_json(const MlpModel& model);
MlpModel from_json(const nlohmann::json& j);

}  // namespace hallab::mlp
