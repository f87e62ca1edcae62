#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <limits>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "hallab/kernels.hpp"

namespace hallab::regressor {

// Diagonal jitter tried, in order, until the Cholesky factorization succeeds.
inline constexpr std::array<double, 4> kJitterLadder = {0.0, 1e-12, 1e-10, 1e-8};

// f(x) = k(x, support) * alpha.
struct FitModel {
  kernels::KernelSpec kernel;
  Eigen::MatrixXd support;  // N x D, one training point per row
  Eigen::VectorXd alpha;
  double lambda = 0.0;
  double jitter_used = 0.0;
};

// Solves (K + lambda N I + jitter I) alpha = Y by LLT. lambda = 0 gives the
// minimum-norm interpolant. Throws NumericalError if no rung of the jitter
// ladder yields a positive definite system.
FitModel fit_krr(const Eigen::MatrixXd& X, const Eigen::VectorXd& Y,
                 const kernels::KernelSpec& kernel, double lambda);

// Same as above, reusing a precomputed Gram matrix of X.
FitModel fit_krr_with_gram(const Eigen::MatrixXd& X, const Eigen::VectorXd& Y,
                           const kernels::KernelSpec& kernel, const Eigen::MatrixXd& K,
                           double lambda);

double predict(const FitModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);
Eigen::VectorXd predict_batch(const FitModel& model, const Eigen::MatrixXd& Z);

// alpha^T K alpha, the squared RKHS norm of the fitted function.
double rkhs_norm_sq(const FitModel& model);

using InitialFunction = std::function<double(const Eigen::VectorXd&)>;

// Closed-form finite-time kernel gradient flow under MSE:
//   f_t(x) = f_0(x) + k(x,X) K^{-1} (I - exp(-t eta K / N)) (Y - f_0(X)).
// t = +infinity gives the interpolant started from f_0.
struct GdModel {
  FitModel linear;   // the k(x, X) * alpha part
  InitialFunction f0;  // empty means identically zero
  double t = 0.0;
  double eta = 1.0;
};

inline constexpr double kInfiniteTime = std::numeric_limits<double>::infinity();

GdModel fit_kernel_gd(const Eigen::MatrixXd& X, const Eigen::VectorXd& Y,
                      const kernels::KernelSpec& kernel, double t, double eta,
                      InitialFunction f0 = {});

double predict(const GdModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);
Eigen::VectorXd predict_batch(const GdModel& model, const Eigen::MatrixXd& Z);

nlohmann::json to_json(const FitModel& model);
FitModel from_json(const nlohmann::json& j);
void save(std::ostream& os, const FitModel& model);
FitModel load(std::istream& is);

}  // namespace hallab::regressor
