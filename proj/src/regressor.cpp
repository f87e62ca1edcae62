#include "hallab/regressor.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hallab/error.hpp"

namespace hallab::regressor {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

namespace {

void check_training_shapes(const MatrixXd& X, const VectorXd& Y) {
  if (X.rows() < 1) throw InvalidArgument("training set is empty");
  if (X.rows() != Y.size())
    throw InvalidArgument("training inputs and labels differ in length (" +
                          std::to_string(X.rows()) + " vs " + std::to_string(Y.size()) + ")");
}

}  // namespace

FitModel fit_krr_with_gram(const MatrixXd& X, const VectorXd& Y, const kernels::KernelSpec& kernel,
                           const MatrixXd& K, double lambda) {
  check_training_shapes(X, Y);
  if (!(lambda >= 0) || !std::isfinite(lambda))
    throw InvalidArgument("lambda must be a nonnegative finite real");
  const auto n = X.rows();
  if (K.rows() != n || K.cols() != n) throw InvalidArgument("Gram matrix has the wrong shape");

  MatrixXd A = K;
  A.diagonal().array() += lambda * static_cast<double>(n);
  for (double jitter : kJitterLadder) {
    MatrixXd Aj = A;
    Aj.diagonal().array() += jitter;
    Eigen::LLT<MatrixXd> llt(Aj);
    if (llt.info() != Eigen::Success) continue;
    VectorXd alpha = llt.solve(Y);
    if (!alpha.allFinite()) continue;
    return FitModel{kernel, X, std::move(alpha), lambda, jitter};
  }
  throw NumericalError("Gram matrix is singular even with jitter " +
                       std::to_string(kJitterLadder.back()) +
                       "; the training set may contain duplicate points");
}

FitModel fit_krr(const MatrixXd& X, const VectorXd& Y, const kernels::KernelSpec& kernel,
                 double lambda) {
  check_training_shapes(X, Y);
  return fit_krr_with_gram(X, Y, kernel, kernels::gram(kernel, X), lambda);
}

double predict(const FitModel& model, const Eigen::Ref<const VectorXd>& x) {
  return kernels::cross(model.kernel, x, model.support).dot(model.alpha);
}

VectorXd predict_batch(const FitModel& model, const MatrixXd& Z) {
  return kernels::cross_matrix(model.kernel, Z, model.support) * model.alpha;
}

double rkhs_norm_sq(const FitModel& model) {
  return model.alpha.dot(kernels::gram(model.kernel, model.support) * model.alpha);
}

GdModel fit_kernel_gd(const MatrixXd& X, const VectorXd& Y, const kernels::KernelSpec& kernel,
                      double t, double eta, InitialFunction f0) {
  check_training_shapes(X, Y);
  if (!(t >= 0)) throw InvalidArgument("training time must be >= 0");
  if (!(eta > 0) || !std::isfinite(eta)) throw InvalidArgument("learning rate must be positive");
  const auto n = X.rows();

  const MatrixXd K = kernels::gram(kernel, X);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(K);
  if (eig.info() != Eigen::Success) throw NumericalError("Gram eigendecomposition failed");
  const VectorXd& s = eig.eigenvalues();
  const double smax = std::max(std::abs(s.maxCoeff()), 1e-300);
  if (s.minCoeff() < -1e-8 * smax)
    throw NumericalError("Gram matrix is not positive semidefinite (min eigenvalue " +
                         std::to_string(s.minCoeff()) + ")");

  // g(s) = (1 - exp(-c s)) / s with c = t eta / N; eigenvalues at the noise
  // floor are treated as exact zeros (g -> c, or dropped when t is infinite).
  const double c = std::isinf(t) ? t : t * eta / static_cast<double>(n);
  const double floor = 1e-14 * smax * static_cast<double>(n);
  VectorXd g(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double si = s(i);
    if (si <= floor) {
      g(i) = std::isinf(c) ? 0.0 : c;
    } else if (std::isinf(c)) {
      g(i) = 1.0 / si;
    } else {
      g(i) = -std::expm1(-c * si) / si;
    }
  }

  VectorXd residual = Y;
  if (f0)
    for (Eigen::Index i = 0; i < n; ++i) residual(i) -= f0(X.row(i).transpose());

  const MatrixXd& V = eig.eigenvectors();
  VectorXd alpha = V * (g.asDiagonal() * (V.transpose() * residual));
  return GdModel{FitModel{kernel, X, std::move(alpha), 0.0, 0.0}, std::move(f0), t, eta};
}

double predict(const GdModel& model, const Eigen::Ref<const VectorXd>& x) {
  const double base = model.f0 ? model.f0(x) : 0.0;
  return base + predict(model.linear, x);
}

VectorXd predict_batch(const GdModel& model, const MatrixXd& Z) {
  VectorXd out = predict_batch(model.linear, Z);
  if (model.f0)
    for (Eigen::Index a = 0; a < Z.rows(); ++a) out(a) += model.f0(Z.row(a).transpose());
  return out;
}

json to_json(const FitModel& model) {
  std::vector<std::vector<double>> support(model.support.rows());
  for (Eigen::Index i = 0; i < model.support.rows(); ++i) {
    support[i].resize(model.support.cols());
    for (Eigen::Index j = 0; j < model.support.cols(); ++j) support[i][j] = model.support(i, j);
  }
  return {{"kind", "krr_model"},
          {"version", 1},
          {"kernel", kernels::to_json(model.kernel)},
          {"support", support},
          {"alpha", std::vector<double>(model.alpha.data(), model.alpha.data() + model.alpha.size())},
          {"lambda", model.lambda},
          {"jitter_used", model.jitter_used}};
}

FitModel from_json(const json& j) {
  try {
    FitModel m;
    m.kernel = kernels::from_json(j.at("kernel"));
    const auto support = j.at("support").get<std::vector<std::vector<double>>>();
    const auto alpha = j.at("alpha").get<std::vector<double>>();
    if (support.size() != alpha.size()) throw FormatError("support and alpha differ in length");
    const std::size_t dim = support.empty() ? 0 : support.front().size();
    m.support.resize(support.size(), dim);
    for (std::size_t i = 0; i < support.size(); ++i) {
      if (support[i].size() != dim) throw FormatError("ragged support matrix");
      for (std::size_t k = 0; k < dim; ++k) m.support(i, k) = support[i][k];
    }
    m.alpha = Eigen::Map<const VectorXd>(alpha.data(), alpha.size());
    m.lambda = j.at("lambda").get<double>();
    m.jitter_used = j.at("jitter_used").get<double>();
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model JSON: ") + e.what());
  }
}

void save(std::ostream& os, const FitModel& model) { os << to_json(model).dump() << '\n'; }

FitModel load(std::istream& is) {
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model JSON: ") + e.what());
  }
  return from_json(j);
}

}  // namespace hallab::regressor
