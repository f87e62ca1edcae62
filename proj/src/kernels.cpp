#include "hallab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "hallab/error.hpp"

namespace hallab::kernels {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

namespace {

void require_positive(double v, const char* what) {
  if (!(v > 0) || !std::isfinite(v))
    throw InvalidArgument(std::string(what) + " must be a positive finite real");
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

}  // namespace

KernelSpec::KernelSpec(KernelVariant v) : v_(std::move(v)) {
  std::visit(overloaded{
                 [](const Gaussian& g) { require_positive(g.gamma, "gaussian gamma"); },
                 [](const Laplace& l) { require_positive(l.gamma, "laplace gamma"); },
                 [](const Bump& b) { require_positive(b.ell, "bump ell"); },
                 [](const Spiked& s) {
                   if (!s.base) throw InvalidArgument("spiked kernel needs a base kernel");
                   if (!(s.c >= 0)) throw InvalidArgument("spiked c must be >= 0");
                   require_positive(s.gamma_spike, "spiked gamma_spike");
                 },
                 [](const ArccosNngp& a) {
                   if (a.depth < 1) throw InvalidArgument("arccos depth must be >= 1");
                 },
                 [](const ArccosNtk& a) {
                   if (a.depth < 1) throw InvalidArgument("arccos depth must be >= 1");
                 },
             },
             v_);
}

KernelSpec KernelSpec::spiked(KernelSpec base, double c, double gamma_spike) {
  return KernelSpec(Spiked{std::make_shared<const KernelSpec>(std::move(base)), c, gamma_spike});
}

std::string KernelSpec::name() const {
  return std::visit(overloaded{
                        [](const Gaussian&) { return std::string("gaussian"); },
                        [](const Laplace&) { return std::string("laplace"); },
                        [](const Bump&) { return std::string("bump"); },
                        [](const Spiked&) { return std::string("spiked"); },
                        [](const ArccosNngp&) { return std::string("arccos_nngp"); },
                        [](const ArccosNtk&) { return std::string("arccos_ntk"); },
                    },
                    v_);
}

double bump_profile(double norm_sq) {
  if (norm_sq >= 1.0) return 0.0;
  return std::exp(1.0 - 1.0 / (1.0 - norm_sq));
}

double arccos_kappa0(double u) {
  u = std::clamp(u, -1.0, 1.0);
  return (std::numbers::pi - std::acos(u)) / std::numbers::pi;
}

double arccos_kappa1(double u) {
  u = std::clamp(u, -1.0, 1.0);
  return (std::sqrt(1.0 - u * u) + (std::numbers::pi - std::acos(u)) * u) / std::numbers::pi;
}

namespace {

double eval_impl(const KernelSpec& k, const Eigen::Ref<const VectorXd>& x,
                 const Eigen::Ref<const VectorXd>& xp) {
  return std::visit(
      overloaded{
          [&](const Gaussian& g) {
            return std::exp(-(x - xp).squaredNorm() / (2 * g.gamma * g.gamma));
          },
          [&](const Laplace& l) { return std::exp(-(x - xp).norm() / l.gamma); },
          [&](const Bump& b) { return bump_profile((x - xp).squaredNorm() / (b.ell * b.ell)); },
          [&](const Spiked& s) {
            return eval_impl(*s.base, x, xp) + s.c * std::exp(-(x - xp).norm() / s.gamma_spike);
          },
          [&](const ArccosNngp& a) {
            const double scale = x.norm() * xp.norm();
            if (scale == 0) return 0.0;
            double u = x.dot(xp) / scale;
            for (int l = 0; l < a.depth; ++l) u = arccos_kappa1(u);
            return scale * u;
          },
          [&](const ArccosNtk& a) {
            const double scale = x.norm() * xp.norm();
            if (scale == 0) return 0.0;
            double sigma = std::clamp(x.dot(xp) / scale, -1.0, 1.0);
            double theta = sigma;
            for (int l = 0; l < a.depth; ++l) {
              const double next = arccos_kappa1(sigma);
              theta = theta * arccos_kappa0(sigma) + next;
              sigma = next;
            }
            return scale * theta;
          },
      },
      k.variant());
}

void check_dims(Eigen::Index a, Eigen::Index b) {
  if (a != b)
    throw InvalidArgument("kernel input dimension mismatch (" + std::to_string(a) + " vs " +
                          std::to_string(b) + ")");
}

}  // namespace

double eval(const KernelSpec& k, const Eigen::Ref<const VectorXd>& x,
            const Eigen::Ref<const VectorXd>& xp) {
  check_dims(x.size(), xp.size());
  return eval_impl(k, x, xp);
}

MatrixXd gram(const KernelSpec& k, const MatrixXd& X) {
  const Eigen::Index n = X.rows();
  if (n < 1) throw InvalidArgument("gram of an empty point set");
  if (n > kMaxGramSize)
    throw InvalidArgument("gram size " + std::to_string(n) + " exceeds the dense limit " +
                          std::to_string(kMaxGramSize));
  const MatrixXd Xt = X.transpose();  // contiguous columns
  MatrixXd K(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j; i < n; ++i) {
      const double v = eval_impl(k, Xt.col(i), Xt.col(j));
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  return K;
}

Eigen::RowVectorXd cross(const KernelSpec& k, const Eigen::Ref<const VectorXd>& x,
                         const MatrixXd& X) {
  check_dims(x.size(), X.cols());
  const MatrixXd Xt = X.transpose();
  Eigen::RowVectorXd row(X.rows());
  for (Eigen::Index j = 0; j < X.rows(); ++j) row(j) = eval_impl(k, x, Xt.col(j));
  return row;
}

MatrixXd cross_matrix(const KernelSpec& k, const MatrixXd& Z, const MatrixXd& X) {
  check_dims(Z.cols(), X.cols());
  const MatrixXd Xt = X.transpose();
  const MatrixXd Zt = Z.transpose();
  MatrixXd out(Z.rows(), X.rows());
  for (Eigen::Index j = 0; j < X.rows(); ++j)
    for (Eigen::Index a = 0; a < Z.rows(); ++a) out(a, j) = eval_impl(k, Zt.col(a), Xt.col(j));
  return out;
}

json to_json(const KernelSpec& k) {
  return std::visit(
      overloaded{
          [](const Gaussian& g) { return json{{"variant", "gaussian"}, {"params", {{"gamma", g.gamma}}}}; },
          [](const Laplace& l) { return json{{"variant", "laplace"}, {"params", {{"gamma", l.gamma}}}}; },
          [](const Bump& b) { return json{{"variant", "bump"}, {"params", {{"ell", b.ell}}}}; },
          [](const Spiked& s) {
            return json{{"variant", "spiked"},
                        {"params", {{"base", to_json(*s.base)}, {"c", s.c}, {"gamma_spike", s.gamma_spike}}}};
          },
          [](const ArccosNngp& a) { return json{{"variant", "arccos_nngp"}, {"params", {{"depth", a.depth}}}}; },
          [](const ArccosNtk& a) { return json{{"variant", "arccos_ntk"}, {"params", {{"depth", a.depth}}}}; },
      },
      k.variant());
}

KernelSpec from_json(const json& j) {
  try {
    const auto variant = j.at("variant").get<std::string>();
    const json params = j.value("params", json::object());
    if (variant == "gaussian") return KernelSpec::gaussian(params.value("gamma", 1.0));
    if (variant == "laplace") return KernelSpec::laplace(params.value("gamma", 1.0));
    if (variant == "bump") return KernelSpec::bump(params.value("ell", 0.1));
    if (variant == "spiked") {
      KernelSpec base = params.contains("base") ? from_json(params.at("base"))
                                                : KernelSpec::gaussian(1.0);
      return KernelSpec::spiked(std::move(base), params.value("c", 0.0),
                                params.value("gamma_spike", 1.0));
    }
    if (variant == "arccos_nngp") return KernelSpec::arccos_nngp(params.value("depth", 1));
    if (variant == "arccos_ntk") return KernelSpec::arccos_ntk(params.value("depth", 1));
    throw InvalidArgument("unknown kernel variant '" + variant + "'");
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed kernel spec: ") + e.what());
  }
}

}  // namespace hallab::kernels
