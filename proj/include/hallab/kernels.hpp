#pragma once

#include <memory>
#include <string>
#include <variant>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace hallab::kernels {

// Largest Gram matrix we are willing to materialize.
inline constexpr Eigen::Index kMaxGramSize = 20000;

class KernelSpec;

// exp(-|x - x'|^2 / (2 gamma^2))
struct Gaussian {
  double gamma = 1.0;
};

// exp(-|x - x'| / gamma)
struct Laplace {
  double gamma = 1.0;
};

// Psi((x - x') / ell) with the mollifier Psi(u) = exp(1 - 1 / (1 - |u|^2)) on
// the open unit ball and 0 outside, so Psi(0) = 1.
struct Bump {
  double ell = 0.1;
};

// base + c * laplace(gamma_spike)
struct Spiked {
  std::shared_ptr<const KernelSpec> base;
  double c = 0.0;
  double gamma_spike = 1.0;
};

// ReLU arc-cosine (order 1) recursion on the cosine u = <x, x'> / (|x||x'|),
// normalized so that k(x, x) = |x|^2 for the NNGP kernel.
struct ArccosNngp {
  int depth = 1;
};

// Neural tangent kernel of the same ReLU network. k(x, x) = (depth + 1)|x|^2.
struct ArccosNtk {
  int depth = 1;
};

using KernelVariant = std::variant<Gaussian, Laplace, Bump, Spiked, ArccosNngp, ArccosNtk>;

class KernelSpec {
 public:
  KernelSpec() = default;
  KernelSpec(KernelVariant v);  // validates parameters

  const KernelVariant& variant() const { return v_; }
  std::string name() const;

  static KernelSpec gaussian(double gamma) { return KernelSpec(Gaussian{gamma}); }
  static KernelSpec laplace(double gamma) { return KernelSpec(Laplace{gamma}); }
  static KernelSpec bump(double ell) { return KernelSpec(Bump{ell}); }
  static KernelSpec spiked(KernelSpec base, double c, double gamma_spike);
  static KernelSpec arccos_nngp(int depth) { return KernelSpec(ArccosNngp{depth}); }
  static KernelSpec arccos_ntk(int depth) { return KernelSpec(ArccosNtk{depth}); }

 private:
  KernelVariant v_ = Gaussian{};
};

// Mollifier used by the bump kernel, evaluated at |u|^2.
double bump_profile(double norm_sq);

// Single-layer arc-cosine maps on a cosine u in [-1, 1].
double arccos_kappa0(double u);  // (pi - arccos u) / pi
double arccos_kappa1(double u);  // (sqrt(1 - u^2) + (pi - arccos u) u) / pi

double eval(const KernelSpec& k, const Eigen::Ref<const Eigen::VectorXd>& x,
            const Eigen::Ref<const Eigen::VectorXd>& xp);

// Symmetric n x n matrix of k(x_i, x_j); rows of X are the points.
Eigen::MatrixXd gram(const KernelSpec& k, const Eigen::MatrixXd& X);

// 1 x n row (k(x, x_1), ..., k(x, x_n)).
Eigen::RowVectorXd cross(const KernelSpec& k, const Eigen::Ref<const Eigen::VectorXd>& x,
                         const Eigen::MatrixXd& X);

// m x n matrix of k(z_a, x_j) for query rows Z.
Eigen::MatrixXd cross_matrix(const KernelSpec& k, const Eigen::MatrixXd& Z,
                             const Eigen::MatrixXd& X);

// {"variant": "...", "params": {...}}
nlohmann::json to_json(const KernelSpec& k);
KernelSpec from_json(const nlohmann::json& j);

}  // namespace hallab::kernels
