#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "hallab/error.hpp"
#include "hallab/kernels.hpp"
#include "hallab/rng.hpp"
#include "hallab/sphere.hpp"

using namespace hallab;
using namespace hallab::kernels;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::vector<KernelSpec> all_kernels() {
  return {KernelSpec::gaussian(0.7),  KernelSpec::laplace(1.3),
          KernelSpec::bump(0.8),      KernelSpec::spiked(KernelSpec::gaussian(1.0), 2.0, 0.1),
          KernelSpec::arccos_nngp(1), KernelSpec::arccos_nngp(3),
          KernelSpec::arccos_ntk(1),  KernelSpec::arccos_ntk(3)};
}

bool is_bump(const KernelSpec& k) { return std::holds_alternative<Bump>(k.variant()); }

VectorXd at_distance(const VectorXd& x, double r) {
  // a unit vector at chord distance r from the unit vector x = e_0
  VectorXd y = VectorXd::Zero(x.size());
  const double c = 1 - r * r / 2;
  y[0] = c;
  y[1] = std::sqrt(1 - c * c);
  return y;
}

MatrixXd random_orthogonal(int n, Rng& rng) {
  std::normal_distribution<double> g;
  MatrixXd A(n, n);
  for (int i = 0; i < n * n; ++i) A(i / n, i % n) = g(rng);
  return Eigen::HouseholderQR<MatrixXd>(A).householderQ();
}

}  // namespace

TEST_CASE("closed-form kernel values") {
  VectorXd x(3), y(3);
  x << 1, 0, 0;
  y << 0, 1, 0;
  CHECK(eval(KernelSpec::laplace(0.5), x, x) == 1.0);
  CHECK(eval(KernelSpec::gaussian(1.0), x, y) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(eval(KernelSpec::laplace(2.0), x, y) == doctest::Approx(std::exp(-std::sqrt(2.0) / 2)).epsilon(1e-15));
  CHECK(eval(KernelSpec::arccos_nngp(1), x, y) == doctest::Approx(1 / std::numbers::pi).epsilon(1e-14));
  CHECK(eval(KernelSpec::bump(0.3), x, at_distance(x, 0.31)) == 0.0);
  CHECK(eval(KernelSpec::bump(0.3), x, x) == 1.0);
  CHECK(eval(KernelSpec::bump(0.3), x, at_distance(x, 0.15)) ==
        doctest::Approx(std::exp(1 - 1 / (1 - 0.25))).epsilon(1e-12));
  CHECK_THROWS_AS(eval(KernelSpec::gaussian(1.0), x, VectorXd::Zero(4)), InvalidArgument);
  CHECK_THROWS_AS(KernelSpec::gaussian(0.0), InvalidArgument);
  CHECK_THROWS_AS(KernelSpec::arccos_ntk(0), InvalidArgument);
}

TEST_CASE("arc-cosine kernels match Monte Carlo ReLU expectations") {
  Rng rng = make_rng(4);
  std::normal_distribution<double> g;
  for (double u : {-0.7, 0.0, 0.4, 0.9}) {
    const int n = 400000;
    double k1 = 0, k0 = 0;
    const double s = std::sqrt(1 - u * u);
    for (int i = 0; i < n; ++i) {
      const double a = g(rng), b = u * a + s * g(rng);
      k1 += std::max(a, 0.0) * std::max(b, 0.0);
      k0 += (a > 0) && (b > 0);
    }
    CHECK(std::abs(2 * k1 / n - arccos_kappa1(u)) <= 6e-3);
    CHECK(std::abs(2 * k0 / n - arccos_kappa0(u)) <= 6e-3);
  }
}

TEST_CASE("arc-cosine recursions") {
  VectorXd x(2), y(2);
  const double t = 1.1;
  x << 1, 0;
  y << std::cos(t), std::sin(t);
  const double u = std::cos(t);
  const double s1 = arccos_kappa1(u), s2 = arccos_kappa1(s1);
  CHECK(eval(KernelSpec::arccos_nngp(2), x, y) == doctest::Approx(s2).epsilon(1e-14));
  const double th1 = u * arccos_kappa0(u) + s1;
  const double th2 = th1 * arccos_kappa0(s1) + s2;
  CHECK(eval(KernelSpec::arccos_ntk(1), x, y) == doctest::Approx(th1).epsilon(1e-14));
  CHECK(eval(KernelSpec::arccos_ntk(2), x, y) == doctest::Approx(th2).epsilon(1e-14));
  // constant diagonal
  CHECK(eval(KernelSpec::arccos_nngp(3), x, x) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(eval(KernelSpec::arccos_ntk(3), x, x) == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("kernels are symmetric and PSD on random points") {
  const MatrixXd X = sphere::sample_uniform_sphere(3, 50, 12);
  for (const auto& k : all_kernels()) {
    CAPTURE(k.name());
    const MatrixXd K = gram(k, X);
    CHECK((K - K.transpose()).cwiseAbs().maxCoeff() == 0.0);
    // the compact bump profile is not a positive-definite function, so its
    // Gram is only guaranteed PSD once the support is below the separation
    if (!is_bump(k)) {
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(K);
      CHECK(es.eigenvalues().minCoeff() >= -1e-8);
    }
    for (int i = 0; i < 10; ++i)
      for (int j = 0; j < 10; ++j) CHECK(eval(k, X.row(i).transpose(), X.row(j).transpose()) == eval(k, X.row(j).transpose(), X.row(i).transpose()));
  }
}

TEST_CASE("kernels are invariant under a common rotation") {
  Rng rng = make_rng(5);
  const MatrixXd X = sphere::sample_uniform_sphere(4, 40, rng);
  const MatrixXd Q = random_orthogonal(5, rng);
  const MatrixXd Y = X * Q.transpose();
  for (const auto& k : all_kernels()) {
    CAPTURE(k.name());
    const MatrixXd a = gram(k, X), b = gram(k, Y);
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("gram examples") {
  const MatrixXd X = sphere::sample_uniform_sphere(2, 20, 31);
  const MatrixXd one = X.topRows(1);
  CHECK(gram(KernelSpec::laplace(1.0), one)(0, 0) == 1.0);
  const auto g = KernelSpec::gaussian(0.9);
  const MatrixXd K = gram(g, X);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j) CHECK(K(i, j) == eval(g, X.row(i).transpose(), X.row(j).transpose()));
  const double q = sphere::separation_distance(X);
  const MatrixXd B = gram(KernelSpec::bump(0.99 * q), X);
  CHECK(B.isApprox(MatrixXd::Identity(20, 20), 0.0));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(B);
  CHECK(es.eigenvalues().minCoeff() >= -1e-8);
  CHECK_THROWS_AS(gram(g, MatrixXd(0, 3)), InvalidArgument);
}

TEST_CASE("cross rows") {
  const MatrixXd X = sphere::sample_uniform_sphere(2, 15, 32);
  const auto lap = KernelSpec::laplace(0.4);
  const VectorXd x = X.row(6).transpose();
  CHECK(cross(lap, x, X)[6] == 1.0);
  VectorXd far = -x;
  const double dmin = (X.rowwise() - far.transpose()).rowwise().norm().minCoeff();
  CHECK(cross(KernelSpec::bump(0.9 * dmin), far, X).cwiseAbs().maxCoeff() == 0.0);
  const auto base = KernelSpec::gaussian(0.8);
  CHECK((cross(KernelSpec::spiked(base, 0.0, 0.5), x, X) - cross(base, x, X)).cwiseAbs().maxCoeff() == 0.0);
  const MatrixXd Z = sphere::sample_uniform_sphere(2, 7, 33);
  const MatrixXd C = cross_matrix(lap, Z, X);
  for (int i = 0; i < 7; ++i) CHECK((C.row(i) - cross(lap, Z.row(i).transpose(), X)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("spiked kernel is base plus scaled laplace") {
  const MatrixXd X = sphere::sample_uniform_sphere(3, 30, 34);
  const auto base = KernelSpec::gaussian(1.0);
  const auto sp = KernelSpec::spiked(base, 3.0, 0.2);
  const MatrixXd K = gram(sp, X), B = gram(base, X), L = gram(KernelSpec::laplace(0.2), X);
  CHECK((K - (B + 3.0 * L)).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("kernel specs round-trip through JSON") {
  for (const auto& k : all_kernels()) {
    const auto j = to_json(k);
    const auto back = from_json(j);
    CHECK(to_json(back) == j);
  }
  CHECK_THROWS(from_json(nlohmann::json{{"variant", "cosine"}, {"params", nlohmann::json::object()}}));
}
