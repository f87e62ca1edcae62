#include "hallab/sphere.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "hallab/error.hpp"

namespace hallab::sphere {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

std::string_view to_string(Region r) {
  switch (r) {
    case Region::CPlus: return "CPlus";
    case Region::CMinus: return "CMinus";
    case Region::Noisy: return "Noisy";
    case Region::Transition: return "Transition";
  }
  return "?";
}

Region region_from_string(std::string_view s) {
  if (s == "CPlus") return Region::CPlus;
  if (s == "CMinus") return Region::CMinus;
  if (s == "Noisy") return Region::Noisy;
  if (s == "Transition") return Region::Transition;
  throw FormatError("unknown region tag '" + std::string(s) + "'");
}

std::string_view to_string(Ramp r) {
  return r == Ramp::Cosine ? "cosine" : "raised_cosine";
}

Ramp ramp_from_string(std::string_view s) {
  if (s == "cosine") return Ramp::Cosine;
  if (s == "raised_cosine") return Ramp::RaisedCosine;
  throw InvalidArgument("unknown ramp '" + std::string(s) + "'");
}

double ramp_value(Ramp r, double u) {
  u = std::clamp(u, 0.0, 1.0);
  switch (r) {
    case Ramp::Cosine: return std::cos(std::numbers::pi * u / 2);
    case Ramp::RaisedCosine: return 0.5 * (1 + std::cos(std::numbers::pi * u));
  }
  return 0.0;
}

namespace {

constexpr int kSimpsonIntervals = 4096;  // even

// Integral of sin^{d-1} over [0, theta] by composite Simpson.
double polar_density_integral(int dim, double theta) {
  if (theta <= 0) return 0.0;
  const int p = dim - 1;
  auto f = [p](double t) { return p == 0 ? 1.0 : std::pow(std::sin(t), p); };
  const double h = theta / kSimpsonIntervals;
  double acc = f(0) + f(theta);
  for (int i = 1; i < kSimpsonIntervals; ++i) acc += (i % 2 ? 4.0 : 2.0) * f(i * h);
  return acc * h / 3;
}

VectorXd default_axis(int dim) {
  VectorXd axis = VectorXd::Zero(dim + 1);
  axis(dim) = 1.0;
  return axis;
}

VectorXd draw_point(int dim, Rng& rng, std::normal_distribution<double>& normal) {
  VectorXd v(dim + 1);
  for (;;) {
    for (int j = 0; j <= dim; ++j) v(j) = normal(rng);
    const double n = v.norm();
    if (n > 0 && std::isfinite(n)) return v / n;
  }
}

void check_unit(const VectorXd& x, const RegionSpec& spec) {
  if (x.size() != spec.cap_axis.size())
    throw InvalidArgument("point dimension " + std::to_string(x.size()) +
                          " does not match region spec dimension " +
                          std::to_string(spec.cap_axis.size()));
}

}  // namespace

double cap_measure(int dim, double theta) {
  if (dim < 1) throw InvalidArgument("sphere dimension must be >= 1");
  theta = std::clamp(theta, 0.0, std::numbers::pi);
  return polar_density_integral(dim, theta) / polar_density_integral(dim, std::numbers::pi);
}

double solve_cap_angle(int dim, double target_measure) {
  if (dim < 1) throw InvalidArgument("sphere dimension must be >= 1");
  if (!(target_measure > 0 && target_measure < 1))
    throw InvalidArgument("cap measure must lie in (0, 1)");
  const double total = polar_density_integral(dim, std::numbers::pi);
  double lo = 0.0, hi = std::numbers::pi, mid = 0.0, residual = 1.0;
  for (int step = 0; step < 200; ++step) {
    mid = 0.5 * (lo + hi);
    residual = polar_density_integral(dim, mid) / total - target_measure;
    if (std::abs(residual) < 1e-14 || hi - lo < 1e-15) return mid;
    (residual < 0 ? lo : hi) = mid;
  }
  if (std::abs(residual) <= 1e-8) return mid;
  throw NumericalError("cap angle bisection did not converge (residual " +
                       std::to_string(residual) + ")");
}

RegionSpec make_region_spec(int dim, double rho, double epsilon, Ramp ramp,
                            const VectorXd& cap_axis) {
  if (dim < 1) throw InvalidArgument("sphere dimension must be >= 1");
  if (!(rho > 0 && rho < 1)) throw InvalidArgument("rho must lie in (0, 1)");
  if (!(epsilon > 0 && epsilon < 2 * std::min(rho, 1 - rho)))
    throw InvalidArgument("epsilon must lie in (0, 2 min(rho, 1 - rho))");
  RegionSpec s;
  s.dim = dim;
  s.rho = rho;
  s.epsilon = epsilon;
  s.ramp = ramp;
  if (cap_axis.size() == 0) {
    s.cap_axis = default_axis(dim);
  } else {
    if (cap_axis.size() != dim + 1 || cap_axis.norm() == 0)
      throw InvalidArgument("cap_axis must be a nonzero vector in R^{d+1}");
    s.cap_axis = cap_axis.normalized();
  }
  const double core = s.measure_plus();
  const double band = epsilon / 2;
  s.band_angles[0] = solve_cap_angle(dim, core);
  s.band_angles[1] = solve_cap_angle(dim, core + band);
  s.band_angles[2] = std::numbers::pi - s.band_angles[1];
  s.band_angles[3] = std::numbers::pi - s.band_angles[0];
  s.cap_angle_plus = s.band_angles[0];
  s.cap_angle_minus = s.band_angles[0];
  return s;
}

MatrixXd SphereDataset::inputs() const {
  if (points.empty()) return {};
  MatrixXd X(points.size(), points.front().x.size());
  for (std::size_t i = 0; i < points.size(); ++i) X.row(i) = points[i].x.transpose();
  return X;
}

VectorXd SphereDataset::labels() const {
  VectorXd y(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) y(i) = points[i].y;
  return y;
}

MatrixXd sample_uniform_sphere(int dim, std::size_t n, Rng& rng) {
  if (dim < 1) throw InvalidArgument("sphere dimension must be >= 1");
  std::normal_distribution<double> normal;
  MatrixXd X(n, dim + 1);
  for (std::size_t i = 0; i < n; ++i) X.row(i) = draw_point(dim, rng, normal).transpose();
  return X;
}

MatrixXd sample_uniform_sphere(int dim, std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x5a});
  return sample_uniform_sphere(dim, n, rng);
}

double polar_angle(const VectorXd& x, const RegionSpec& spec) {
  check_unit(x, spec);
  const double c = x.dot(spec.cap_axis) / x.norm();
  return std::acos(std::clamp(c, -1.0, 1.0));
}

namespace {

Region classify_angle(double theta, const RegionSpec& spec) {
  const auto& a = spec.band_angles;
  if (theta <= a[0]) return Region::CPlus;
  if (theta < a[1]) return Region::Transition;
  if (theta <= a[2]) return Region::Noisy;
  if (theta < a[3]) return Region::Transition;
  return Region::CMinus;
}

double f_star_angle(double theta, const RegionSpec& spec) {
  const auto& a = spec.band_angles;
  if (theta <= a[0]) return kCoreAmplitude;
  if (theta < a[1]) return kCoreAmplitude * ramp_value(spec.ramp, (theta - a[0]) / (a[1] - a[0]));
  if (theta <= a[2]) return 0.0;
  if (theta < a[3])
    return -kCoreAmplitude * ramp_value(spec.ramp, 1 - (theta - a[2]) / (a[3] - a[2]));
  return -kCoreAmplitude;
}

}  // namespace

Region classify_region(const VectorXd& x, const RegionSpec& spec) {
  return classify_angle(polar_angle(x, spec), spec);
}

double target_f_star(const VectorXd& x, const RegionSpec& spec) {
  return f_star_angle(polar_angle(x, spec), spec);
}

int label_from_quantile(double fstar, double u) {
  return u < (1 + fstar) / 2 ? 1 : -1;
}

int sample_label(const VectorXd& x, const RegionSpec& spec, Rng& rng) {
  return label_from_quantile(target_f_star(x, spec), uniform01(rng));
}

SphereDataset make_dataset(const RegionSpec& spec, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("dataset size must be >= 1");
  SphereDataset data;
  data.spec = spec;
  data.seed = seed;
  data.points.reserve(n);
  Rng rng = make_rng(seed, {0xda7a});
  std::normal_distribution<double> normal;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledPoint p;
    p.x = draw_point(spec.dim, rng, normal);
    const double theta = polar_angle(p.x, spec);
    p.region = classify_angle(theta, spec);
    p.fstar = f_star_angle(theta, spec);
    p.y = label_from_quantile(p.fstar, uniform01(rng));
    data.points.push_back(std::move(p));
  }
  return data;
}

std::vector<LabeledPoint> sample_in_region(const RegionSpec& spec, Region region,
                                           std::size_t n, Rng& rng) {
  std::normal_distribution<double> normal;
  std::vector<LabeledPoint> out;
  out.reserve(n);
  std::size_t attempts = 0;
  const std::size_t budget = 10000 * (n + 1);
  while (out.size() < n) {
    if (++attempts > budget)
      throw NumericalError("rejection sampling budget exhausted for region " +
                           std::string(to_string(region)));
    LabeledPoint p;
    p.x = draw_point(spec.dim, rng, normal);
    const double theta = polar_angle(p.x, spec);
    p.region = classify_angle(theta, spec);
    if (p.region != region) continue;
    p.fstar = f_star_angle(theta, spec);
    p.y = label_from_quantile(p.fstar, uniform01(rng));
    out.push_back(std::move(p));
  }
  return out;
}

double fill_distance(const MatrixXd& samples, const MatrixXd& mesh) {
  if (samples.rows() == 0) throw InvalidArgument("fill distance of an empty sample set");
  if (mesh.rows() == 0) throw InvalidArgument("fill distance needs a nonempty mesh");
  if (samples.cols() != mesh.cols()) throw InvalidArgument("mesh/sample dimension mismatch");
  const VectorXd sample_sq = samples.rowwise().squaredNorm();
  constexpr Eigen::Index kBlock = 512;
  double worst = 0.0;
  for (Eigen::Index start = 0; start < mesh.rows(); start += kBlock) {
    const Eigen::Index len = std::min(kBlock, mesh.rows() - start);
    const auto block = mesh.middleRows(start, len);
    // ||m - x||^2 = |m|^2 + |x|^2 - 2 m.x
    MatrixXd d2 = (-2.0 * block * samples.transpose()).rowwise() + sample_sq.transpose();
    d2.colwise() += block.rowwise().squaredNorm();
    const VectorXd nearest = d2.rowwise().minCoeff();
    worst = std::max(worst, nearest.maxCoeff());
  }
  return std::sqrt(std::max(worst, 0.0));
}

double fill_distance(const SphereDataset& data, const MatrixXd& mesh) {
  return fill_distance(data.inputs(), mesh);
}

double fill_distance(const SphereDataset& data, std::size_t mesh_size, std::uint64_t mesh_seed) {
  if (data.points.empty()) throw InvalidArgument("fill distance of an empty dataset");
  return fill_distance(data.inputs(), sample_uniform_sphere(data.spec.dim, mesh_size, mesh_seed));
}

double separation_distance(const MatrixXd& samples) {
  if (samples.rows() < 2) throw InvalidArgument("separation distance needs N >= 2");
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < samples.rows(); ++i)
    for (Eigen::Index j = i + 1; j < samples.rows(); ++j)
      best = std::min(best, (samples.row(i) - samples.row(j)).squaredNorm());
  return std::sqrt(best);
}

double separation_distance(const SphereDataset& data) {
  return separation_distance(data.inputs());
}

namespace {

json spec_to_json(const RegionSpec& s) {
  return {{"dim", s.dim},
          {"rho", s.rho},
          {"epsilon", s.epsilon},
          {"cap_axis", std::vector<double>(s.cap_axis.data(), s.cap_axis.data() + s.cap_axis.size())},
          {"cap_angle_plus", s.cap_angle_plus},
          {"cap_angle_minus", s.cap_angle_minus},
          {"band_angles", s.band_angles},
          {"ramp", std::string(to_string(s.ramp))}};
}

}  // namespace

void write_jsonl(std::ostream& os, const SphereDataset& data) {
  json header = {{"kind", "sphere_dataset"},
                 {"version", 1},
                 {"spec", spec_to_json(data.spec)},
                 {"seed", data.seed},
                 {"n", data.points.size()}};
  os << header.dump() << '\n';
  for (const auto& p : data.points) {
    json line = {{"x", std::vector<double>(p.x.data(), p.x.data() + p.x.size())},
                 {"y", p.y},
                 {"region", std::string(to_string(p.region))},
                 {"fstar", p.fstar}};
    os << line.dump() << '\n';
  }
}

SphereDataset read_jsonl(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("empty dataset stream");
  SphereDataset data;
  try {
    const json header = json::parse(line);
    if (header.value("kind", "") != "sphere_dataset") throw FormatError("not a sphere dataset");
    const json& s = header.at("spec");
    const auto axis = s.at("cap_axis").get<std::vector<double>>();
    data.spec = make_region_spec(s.at("dim").get<int>(), s.at("rho").get<double>(),
                                 s.at("epsilon").get<double>(),
                                 ramp_from_string(s.at("ramp").get<std::string>()),
                                 Eigen::Map<const VectorXd>(axis.data(), axis.size()));
    data.seed = header.at("seed").get<std::uint64_t>();
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      LabeledPoint p;
      const auto x = j.at("x").get<std::vector<double>>();
      p.x = Eigen::Map<const VectorXd>(x.data(), x.size());
      p.y = j.at("y").get<int>();
      p.region = region_from_string(j.at("region").get<std::string>());
      p.fstar = j.at("fstar").get<double>();
      data.points.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed dataset JSONL: ") + e.what());
  }
  return data;
}

}  // namespace hallab::sphere
