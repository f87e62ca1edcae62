#pragma once

// Toy-model data on the unit sphere S^d in R^{d+1}.
//
// The sphere is split by polar angle around `cap_axis` into
//   C+ core | transition band | noisy core | transition band | C- core
// with measures rho/2 - eps/4, eps/2, 1 - rho - eps/2, eps/2, rho/2 - eps/4.
// The target function is +0.98 on C+, -0.98 on C-, 0 on the noisy region and
// ramps continuously across the two bands.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "hallab/rng.hpp"

namespace hallab::sphere {

inline constexpr double kCoreAmplitude = 0.98;

enum class Region { CPlus, CMinus, Noisy, Transition };

std::string_view to_string(Region r);
Region region_from_string(std::string_view s);

// Transition profile r(u) on u in [0,1], r(0) = 1, r(1) = 0.
enum class Ramp {
  Cosine,        // cos(pi u / 2)
  RaisedCosine,  // (1 + cos(pi u)) / 2, C^1 at both ends
};

std::string_view to_string(Ramp r);
Ramp ramp_from_string(std::string_view s);
double ramp_value(Ramp r, double u);

struct RegionSpec {
  int dim = 2;  // d, points live in R^{d+1}
  double rho = 0.5;
  double epsilon = 0.02;
  Eigen::VectorXd cap_axis;  // unit vector, default e_{d+1}
  double cap_angle_plus = 0.0;   // polar radius of the C+ core around cap_axis
  double cap_angle_minus = 0.0;  // polar radius of the C- core around -cap_axis
  // Polar angles (from cap_axis) of the four region boundaries:
  // [C+ core end, upper band end, noisy core end, lower band end].
  std::array<double, 4> band_angles{};
  Ramp ramp = Ramp::Cosine;

  // Target measures of the three regions.
  double measure_plus() const { return rho / 2 - epsilon / 4; }
  double measure_minus() const { return rho / 2 - epsilon / 4; }
  double measure_noisy() const { return 1 - rho - epsilon / 2; }
  double measure_transition() const { return epsilon; }
};

// Builds a RegionSpec and solves the cap angles. Throws InvalidArgument when
// rho is outside (0,1) or epsilon outside (0, 2 min(rho, 1 - rho)).
RegionSpec make_region_spec(int dim, double rho, double epsilon = 0.02,
                            Ramp ramp = Ramp::Cosine,
                            const Eigen::VectorXd& cap_axis = {});

struct LabeledPoint {
  Eigen::VectorXd x;
  int y = 1;
  Region region = Region::Noisy;
  double fstar = 0.0;
};

struct SphereDataset {
  RegionSpec spec;
  std::vector<LabeledPoint> points;
  std::uint64_t seed = 0;

  std::size_t size() const { return points.size(); }
  Eigen::MatrixXd inputs() const;   // N x (d+1), one point per row
  Eigen::VectorXd labels() const;   // +-1 as doubles
};

// n points i.i.d. uniform on S^d, one per row.
Eigen::MatrixXd sample_uniform_sphere(int dim, std::size_t n, std::uint64_t seed);
Eigen::MatrixXd sample_uniform_sphere(int dim, std::size_t n, Rng& rng);

// Normalized measure of the polar cap of angular radius theta on S^d.
double cap_measure(int dim, double theta);

// Angle theta with cap_measure(dim, theta) == target_measure (to 1e-8).
double solve_cap_angle(int dim, double target_measure);

double polar_angle(const Eigen::VectorXd& x, const RegionSpec& spec);
Region classify_region(const Eigen::VectorXd& x, const RegionSpec& spec);
double target_f_star(const Eigen::VectorXd& x, const RegionSpec& spec);

// Label with P(Y = +1) = (1 + fstar) / 2, decided by a uniform quantile u in [0,1).
int label_from_quantile(double fstar, double u);
int sample_label(const Eigen::VectorXd& x, const RegionSpec& spec, Rng& rng);

SphereDataset make_dataset(const RegionSpec& spec, std::size_t n, std::uint64_t seed);

// Draws n points conditioned on `region` by rejection (used for held-out
// probe sets). Labels are drawn from the same conditional law.
std::vector<LabeledPoint> sample_in_region(const RegionSpec& spec, Region region,
                                           std::size_t n, Rng& rng);

// Largest distance from a mesh point to its nearest sample. A lower bound on
// the true covering radius that tightens as the mesh densifies.
double fill_distance(const Eigen::MatrixXd& samples, const Eigen::MatrixXd& mesh);
double fill_distance(const SphereDataset& data, const Eigen::MatrixXd& mesh);
double fill_distance(const SphereDataset& data, std::size_t mesh_size = 100000,
                     std::uint64_t mesh_seed = 0x5eed);

// Exact minimum pairwise Euclidean distance.
double separation_distance(const Eigen::MatrixXd& samples);
double separation_distance(const SphereDataset& data);

// JSONL: header line {"kind":"sphere_dataset", "spec":..., "seed":...}, then
// one {"x":[...],"y":..,"region":..,"fstar":..} per point.
void write_jsonl(std::ostream& os, const SphereDataset& data);
SphereDataset read_jsonl(std::istream& is);

}  // namespace hallab::sphere
