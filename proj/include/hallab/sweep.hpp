#pragma once

// Confidence-detector sweep over the correlation-region share rho on the
// sphere toy model. For each (rho, seed) cell a training set is drawn, every
// model family is fit on it, and a test pool of seen training points
// (non-hallucination) and fresh unseen points (hallucination) is scored by
// -|f(x)|.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "hallab/kernels.hpp"
#include "hallab/mlp.hpp"
#include "hallab/regressor.hpp"

namespace hallab::detect {

// score = -|prediction|, so low confidence ranks as more suspect.
std::vector<double> confidence_scores(const Eigen::VectorXd& predictions);
std::vector<double> confidence_scores(const regressor::FitModel& model, const Eigen::MatrixXd& points);
std::vector<double> confidence_scores(const regressor::GdModel& model, const Eigen::MatrixXd& points);
std::vector<double> confidence_scores(const mlp::MlpModel& model, const Eigen::MatrixXd& points);

enum class Family { Krr, Ridgeless, Bump, Spiked, KernelGd, MlpFull, MlpLast };

std::string to_string(Family f);  // "krr", "ridgeless", "bump", "spiked", "kernel-gd", "mlp-full", "mlp-last"
Family family_from_string(const std::string& s);

struct FamilySpec {
  std::string name;  // method label in the output; defaults to the family name
  Family family = Family::Ridgeless;
  std::optional<kernels::KernelSpec> kernel;  // kernel families
  double lambda = 0.0;                        // krr; bump uses 1/N when this is 0
  double t = 1e4;                             // kernel-gd
  double eta = 1.0;
  std::vector<int> hidden_widths{512, 512};  // mlp families
  double init_scale = 1.4142135623730951;
  double learning_rate = 0.1;
  int steps = 1000;
  bool single_precision = false;
};

FamilySpec default_family(Family f);
nlohmann::json to_json(const FamilySpec& f);
FamilySpec family_from_json(const nlohmann::json& j);

struct SweepConfig {
  int dim = 10;
  std::size_t n_train = 2000;
  std::size_t n_seen = 500;    // negatives: the first n_seen training points
  std::size_t n_unseen = 500;  // positives: fresh draws from the same distribution
  double epsilon = 0.02;
  std::vector<double> rhos{0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::uint64_t root_seed = 0;
  std::vector<FamilySpec> families;
  int jobs = 1;
};

nlohmann::json to_json(const SweepConfig& c);
// Missing fields keep their defaults; unknown fields are rejected with the
// offending path in the message.
SweepConfig sweep_config_from_json(const nlohmann::json& j);

struct SweepRow {
  double rho = 0.0;
  std::uint64_t seed = 0;
  std::string method;
  double auroc = 0.0;
  double tpr_at_fpr05 = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  // Per-region breakdown: unseen points of the core correlation regions
  // (C+ and C-) or of the noisy region against the same seen negatives.
  std::optional<double> auroc_core, auroc_noisy;
  double mean_abs_seen = 0.0;
  std::optional<double> mean_abs_unseen_core, mean_abs_unseen_noisy;
  double train_residual_max = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // ordered by rho, seed, family
};

SweepResult sweep_rho(const SweepConfig& config);

// Rows for a single (rho, seed) cell and a single family.
SweepRow run_cell(const SweepConfig& config, double rho, std::uint64_t seed, const FamilySpec& family);

std::string rows_to_csv(const std::vector<SweepRow>& rows);

// Per-method, per-rho means and standard errors, plus the Spearman
// correlation of mean AUROC against rho and AUROC(first rho) - AUROC(last rho).
nlohmann::json summarize(const SweepResult& result, const SweepConfig& config);

double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace hallab::detect
