#pragma once

// Scoring machinery shared by every detector: AUROC, TPR at a false-positive
// cap, thresholded accuracy, and the macro-averaged Q&A accuracy / refusal
// rate over the six profile attributes.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace hallab::detect {

// Higher score = more suspect of being a hallucination.
struct ScoredExample {
  std::string id;
  double score = 0.0;
  bool is_hallucination = false;
  std::string group;
};

struct DetectionReport {
  std::string method;
  bool available = true;
  std::string note;  // why a method is unavailable
  double auroc = 0.5;
  double tpr_at_fpr05 = 0.0;
  std::optional<double> accuracy;   // at a threshold fixed on training data
  std::optional<double> threshold;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

// Mann-Whitney AUROC with midranks: P(pos > neg) + P(pos == neg) / 2.
// Throws InvalidArgument unless both classes are present.
double auroc(std::span<const double> scores, std::span<const char> is_positive);
double auroc(std::span<const ScoredExample> examples);

// Largest TPR over thresholds t drawn from the observed scores (flag when
// score >= t) whose empirical FPR is at most fpr_cap. 0 when no threshold
// qualifies.
double tpr_at_fpr(std::span<const double> scores, std::span<const char> is_positive,
                  double fpr_cap = 0.05);
double tpr_at_fpr(std::span<const ScoredExample> examples, double fpr_cap = 0.05);

// Threshold maximizing balanced accuracy (TPR + TNR) / 2; ties go to the
// highest threshold.
double best_balanced_threshold(std::span<const ScoredExample> examples);
double accuracy_at(std::span<const ScoredExample> examples, double threshold);

// Fills auroc / tpr / counts. Single-class input yields available = false.
DetectionReport make_report(std::string method, std::span<const ScoredExample> examples);

inline constexpr int kNumAttributes = 6;
inline constexpr std::string_view kRefusalAnswer = "I don't know.";

// Trims and collapses runs of whitespace to single spaces.
std::string normalize_whitespace(std::string_view s);
bool is_refusal(std::string_view response);

// Unweighted mean over attributes 1..6 of the per-attribute rate of `flag`.
// Throws InvalidArgument if an attribute has no responses or an index is out
// of range.
double qa_accuracy(std::span<const std::pair<int, bool>> responses);
double refusal_rate(std::span<const std::pair<int, bool>> responses);
double refusal_rate(std::span<const std::pair<int, std::string>> responses);

}  // namespace hallab::detect
