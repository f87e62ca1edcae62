#pragma once

// Detectors over model traces produced elsewhere: perplexity, mean and
// windowed logit entropy, the attention log-det score, and logistic probes
// on hidden states.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "hallab/metrics.hpp"

namespace hallab::trace {

inline constexpr std::string_view kTraceVersion = "trace_v1";

enum class FeatureKind { AvgIn, LastIn, AvgOut, LastOut };
inline constexpr std::array<FeatureKind, 4> kFeatureKinds = {FeatureKind::AvgIn, FeatureKind::LastIn,
                                                            FeatureKind::AvgOut, FeatureKind::LastOut};
std::string_view to_string(FeatureKind k);  // "avg_in", "last_in", "avg_out", "last_out"
FeatureKind feature_kind_from_string(std::string_view s);

using LayerFeatures = std::array<std::optional<Eigen::VectorXd>, 4>;  // indexed by FeatureKind

struct TraceRecord {
  std::string id;
  bool is_hallucination = false;
  std::vector<double> answer_token_logprobs;               // natural log, <= 0
  std::optional<std::vector<double>> per_position_entropy;  // nats
  std::map<int, LayerFeatures> hidden_states;               // layer -> features
  std::optional<std::vector<std::vector<double>>> attention_diag;  // per (layer, head) diagonal entries
  std::optional<std::int64_t> vocab_size;

  const Eigen::VectorXd* feature(int layer, FeatureKind kind) const;
};

// Parses one JSONL object; throws FormatError on a missing or different
// version tag, wrong types, non-finite or positive logprobs, and entropies
// outside [0, ln vocab_size].
TraceRecord record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TraceRecord& r);
std::vector<TraceRecord> read_traces(std::istream& is);
void write_traces(std::ostream& os, const std::vector<TraceRecord>& records);

// exp(-mean logprob); InvalidArgument when empty.
double perplexity(const TraceRecord& r);
// nullopt when entropies are absent (or empty).
std::optional<double> mean_logit_entropy(const TraceRecord& r);
// Max over contiguous windows of length min(window, n) of the mean entropy.
std::optional<double> window_entropy(const TraceRecord& r, int window = 8);
// Mean over heads of sum log diagonal; FormatError on a nonpositive entry.
std::optional<double> attention_score(const TraceRecord& r);
// Same with each head's sum divided by its length.
std::optional<double> attention_score_normalized(const TraceRecord& r);

struct ProbeConfig {
  int epochs = 500;
  double lr = 0.1;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
};

struct ProbeModel {
  int layer = 0;
  FeatureKind kind = FeatureKind::AvgIn;
  std::vector<Eigen::Index> retained;  // input dimensions with nonzero spread
  Eigen::VectorXd mean, scale;         // over retained dimensions, scale > 0
  Eigen::VectorXd weights;
  double bias = 0.0;
  ProbeConfig config;
  std::size_t n_train = 0;
  double train_auroc = 0.5;
  double final_loss = 0.0;

  double decision(const Eigen::VectorXd& features) const;  // w.z + b
  double score(const Eigen::VectorXd& features) const;     // sigmoid of decision
};

// Full-batch gradient descent on the mean L2-regularized logistic loss over
// z-scored features, starting from zero.
ProbeModel train_probe(const std::vector<const TraceRecord*>& train, int layer, FeatureKind kind,
                       const ProbeConfig& config = {});
ProbeModel train_probe(const std::vector<TraceRecord>& train, int layer, FeatureKind kind,
                       const ProbeConfig& config = {});

// Layers holding `kind` features in every record; one probe per layer, the
// highest training AUROC wins, ties to the lowest layer.
std::pair<int, ProbeModel> select_probe_layer(const std::vector<const TraceRecord*>& train, FeatureKind kind,
                                              const ProbeConfig& config = {});
std::pair<int, ProbeModel> select_probe_layer(const std::vector<TraceRecord>& train, FeatureKind kind,
                                              const ProbeConfig& config = {});

struct EvalConfig {
  double test_fraction = 0.5;  // per class, chosen by hash of (seed, id)
  std::uint64_t seed = 0;
  int window = 8;
  ProbeConfig probe;
};

struct EvalResult {
  std::vector<detect::DetectionReport> reports;
  std::map<std::string, int> probe_layers;  // method -> selected layer
  std::size_t n_train = 0, n_test = 0;
};

// Train/test split of record indices; deterministic and independent of the
// order of `records`.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_records(const std::vector<TraceRecord>& records,
                                                                            double test_fraction,
                                                                            std::uint64_t seed);

// Methods, in order: perplexity, logit_entropy, window_entropy,
// attention_score, attention_score_norm, probe_avg_in, probe_last_in,
// probe_avg_out, probe_last_out. Scores on the test split; accuracy uses the
// balanced-accuracy threshold from the training split. Methods whose fields
// are missing come back with available = false and a note.
EvalResult evaluate_detectors(const std::vector<TraceRecord>& records, const EvalConfig& config = {});

std::string reports_to_csv(const std::vector<detect::DetectionReport>& reports);
nlohmann::json to_json(const EvalResult& result);

}  // namespace hallab::trace
