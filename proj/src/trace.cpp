#include "hallab/trace.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "hallab/error.hpp"
#include "hallab/io.hpp"
#include "hallab/rng.hpp"

namespace hallab::trace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;
using Eigen::VectorXd;

namespace {

constexpr std::array<std::string_view, 4> kKindNames = {"avg_in", "last_in", "avg_out", "last_out"};

std::vector<double> real_list(const json& j, const std::string& field) {
  if (!j.is_array()) throw FormatError("trace field '" + field + "' must be an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) throw FormatError("trace field '" + field + "' must hold numbers");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw FormatError("trace field '" + field + "' holds a non-finite value");
    out.push_back(x);
  }
  return out;
}

VectorXd to_vector(const std::vector<double>& v) { return Eigen::Map<const VectorXd>(v.data(), Eigen::Index(v.size())); }

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double sigmoid(double m) {
  return m >= 0 ? 1.0 / (1.0 + std::exp(-m)) : std::exp(m) / (1.0 + std::exp(m));
}

double softplus(double m) { return m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m)); }

Eigen::MatrixXd feature_matrix(const std::vector<const TraceRecord*>& recs, int layer, FeatureKind kind) {
  Eigen::Index dim = -1;
  Eigen::MatrixXd X;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const VectorXd* f = recs[i]->feature(layer, kind);
    if (!f)
      throw InvalidArgument("record '" + recs[i]->id + "' has no " + std::string(to_string(kind)) +
                            " features at layer " + std::to_string(layer));
    if (dim < 0) {
      dim = f->size();
      X.resize(Eigen::Index(recs.size()), dim);
    } else if (f->size() != dim) {
      throw InvalidArgument("feature width differs across records at layer " + std::to_string(layer));
    }
    X.row(Eigen::Index(i)) = f->transpose();
  }
  return X;
}

std::vector<const TraceRecord*> pointers(const std::vector<TraceRecord>& v) {
  std::vector<const TraceRecord*> out;
  out.reserve(v.size());
  for (const auto& r : v) out.push_back(&r);
  return out;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::string_view to_string(FeatureKind k) { return kKindNames[static_cast<std::size_t>(k)]; }

FeatureKind feature_kind_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i)
    if (kKindNames[i] == s) return kFeatureKinds[i];
  throw InvalidArgument("unknown feature kind '" + std::string(s) + "'");
}

const VectorXd* TraceRecord::feature(int layer, FeatureKind kind) const {
  auto it = hidden_states.find(layer);
  if (it == hidden_states.end()) return nullptr;
  const auto& f = it->second[static_cast<std::size_t>(kind)];
  return f ? &*f : nullptr;
}

TraceRecord record_from_json(const json& j) {
  if (!j.is_object()) throw FormatError("trace record must be a JSON object");
  if (!j.contains("version")) throw FormatError("trace record without a version tag");
  if (j.at("version") != std::string(kTraceVersion))
    throw FormatError("trace schema version mismatch: expected " + std::string(kTraceVersion) + ", got " +
                      j.at("version").dump());
  static const std::set<std::string> known = {"version",      "id",          "is_hallucination",
                                              "answer_token_logprobs", "per_position_entropy",
                                              "hidden_states", "attention_diag_logs", "vocab_size"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw FormatError("unknown trace field '" + k + "'");

  TraceRecord r;
  const auto& id = j.at("id");
  if (id.is_string())
    r.id = id.get<std::string>();
  else if (id.is_number_integer())
    r.id = id.dump();
  else
    throw FormatError("trace field 'id' must be a string or integer");
  if (!j.at("is_hallucination").is_boolean()) throw FormatError("trace field 'is_hallucination' must be a boolean");
  r.is_hallucination = j.at("is_hallucination").get<bool>();

  r.answer_token_logprobs = real_list(j.at("answer_token_logprobs"), "answer_token_logprobs");
  for (double lp : r.answer_token_logprobs)
    if (lp > 0) throw FormatError("record '" + r.id + "': positive log-probability");

  if (j.contains("vocab_size") && !j.at("vocab_size").is_null()) {
    if (!j.at("vocab_size").is_number_integer() || j.at("vocab_size").get<std::int64_t>() < 1)
      throw FormatError("trace field 'vocab_size' must be a positive integer");
    r.vocab_size = j.at("vocab_size").get<std::int64_t>();
  }
  if (j.contains("per_position_entropy") && !j.at("per_position_entropy").is_null()) {
    r.per_position_entropy = real_list(j.at("per_position_entropy"), "per_position_entropy");
    const double cap = r.vocab_size ? std::log(double(*r.vocab_size)) * (1 + 1e-12) + 1e-12
                                    : std::numeric_limits<double>::infinity();
    for (double h : *r.per_position_entropy)
      if (h < 0 || h > cap) throw FormatError("record '" + r.id + "': entropy outside [0, ln vocab_size]");
  }
  if (j.contains("hidden_states") && !j.at("hidden_states").is_null()) {
    const auto& hs = j.at("hidden_states");
    if (!hs.is_object()) throw FormatError("trace field 'hidden_states' must be an object keyed by layer");
    for (const auto& [key, feats] : hs.items()) {
      int layer = 0;
      try {
        std::size_t used = 0;
        layer = std::stoi(key, &used);
        if (used != key.size()) throw std::invalid_argument(key);
      } catch (const std::exception&) {
        throw FormatError("hidden_states key '" + key + "' is not a layer index");
      }
      if (!feats.is_object()) throw FormatError("hidden_states." + key + " must be an object");
      LayerFeatures lf;
      for (const auto& [kname, vec] : feats.items()) {
        FeatureKind kind;
        try {
          kind = feature_kind_from_string(kname);
        } catch (const InvalidArgument&) {
          throw FormatError("hidden_states." + key + ": unknown feature kind '" + kname + "'");
        }
        lf[static_cast<std::size_t>(kind)] = to_vector(real_list(vec, "hidden_states." + key + "." + kname));
      }
      r.hidden_states[layer] = std::move(lf);
    }
  }
  if (j.contains("attention_diag_logs") && !j.at("attention_diag_logs").is_null()) {
    const auto& a = j.at("attention_diag_logs");
    if (!a.is_array()) throw FormatError("trace field 'attention_diag_logs' must be an array of arrays");
    std::vector<std::vector<double>> heads;
    for (const auto& h : a) heads.push_back(real_list(h, "attention_diag_logs"));
    r.attention_diag = std::move(heads);
  }
  return r;
}

json to_json(const TraceRecord& r) {
  ojson j;
  j["version"] = kTraceVersion;
  j["id"] = r.id;
  j["is_hallucination"] = r.is_hallucination;
  j["answer_token_logprobs"] = r.answer_token_logprobs;
  if (r.per_position_entropy) j["per_position_entropy"] = *r.per_position_entropy;
  if (!r.hidden_states.empty()) {
    ojson hs = ojson::object();
    for (const auto& [layer, lf] : r.hidden_states) {
      ojson o = ojson::object();
      for (auto k : kFeatureKinds)
        if (const auto& v = lf[static_cast<std::size_t>(k)])
          o[std::string(to_string(k))] = std::vector<double>(v->data(), v->data() + v->size());
      hs[std::to_string(layer)] = o;
    }
    j["hidden_states"] = hs;
  }
  if (r.attention_diag) j["attention_diag_logs"] = *r.attention_diag;
  if (r.vocab_size) j["vocab_size"] = *r.vocab_size;
  return json::parse(j.dump());
}

std::vector<TraceRecord> read_traces(std::istream& is) {
  std::vector<TraceRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError("trace line " + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_traces(std::ostream& os, const std::vector<TraceRecord>& records) {
  for (const auto& r : records) os << to_json(r).dump() << '\n';
}

double perplexity(const TraceRecord& r) {
  if (r.answer_token_logprobs.empty()) throw InvalidArgument("perplexity of an empty sequence");
  return std::exp(-mean_of(r.answer_token_logprobs));
}

std::optional<double> mean_logit_entropy(const TraceRecord& r) {
  if (!r.per_position_entropy || r.per_position_entropy->empty()) return std::nullopt;
  return mean_of(*r.per_position_entropy);
}

std::optional<double> window_entropy(const TraceRecord& r, int window) {
  if (window < 1) throw InvalidArgument("window must be at least 1");
  if (!r.per_position_entropy || r.per_position_entropy->empty()) return std::nullopt;
  const auto& h = *r.per_position_entropy;
  const std::size_t w = std::min<std::size_t>(std::size_t(window), h.size());
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + w <= h.size(); ++i) {
    double s = 0;
    for (std::size_t k = i; k < i + w; ++k) s += h[k];
    best = std::max(best, s / double(w));
  }
  return best;
}

namespace {

std::optional<double> attention_impl(const TraceRecord& r, bool normalize) {
  if (!r.attention_diag || r.attention_diag->empty()) return std::nullopt;
  double total = 0;
  for (const auto& head : *r.attention_diag) {
    if (head.empty()) throw FormatError("record '" + r.id + "': empty attention head");
    double s = 0;
    for (double d : head) {
      if (!(d > 0)) throw FormatError("record '" + r.id + "': nonpositive attention diagonal entry");
      s += std::log(d);
    }
    total += normalize ? s / double(head.size()) : s;
  }
  return total / double(r.attention_diag->size());
}

}  // namespace

std::optional<double> attention_score(const TraceRecord& r) { return attention_impl(r, false); }
std::optional<double> attention_score_normalized(const TraceRecord& r) { return attention_impl(r, true); }

double ProbeModel::decision(const VectorXd& x) const {
  double m = bias;
  for (std::size_t k = 0; k < retained.size(); ++k) {
    const auto i = Eigen::Index(k);
    m += weights[i] * (x[retained[k]] - mean[i]) / scale[i];
  }
  return m;
}

double ProbeModel::score(const VectorXd& x) const { return sigmoid(decision(x)); }

ProbeModel train_probe(const std::vector<const TraceRecord*>& train, int layer, FeatureKind kind,
                       const ProbeConfig& config) {
  if (config.epochs < 0 || !(config.lr > 0) || config.l2 < 0)
    throw InvalidArgument("probe needs epochs >= 0, lr > 0, l2 >= 0");
  if (train.empty()) throw InvalidArgument("probe training set is empty");
  const Eigen::MatrixXd X = feature_matrix(train, layer, kind);
  const auto n = X.rows();
  VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = train[std::size_t(i)]->is_hallucination ? 1.0 : 0.0;
  const double npos = y.sum();
  if (npos == 0 || npos == double(n)) throw InvalidArgument("probe training set has a single class");

  ProbeModel m;
  m.layer = layer;
  m.kind = kind;
  m.config = config;
  m.n_train = std::size_t(n);
  const VectorXd mu = X.colwise().mean();
  std::vector<double> means, scales;
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    const double sd = std::sqrt((X.col(c).array() - mu[c]).square().mean());
    if (sd > 1e-12 * std::max(1.0, std::abs(mu[c]))) {
      m.retained.push_back(c);
      means.push_back(mu[c]);
      scales.push_back(sd);
    }
  }
  m.mean = to_vector(means);
  m.scale = to_vector(scales);
  const auto p = Eigen::Index(m.retained.size());
  Eigen::MatrixXd Z(n, p);
  for (Eigen::Index k = 0; k < p; ++k) Z.col(k) = (X.col(m.retained[std::size_t(k)]).array() - m.mean[k]) / m.scale[k];

  VectorXd w = VectorXd::Zero(p);
  double b = 0;
  VectorXd margin(n), resid(n);
  for (int e = 0; e < config.epochs; ++e) {
    margin = (Z * w).array() + b;
    for (Eigen::Index i = 0; i < n; ++i) resid[i] = sigmoid(margin[i]) - y[i];
    const VectorXd gw = Z.transpose() * resid / double(n) + config.l2 * w;
    const double gb = resid.mean();
    w -= config.lr * gw;
    b -= config.lr * gb;
  }
  m.weights = w;
  m.bias = b;
  margin = (Z * w).array() + b;
  double loss = 0;
  for (Eigen::Index i = 0; i < n; ++i) loss += softplus(margin[i]) - y[i] * margin[i];
  m.final_loss = loss / double(n) + 0.5 * config.l2 * w.squaredNorm();

  std::vector<double> s(std::size_t(n), 0.0);
  std::vector<char> lab(std::size_t(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    s[std::size_t(i)] = margin[i];
    lab[std::size_t(i)] = y[i] > 0.5;
  }
  m.train_auroc = detect::auroc(s, lab);
  return m;
}

ProbeModel train_probe(const std::vector<TraceRecord>& train, int layer, FeatureKind kind, const ProbeConfig& config) {
  return train_probe(pointers(train), layer, kind, config);
}

std::pair<int, ProbeModel> select_probe_layer(const std::vector<const TraceRecord*>& train, FeatureKind kind,
                                              const ProbeConfig& config) {
  if (train.empty()) throw InvalidArgument("probe training set is empty");
  std::vector<int> layers;
  for (const auto& [layer, lf] : train.front()->hidden_states) {
    if (!lf[static_cast<std::size_t>(kind)]) continue;
    bool everywhere = std::all_of(train.begin(), train.end(), [&](const TraceRecord* r) { return r->feature(layer, kind); });
    if (everywhere) layers.push_back(layer);
  }
  if (layers.empty())
    throw InvalidArgument("no layer carries " + std::string(to_string(kind)) + " features in every record");
  std::optional<ProbeModel> best;
  for (int layer : layers) {
    ProbeModel m = train_probe(train, layer, kind, config);
    if (!best || m.train_auroc > best->train_auroc) best = std::move(m);
  }
  return {best->layer, std::move(*best)};
}

std::pair<int, ProbeModel> select_probe_layer(const std::vector<TraceRecord>& train, FeatureKind kind,
                                              const ProbeConfig& config) {
  return select_probe_layer(pointers(train), kind, config);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_records(const std::vector<TraceRecord>& records,
                                                                            double test_fraction,
                                                                            std::uint64_t seed) {
  if (!(test_fraction >= 0 && test_fraction <= 1)) throw InvalidArgument("test_fraction must lie in [0, 1]");
  std::unordered_set<std::string> ids;
  for (const auto& r : records)
    if (!ids.insert(r.id).second) throw InvalidArgument("duplicate trace id '" + r.id + "'");

  std::vector<std::size_t> train, test;
  for (bool cls : {false, true}) {
    std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].is_hallucination == cls) keyed.emplace_back(derive_seed(seed, {fnv1a(records[i].id)}), i);
    std::sort(keyed.begin(), keyed.end(), [&](const auto& a, const auto& b) {
      return a.first != b.first ? a.first < b.first : records[a.second].id < records[b.second].id;
    });
    const std::size_t n = keyed.size();
    std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * double(n)));
    if (n >= 2 && test_fraction > 0 && test_fraction < 1) n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
    for (std::size_t k = 0; k < n; ++k) (k < n_test ? test : train).push_back(keyed[k].second);
  }
  auto canonical = [&](std::vector<std::size_t>& v) {
    std::sort(v.begin(), v.end(), [&](std::size_t a, std::size_t b) {
      const auto ha = derive_seed(seed, {fnv1a(records[a].id)}), hb = derive_seed(seed, {fnv1a(records[b].id)});
      return ha != hb ? ha < hb : records[a].id < records[b].id;
    });
  };
  canonical(train);
  canonical(test);
  return {train, test};
}

namespace {

using Scorer = std::function<std::optional<double>(const TraceRecord&)>;

detect::DetectionReport unavailable(std::string method, std::string note) {
  detect::DetectionReport r;
  r.method = std::move(method);
  r.available = false;
  r.note = std::move(note);
  return r;
}

detect::DetectionReport score_method(const std::string& method, const std::vector<TraceRecord>& records,
                                     const std::vector<std::size_t>& train, const std::vector<std::size_t>& test,
                                     const Scorer& scorer, const std::string& missing_note) {
  auto collect = [&](const std::vector<std::size_t>& idx, std::vector<detect::ScoredExample>& out) {
    for (auto i : idx) {
      const auto s = scorer(records[i]);
      if (!s) return false;
      out.push_back({records[i].id, *s, records[i].is_hallucination, {}});
    }
    return true;
  };
  std::vector<detect::ScoredExample> tr, te;
  if (!collect(train, tr) || !collect(test, te)) return unavailable(method, missing_note);
  auto rep = detect::make_report(method, te);
  if (!rep.available) return rep;
  const bool train_two_class = std::any_of(tr.begin(), tr.end(), [](auto& e) { return e.is_hallucination; }) &&
                               std::any_of(tr.begin(), tr.end(), [](auto& e) { return !e.is_hallucination; });
  if (train_two_class) {
    rep.threshold = detect::best_balanced_threshold(tr);
    rep.accuracy = detect::accuracy_at(te, *rep.threshold);
  }
  return rep;
}

}  // namespace

EvalResult evaluate_detectors(const std::vector<TraceRecord>& records, const EvalConfig& config) {
  EvalResult res;
  auto [train, test] = split_records(records, config.test_fraction, config.seed);
  res.n_train = train.size();
  res.n_test = test.size();

  res.reports.push_back(score_method(
      "perplexity", records, train, test,
      [](const TraceRecord& r) -> std::optional<double> {
        if (r.answer_token_logprobs.empty()) return std::nullopt;
        return perplexity(r);
      },
      "records without answer-token log-probabilities"));
  res.reports.push_back(score_method("logit_entropy", records, train, test, mean_logit_entropy,
                                     "records without per-position entropies"));
  const int window = config.window;
  res.reports.push_back(score_method(
      "window_entropy", records, train, test, [window](const TraceRecord& r) { return window_entropy(r, window); },
      "records without per-position entropies"));
  res.reports.push_back(score_method("attention_score", records, train, test, attention_score,
                                     "records without attention diagonals"));
  res.reports.push_back(score_method("attention_score_norm", records, train, test, attention_score_normalized,
                                     "records without attention diagonals"));

  std::vector<const TraceRecord*> train_recs;
  for (auto i : train) train_recs.push_back(&records[i]);
  for (auto kind : kFeatureKinds) {
    const std::string method = "probe_" + std::string(to_string(kind));
    std::optional<ProbeModel> probe;
    std::string note;
    try {
      probe = select_probe_layer(train_recs, kind, config.probe).second;
    } catch (const InvalidArgument& e) {
      note = e.what();
    }
    if (!probe) {
      res.reports.push_back(unavailable(method, note));
      continue;
    }
    res.probe_layers[method] = probe->layer;
    const ProbeModel& pm = *probe;
    res.reports.push_back(score_method(
        method, records, train, test,
        [&pm](const TraceRecord& r) -> std::optional<double> {
          const VectorXd* f = r.feature(pm.layer, pm.kind);
          if (!f) return std::nullopt;
          return pm.decision(*f);
        },
        "test records without features at the selected layer"));
  }
  return res;
}

std::string reports_to_csv(const std::vector<detect::DetectionReport>& reports) {
  std::string out = io::csv_row({"method", "auroc", "tpr_at_fpr05", "accuracy"});
  for (const auto& r : reports) {
    if (!r.available) {
      out += io::csv_row({r.method, "", "", ""});
      continue;
    }
    out += io::csv_row(
        {r.method, io::format_double(r.auroc), io::format_double(r.tpr_at_fpr05), io::format_optional(r.accuracy)});
  }
  return out;
}

json to_json(const EvalResult& res) {
  ojson j;
  j["kind"] = "detector_report";
  j["version"] = 1;
  j["n_train"] = res.n_train;
  j["n_test"] = res.n_test;
  ojson methods = ojson::array();
  for (const auto& r : res.reports) {
    ojson m;
    m["method"] = r.method;
    m["available"] = r.available;
    if (!r.available) {
      m["note"] = r.note;
    } else {
      m["auroc"] = r.auroc;
      m["tpr_at_fpr05"] = r.tpr_at_fpr05;
      m["accuracy"] = r.accuracy ? ojson(*r.accuracy) : ojson(nullptr);
      m["threshold"] = r.threshold ? ojson(*r.threshold) : ojson(nullptr);
      m["n_pos"] = r.n_pos;
      m["n_neg"] = r.n_neg;
    }
    if (auto it = res.probe_layers.find(r.method); it != res.probe_layers.end()) m["layer"] = it->second;
    methods.push_back(m);
  }
  j["methods"] = methods;
  return json::parse(j.dump());
}

}  // namespace hallab::trace
