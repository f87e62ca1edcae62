#include "hallab/metrics.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <numeric>

#include "hallab/error.hpp"

namespace hallab::detect {

namespace {

void check_inputs(std::span<const double> scores, std::span<const char> pos) {
  if (scores.size() != pos.size()) throw InvalidArgument("scores and labels differ in length");
  for (double s : scores)
    if (!std::isfinite(s)) throw InvalidArgument("scores must be finite");
}

std::pair<std::size_t, std::size_t> class_counts(std::span<const char> pos) {
  const auto np = static_cast<std::size_t>(std::count_if(pos.begin(), pos.end(), [](char c) { return c != 0; }));
  return {np, pos.size() - np};
}

void require_both(std::size_t np, std::size_t nn, const char* what) {
  if (np == 0 || nn == 0)
    throw InvalidArgument(std::string(what) + " is undefined unless both classes are present");
}

void split(std::span<const ScoredExample> ex, std::vector<double>& s, std::vector<char>& p) {
  s.resize(ex.size());
  p.resize(ex.size());
  for (std::size_t i = 0; i < ex.size(); ++i) {
    s[i] = ex[i].score;
    p[i] = ex[i].is_hallucination ? 1 : 0;
  }
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const char> is_positive) {
  check_inputs(scores, is_positive);
  const auto [np, nn] = class_counts(is_positive);
  require_both(np, nn, "AUROC");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of 1-based midranks of the positives.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (is_positive[order[k]]) rank_sum += midrank;
    i = j;
  }
  const double u = rank_sum - 0.5 * static_cast<double>(np) * static_cast<double>(np + 1);
  return u / (static_cast<double>(np) * static_cast<double>(nn));
}

double auroc(std::span<const ScoredExample> examples) {
  std::vector<double> s;
  std::vector<char> p;
  split(examples, s, p);
  return auroc(s, p);
}

double tpr_at_fpr(std::span<const double> scores, std::span<const char> is_positive, double fpr_cap) {
  check_inputs(scores, is_positive);
  const auto [np, nn] = class_counts(is_positive);
  require_both(np, nn, "TPR at FPR");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double best = 0.0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (is_positive[order[j]] ? tp : fp) += 1;
      ++j;
    }
    if (static_cast<double>(fp) / static_cast<double>(nn) <= fpr_cap)
      best = std::max(best, static_cast<double>(tp) / static_cast<double>(np));
    i = j;
  }
  return best;
}

double tpr_at_fpr(std::span<const ScoredExample> examples, double fpr_cap) {
  std::vector<double> s;
  std::vector<char> p;
  split(examples, s, p);
  return tpr_at_fpr(s, p, fpr_cap);
}

double best_balanced_threshold(std::span<const ScoredExample> examples) {
  std::vector<double> s;
  std::vector<char> p;
  split(examples, s, p);
  check_inputs(s, p);
  const auto [np, nn] = class_counts(p);
  require_both(np, nn, "balanced accuracy");

  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });

  // Flag nothing: TPR 0, TNR 1.
  double best_threshold = s[order.front()] + 1.0;
  double best = 0.5;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && s[order[j]] == s[order[i]]) {
      (p[order[j]] ? tp : fp) += 1;
      ++j;
    }
    const double bal = 0.5 * (static_cast<double>(tp) / np + 1.0 - static_cast<double>(fp) / nn);
    if (bal > best) {
      best = bal;
      best_threshold = s[order[i]];
    }
    i = j;
  }
  return best_threshold;
}

double accuracy_at(std::span<const ScoredExample> examples, double threshold) {
  if (examples.empty()) throw InvalidArgument("accuracy of an empty example set");
  std::size_t correct = 0;
  for (const auto& e : examples) correct += ((e.score >= threshold) == e.is_hallucination) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

DetectionReport make_report(std::string method, std::span<const ScoredExample> examples) {
  DetectionReport r;
  r.method = std::move(method);
  for (const auto& e : examples) (e.is_hallucination ? r.n_pos : r.n_neg) += 1;
  if (r.n_pos == 0 || r.n_neg == 0) {
    r.available = false;
    r.note = "single-class evaluation set";
    return r;
  }
  r.auroc = auroc(examples);
  r.tpr_at_fpr05 = tpr_at_fpr(examples, 0.05);
  return r;
}

std::string normalize_whitespace(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return out;
}

bool is_refusal(std::string_view response) {
  return normalize_whitespace(response) == kRefusalAnswer;
}

namespace {

double macro_rate(std::span<const std::pair<int, bool>> responses, const char* what) {
  std::array<std::size_t, kNumAttributes> hits{}, totals{};
  for (const auto& [attr, flag] : responses) {
    if (attr < 1 || attr > kNumAttributes)
      throw InvalidArgument(std::string(what) + ": attribute index " + std::to_string(attr) +
                            " outside 1..6");
    totals[attr - 1] += 1;
    hits[attr - 1] += flag ? 1 : 0;
  }
  double sum = 0.0;
  for (int a = 0; a < kNumAttributes; ++a) {
    if (totals[a] == 0)
      throw InvalidArgument(std::string(what) + ": attribute " + std::to_string(a + 1) +
                            " has no responses");
    sum += static_cast<double>(hits[a]) / static_cast<double>(totals[a]);
  }
  return sum / kNumAttributes;
}

}  // namespace

double qa_accuracy(std::span<const std::pair<int, bool>> responses) {
  return macro_rate(responses, "accuracy");
}

double refusal_rate(std::span<const std::pair<int, bool>> responses) {
  return macro_rate(responses, "refusal rate");
}

double refusal_rate(std::span<const std::pair<int, std::string>> responses) {
  std::vector<std::pair<int, bool>> flags;
  flags.reserve(responses.size());
  for (const auto& [attr, text] : responses) flags.emplace_back(attr, is_refusal(text));
  return macro_rate(flags, "refusal rate");
}

}  // namespace hallab::detect
